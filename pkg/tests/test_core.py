import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from modelprivacy.core import (
    FittedModel,
    LinearClassifierTarget,
    LinearTarget,
    LossFunction,
    PolynomialTarget,
    ProbClassifierTarget,
    QuerySet,
    ResponseKind,
    ResponseVector,
    UtilityBudget,
    empirical_utility_loss,
    evaluate_target,
)
from modelprivacy.errors import ConfigurationError

finite = st.floats(-1e3, 1e3, allow_nan=False)


class TestQuerySet:
    def test_vector_becomes_column(self):
        q = QuerySet(np.array([0.1, 0.2, 0.3]))
        assert (q.n, q.d) == (3, 1)

    def test_read_only(self):
        q = QuerySet(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            q.points[0, 0] = 1.0

    @pytest.mark.parametrize("bad", [np.zeros((0, 2)), np.array([[np.nan]]), np.array([[np.inf, 0.0]])])
    def test_rejects_empty_or_nonfinite(self, bad):
        with pytest.raises(ConfigurationError):
            QuerySet(bad)


class TestResponseVector:
    def test_probability_rows_must_sum_to_one(self):
        ResponseVector(np.array([[0.3, 0.7]]), ResponseKind.PROBABILITY)
        with pytest.raises(ConfigurationError):
            ResponseVector(np.array([[0.3, 0.6]]), ResponseKind.PROBABILITY)

    def test_labels_are_binary(self):
        with pytest.raises(ConfigurationError):
            ResponseVector(np.array([0.0, 2.0]), ResponseKind.LABEL)


class TestEvaluateTarget:
    quad = PolynomialTarget((1.0, -4.0, 4.0))

    @pytest.mark.parametrize("x, expected", [(0.5, 0.0), (0.0, 1.0), (1.0, 1.0)])
    def test_quadratic_values(self, x, expected):
        assert evaluate_target(self.quad, QuerySet([x])).values[0] == expected

    def test_linear_all_ones(self):
        beta = np.r_[np.full(15, 3.0), np.zeros(25)]
        out = evaluate_target(LinearTarget(beta), QuerySet(np.ones((1, 40))))
        assert out.values[0] == 45.0

    def test_dimension_mismatch(self):
        with pytest.raises(ConfigurationError):
            evaluate_target(LinearTarget(np.ones(3)), QuerySet(np.ones((2, 4))))

    def test_classifier_returns_labels(self):
        out = evaluate_target(LinearClassifierTarget(np.array([1.0, -1.0])), QuerySet([[0.2, 0.1], [0.1, 0.2]]))
        assert out.kind is ResponseKind.LABEL
        assert out.values.tolist() == [1.0, 0.0]

    def test_prob_classifier_rows_stochastic(self):
        rng = np.random.default_rng(3)
        model = ProbClassifierTarget(rng.normal(size=(4, 3)), rng.normal(size=4))
        out = evaluate_target(model, QuerySet(rng.normal(size=(50, 3))))
        np.testing.assert_allclose(out.values.sum(axis=1), 1.0, atol=1e-12)

    def test_zero_leading_coefficient_rejected(self):
        with pytest.raises(ConfigurationError):
            PolynomialTarget((1.0, 2.0, 0.0))

    def test_order(self):
        assert self.quad.order == 2


class TestUtilityLoss:
    def test_identical_is_zero(self):
        y = ResponseVector(np.arange(5.0))
        assert empirical_utility_loss(y, y) == 0.0

    def test_constant_half_shift(self):
        y = np.linspace(-1, 1, 9)
        assert empirical_utility_loss(ResponseVector(y), ResponseVector(y + 0.5)) == pytest.approx(0.25, rel=1e-12)

    def test_three_of_ten_flips(self):
        clean = np.zeros(10)
        flipped = clean.copy()
        flipped[[1, 4, 7]] = 1.0
        loss = empirical_utility_loss(ResponseVector(clean, "label"), ResponseVector(flipped, "label"))
        assert loss == pytest.approx(0.3)

    def test_length_mismatch(self):
        with pytest.raises(ConfigurationError):
            empirical_utility_loss(ResponseVector(np.zeros(3)), ResponseVector(np.zeros(4)))

    def test_incompatible_loss(self):
        y = ResponseVector(np.zeros(3))
        with pytest.raises(ConfigurationError):
            empirical_utility_loss(y, y, LossFunction.ZERO_ONE)


@given(arrays(float, 20, elements=finite), arrays(float, 20, elements=finite))
def test_squared_loss_symmetric_and_zero_on_diagonal(a, b):
    sq = LossFunction.SQUARED
    assert np.all(sq.pointwise(a, a) == 0)
    np.testing.assert_array_equal(sq.pointwise(a, b), sq.pointwise(b, a))


@given(arrays(float, 20, elements=st.sampled_from([0.0, 1.0])), arrays(float, 20, elements=st.sampled_from([0.0, 1.0])))
def test_zero_one_loss_is_binary_and_symmetric(a, b):
    z = LossFunction.ZERO_ONE.pointwise(a, b)
    assert set(np.unique(z)) <= {0.0, 1.0}
    np.testing.assert_array_equal(z, LossFunction.ZERO_ONE.pointwise(b, a))


def test_budget_guards():
    with pytest.raises(ConfigurationError):
        UtilityBudget(-0.1)
    with pytest.raises(ConfigurationError):
        UtilityBudget(1.5, LossFunction.ZERO_ONE)
    assert UtilityBudget.coerce(0.25).value == 0.25


def test_fitted_model_accepts_vector_input():
    f = FittedModel(lambda x: x[:, 0] * 2)
    np.testing.assert_array_equal(f(np.array([1.0, 2.0])), [2.0, 4.0])
