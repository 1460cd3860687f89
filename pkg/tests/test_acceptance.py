"""Exit criteria, each run once at master seed 0 with the shipped scenarios.

The conftest prints one PASS/FAIL line per criterion at the end of the run.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from modelprivacy.core import (
    LinearClassifierTarget,
    LinearTarget,
    PolynomialTarget,
    ProbClassifierTarget,
    QuerySet,
    empirical_utility_loss,
    evaluate_target,
)
from modelprivacy.defenses import (
    MVP,
    BoundaryShift,
    ConstantNoising,
    IIDNoising,
    LabelFlip,
    LongRangeNoising,
    MisleadingShift,
    OrderDisguise,
    defend,
)
from modelprivacy.evaluation import resolve_defense
from modelprivacy.harness import builtin_scenarios, load_scenario, raw_bytes, replicate_reports, summarize
from modelprivacy.noise import fgn_autocorrelation, hurst_from_gamma, sample_fgn
from modelprivacy.numerics import coordinate_descent_enet, ols_solve, project_onto_columns
from modelprivacy.targets import BetaDist, UniformCube, sample_queries, signal_second_moment

pytestmark = pytest.mark.slow


def run(name, **changes):
    cfg = load_scenario(name)
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    start = time.perf_counter()
    reports = replicate_reports(cfg)
    return cfg, reports, summarize(reports), time.perf_counter() - start


def cell(summary, defense, n=None, budget=None):
    (row,) = [r for r in summary if r.defense == defense and (n is None or r.n == n)
              and (budget is None or r.budget == budget)]
    return row


def pooled_se(a, b):
    return math.hypot(a.privacy_se, b.privacy_se)


@pytest.mark.acceptance(1)
def test_no_defense_steal(record_property):
    base = load_scenario("poly_vs_n")
    _, _, summary, elapsed = run("poly_vs_n", n_values=(20,), defenses=base.defenses[:1])
    row = cell(summary, "none")
    record_property("detail", f"n=20 mean privacy {row.privacy_mean:.2e}, {row.failures} failures, {elapsed:.1f}s")
    assert row.replicates == 100 and row.failures == 0
    assert row.privacy_mean <= 1e-8
    assert elapsed < 10


@pytest.fixture(scope="module")
def poly_n100():
    return run("poly_vs_n", n_values=(100,))


@pytest.mark.acceptance(2)
def test_defense_ordering(poly_n100, record_property):
    _, _, summary, elapsed = poly_n100
    order = ["none", "iid", "long_range", "constant", "order_disguise"]
    rows = [cell(summary, d) for d in order]
    gaps = [(b.privacy_mean - a.privacy_mean) / pooled_se(a, b) for a, b in zip(rows, rows[1:])]
    means = ", ".join(f"{d}={r.privacy_mean:.3f}" for d, r in zip(order, rows))
    record_property("detail", f"{means}; gaps in pooled SE {[round(g, 1) for g in gaps]}; {elapsed:.1f}s")
    assert all(r.replicates == 100 and r.failures == 0 for r in rows)
    assert all(g >= 1.0 for g in gaps)
    assert rows[-1].privacy_mean > 0.25
    assert elapsed < 120


@pytest.mark.acceptance(3)
def test_overfit_induction(poly_n100, record_property):
    _, reports, _, _ = poly_n100
    q = [r.q_hat for r in reports if r.defense == "order_disguise"]
    over = sum(v is not None and v > 2 for v in q)
    record_property("detail", f"q_hat > 2 in {over}/{len(q)} replicates")
    assert len(q) == 100
    assert over >= 95


@pytest.mark.acceptance(4)
def test_knn_rates(record_property):
    _, _, summary, elapsed = run("knn_rates")
    ns = [100, 200, 400, 800, 1600]
    clean = np.array([cell(summary, "none", n).privacy_mean for n in ns])
    slope = np.polyfit(np.log(ns), np.log(clean), 1)[0]
    const = [cell(summary, "constant", n).privacy_mean for n in ns]
    record_property("detail", f"no-defense slope {slope:.2f}; constant means {[round(c, 3) for c in const]}; {elapsed:.0f}s")
    assert -2.6 <= slope <= -1.4
    assert all(0.125 <= c <= 0.5 for c in const)
    assert elapsed < 300


@pytest.mark.acceptance(5)
def test_highdim_mvp(record_property):
    cfg, _, summary, elapsed = run("highdim_lasso")
    top = max(cfg.absolute_budgets())
    names = ["none", "iid", "constant", "long_range", "mvp"]
    rows = {d: cell(summary, d, budget=top) for d in names}
    var_f = signal_second_moment(cfg.target, cfg.queries)  # f* has mean zero here
    others = [d for d in names if d != "mvp"]
    record_property("detail", "U=%.1f: " % top + ", ".join(
        f"{d} {rows[d].privacy_mean:.1f}/{rows[d].symdiff_mean:.1f}" for d in names) + f" (privacy/symdiff); {elapsed:.0f}s")
    assert all(rows[d].privacy_mean < rows["mvp"].privacy_mean for d in others)
    assert all(rows[d].symdiff_mean < rows["mvp"].symdiff_mean for d in others)
    assert rows["none"].privacy_mean <= 0.05 * var_f
    assert elapsed < 180


@pytest.mark.acceptance(6)
def test_classification_trends(record_property):
    _, _, summary, elapsed = run("class_rates")
    ns = [250, 500, 1000, 2000]
    flip = [cell(summary, "label_flip", n).privacy_mean for n in ns]
    shift = [cell(summary, "boundary_shift", n).privacy_mean for n in ns]
    record_property("detail", f"flip {[round(v, 4) for v in flip]}; shift {[round(v, 3) for v in shift]}; {elapsed:.0f}s")
    assert flip[-1] <= 0.02
    assert all(0.1 <= v <= 0.4 for v in shift)
    assert elapsed < 120


@pytest.mark.acceptance(7)
def test_budget_exact_deterministic(record_property):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(30, 300))
        u = float(rng.uniform(0.01, 2.0))
        poly = PolynomialTarget(tuple(rng.normal(size=int(rng.integers(1, 4)))) + (float(rng.choice([-1, 1])),))
        q = sample_queries(BetaDist(1, 3), n, rng)
        clean = evaluate_target(poly, q)
        specs = [ConstantNoising(), ConstantNoising(-1), OrderDisguise(target_order=poly.order, max_order=poly.order + 2)]
        for spec in specs:
            got = empirical_utility_loss(clean, defend(spec, poly, q, u))
            worst = max(worst, abs(got - u) / u)
        beta = np.where(rng.random(12) < 0.5, rng.normal(size=12), 0.0)
        beta[0] = 1.0
        beta[-1] = 0.0
        lin = LinearTarget(beta)
        xq = QuerySet(rng.normal(size=(n, 12)))
        got = empirical_utility_loss(evaluate_target(lin, xq), defend(MVP(), lin, xq, u, seed=rng))
        worst = max(worst, abs(got - u) / u)
    record_property("detail", f"deterministic worst relative error {worst:.1e}")
    assert worst <= 1e-9


@pytest.mark.acceptance(7)
@pytest.mark.parametrize("spec", [IIDNoising(), LongRangeNoising(0.2), LabelFlip(), BoundaryShift()], ids=type)
def test_budget_stochastic(spec, record_property):
    u, n = 0.2, 100
    if isinstance(spec, (LabelFlip, BoundaryShift)):
        model, dist = LinearClassifierTarget(np.array([1.0, -1.0])), UniformCube(2)
        spec = resolve_defense(spec, model, dist, u, 0)
    else:
        model, dist = PolynomialTarget((1.0, -4.0, 4.0)), BetaDist(1, 3)
    losses = []
    for seed in range(1000):
        q = sample_queries(dist, n, seed)
        losses.append(empirical_utility_loss(evaluate_target(model, q), defend(spec, model, q, u, seed=10_000 + seed)))
    mean, se = np.mean(losses), np.std(losses, ddof=1) / math.sqrt(len(losses))
    record_property("detail", f"{type(spec).__name__} mean {mean:.4f} (U={u}, {abs(mean - u) / se:.1f} SE)")
    assert abs(mean - u) <= 3 * se


@pytest.mark.acceptance(8)
def test_oracle_equivalences(record_property):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(80, 6))
    y = X @ rng.normal(size=6) + 0.3 * rng.normal(size=80)
    cd_gap = np.max(np.abs(coordinate_descent_enet(X, y, 0.0, 0.0, standardize=False).coef - ols_solve(X, y)))

    phi, z = rng.normal(size=(50, 25)), rng.normal(size=50)
    brute = phi @ np.linalg.solve(phi.T @ phi, phi.T @ z)
    proj_gap = np.max(np.abs(project_onto_columns(phi, z) - brute))

    n, reps, h = 256, 1000, hurst_from_gamma(0.2)
    draws = np.stack([sample_fgn(n, h, 1.0, seed=s) for s in range(reps)])
    per_seed = np.stack([np.mean(draws[:, : n - k] * draws[:, k:], axis=1) for k in range(n)], axis=1)
    z_lag = np.abs(per_seed.mean(axis=0) - fgn_autocorrelation(np.arange(n), h)) / (
        per_seed.std(axis=0, ddof=1) / math.sqrt(reps))

    m = ProbClassifierTarget(rng.normal(size=(4, 3)), rng.normal(size=4))
    q = sample_queries(UniformCube(3), 500, 1)
    ms_gap = np.max(np.abs(defend(MisleadingShift(0.0), m, q, 0.0).values - m(q.points)))

    record_property("detail", f"cd-ols {cd_gap:.1e}, projection {proj_gap:.1e}, fGn worst lag {z_lag.max():.2f} SE, shift {ms_gap:.1e}")
    assert cd_gap <= 1e-6
    assert proj_gap <= 1e-9
    assert np.all(z_lag <= 3)
    assert ms_gap <= 1e-12


@pytest.mark.acceptance(9)
@pytest.mark.parametrize("name", sorted(builtin_scenarios()))
def test_determinism(name, record_property):
    cfg = load_scenario(name).with_overrides(replicates=2)
    first, second = raw_bytes(replicate_reports(cfg)), raw_bytes(replicate_reports(cfg))
    record_property("detail", f"{name} {len(first)} bytes")
    assert first == second
