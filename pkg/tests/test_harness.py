import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modelprivacy.attackers import PolyGIC
from modelprivacy.defenses import ConstantNoising, IIDNoising, LongRangeNoising
from modelprivacy.errors import ConfigurationError
from modelprivacy.harness import (
    RAW_COLUMNS,
    ReplicateReport,
    SummaryRow,
    builtin_scenarios,
    export_figure_data,
    export_run,
    load_scenario,
    parse_config,
    raw_bytes,
    read_raw,
    read_summary,
    replicate_reports,
    run_scenario,
    summarize,
    write_raw,
)

TINY = """
[scenario]
schema_version = 1
id = tiny
n_values = 30
budgets = 0.25
replicates = 1
n_test = 200
seed = 0

[target]
kind = polynomial
coefficients = 1, -4, 4

[queries]
kind = beta
alpha = 1
beta = 3

[attack]
kind = poly_gic

[defense.iid]
kind = iid
"""


def with_scenario(**changes):
    lines = []
    for line in TINY.splitlines():
        key = line.split("=")[0].strip()
        lines.append(f"{key} = {changes.pop(key)}" if key in changes else line)
    return "\n".join(lines)


class TestParsing:
    def test_tiny(self):
        cfg = parse_config(TINY)
        assert cfg.scenario_id == "tiny"
        assert cfg.defenses == (("iid", IIDNoising()),)
        assert cfg.attack == PolyGIC()
        assert cfg.n_values == (30,) and cfg.budgets == (0.25,)

    def test_defense_parameters_are_typed(self):
        cfg = parse_config(TINY + "\n[defense.lr]\nkind = long_range\ngamma = 0.4\n[defense.c]\nkind = constant\nsign = -1\n")
        assert dict(cfg.defenses)["lr"] == LongRangeNoising(0.4)
        assert dict(cfg.defenses)["c"] == ConstantNoising(-1)

    @pytest.mark.parametrize(
        "text",
        [
            with_scenario(schema_version="2"),
            TINY.replace("schema_version = 1\n", ""),
            with_scenario(replicates="0"),
            with_scenario(n_values="0"),
            with_scenario(budgets="-1"),
            with_scenario(budgets="abc"),
            TINY.replace("[defense.iid]\nkind = iid", ""),
            TINY.replace("kind = iid", "kind = nonsense"),
            TINY.replace("kind = iid", "kind = iid\ncolour = red"),
            TINY.replace("kind = iid", "kind = long_range\ngamma = 1.5"),
            TINY.replace("kind = iid", "kind = mvp"),
            TINY.replace("kind = iid", "kind = label_flip"),
            TINY.replace("kind = iid", "kind = misleading_shift"),
            TINY.replace("kind = poly_gic", "kind = lasso"),
            TINY.replace("[attack]", "[attacks]"),
            TINY + "\n[extra]\nx = 1\n",
            "not an ini file",
        ],
    )
    def test_invalid(self, text):
        with pytest.raises(ConfigurationError):
            parse_config(text)

    def test_builtins_parse(self):
        names = builtin_scenarios()
        assert {"poly_vs_n", "poly_vs_u", "highdim_lasso", "highdim_enet", "knn_rates", "class_rates"} <= set(names)
        for name in names:
            load_scenario(name)

    def test_signal_budgets(self):
        cfg = load_scenario("highdim_lasso")
        assert cfg.budget_unit == "signal"
        assert cfg.absolute_budgets()[-1] == pytest.approx(0.5 * 676.35)

    def test_overrides_and_digest(self):
        cfg = parse_config(TINY)
        other = cfg.with_overrides(seed=5, replicates=3)
        assert (other.seed, other.replicates) == (5, 3)
        assert cfg.digest() == parse_config(TINY.replace("[target]", "; comment\n[target]")).digest()
        assert cfg.digest() != other.digest()


class TestRun:
    def test_one_cell_one_row(self, tmp_path):
        res = run_scenario(parse_config(TINY), tmp_path)
        rows = read_raw(tmp_path / "raw.csv")
        assert len(rows) == 1 and rows[0].error is None
        assert rows[0] == res.reports[0]
        assert read_summary(tmp_path / "summary.csv") == list(res.summary)

    def test_files_and_manifest(self, tmp_path):
        run_scenario(parse_config(TINY), tmp_path)
        for name in ("raw.csv", "summary.csv", "timings.csv", "config.ini", "manifest.json"):
            assert (tmp_path / name).exists()
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["seed"] == 0 and manifest["defenses"] == ["iid"]
        assert "wall_time" not in (tmp_path / "raw.csv").read_text().splitlines()[0]

    def test_rerun_byte_identical(self, tmp_path):
        cfg = parse_config(with_scenario(replicates="3", n_values="30, 60"))
        run_scenario(cfg, tmp_path / "a")
        run_scenario(cfg, tmp_path / "b")
        assert (tmp_path / "a" / "raw.csv").read_bytes() == (tmp_path / "b" / "raw.csv").read_bytes()

    def test_workers_do_not_change_rows(self):
        cfg = parse_config(with_scenario(replicates="2", n_values="30, 60"))
        assert raw_bytes(replicate_reports(cfg, 1)) == raw_bytes(replicate_reports(cfg, 2))

    def test_row_order(self):
        cfg = parse_config(with_scenario(n_values="30, 40") + "\n[defense.c]\nkind = constant\n")
        keys = [(r.n, r.defense) for r in replicate_reports(cfg)]
        assert keys == [(30, "iid"), (30, "c"), (40, "iid"), (40, "c")]


report_strategy = st.builds(
    ReplicateReport,
    scenario=st.sampled_from(["s1", "poly_vs_n"]),
    defense=st.sampled_from(["none", "iid", "long_range"]),
    n=st.integers(1, 10_000),
    budget=st.floats(0, 1e3, allow_nan=False),
    replicate=st.integers(0, 999),
    privacy=st.none() | st.floats(allow_nan=False, allow_infinity=False),
    utility_loss=st.none() | st.floats(0, 1e6),
    symdiff=st.none() | st.integers(0, 40),
    q_hat=st.none() | st.integers(0, 9),
    selected=st.none() | st.lists(st.integers(0, 39), min_size=1, unique=True).map(lambda v: ";".join(map(str, sorted(v)))),
    k=st.none() | st.integers(1, 500),
    lambda1=st.none() | st.floats(0, 1e4),
    lambda2=st.none() | st.floats(0, 1e4),
    shift=st.none() | st.floats(-1, 1),
    error=st.none() | st.text(st.characters(blacklist_categories=("Cs", "Cc")), min_size=1),
)


@settings(max_examples=50, deadline=None)
@given(st.lists(report_strategy, max_size=8))
def test_raw_csv_round_trip(tmp_path_factory, reports):
    path = tmp_path_factory.mktemp("raw") / "raw.csv"
    write_raw(path, reports)
    assert read_raw(path) == reports


def test_raw_columns():
    assert RAW_COLUMNS[:5] == ("scenario", "defense", "n", "budget", "replicate")


def summary_grid(defenses=("none", "iid", "long_range", "constant", "order_disguise"), ns=(20, 50, 100, 200, 500), budget=0.25):
    return [
        SummaryRow("poly_vs_n", d, n, budget, 100, 0, 0.1 * i + 1.0 / n, 0.01, budget, 0.0, None, None)
        for n in ns for i, d in enumerate(defenses)
    ]


class TestExport:
    def test_empty(self):
        with pytest.raises(ConfigurationError):
            export_figure_data([], "privacy_vs_n")

    def test_single_n(self):
        rows = export_figure_data(summary_grid(ns=(100,)), "privacy_vs_n")
        assert len(rows) == 5

    def test_full_grid(self, tmp_path):
        rows = export_figure_data(summary_grid(), "privacy_vs_n", tmp_path / "fig.csv")
        assert len(rows) == 25
        assert len((tmp_path / "fig.csv").read_text().splitlines()) == 26

    def test_missing_cells_named(self):
        grid = [r for r in summary_grid() if not (r.defense == "iid" and r.n == 50)]
        with pytest.raises(ConfigurationError, match=r"\('iid', 50\)"):
            export_figure_data(grid, "privacy_vs_n")

    def test_nan_mean_counts_as_missing(self):
        grid = summary_grid(ns=(100,))
        grid[0] = SummaryRow("poly_vs_n", "none", 100, 0.25, 3, 3, math.nan, math.nan, math.nan, math.nan, None, None)
        with pytest.raises(ConfigurationError):
            export_figure_data(grid, "privacy_vs_n")

    def test_other_axis_must_be_single(self):
        grid = summary_grid() + summary_grid(budget=0.5)
        with pytest.raises(ConfigurationError):
            export_figure_data(grid, "privacy_vs_n")

    def test_symdiff_needs_values(self):
        with pytest.raises(ConfigurationError):
            export_figure_data(summary_grid(), "symdiff_vs_n")

    def test_from_run_dir(self, tmp_path):
        run_scenario(parse_config(with_scenario(n_values="30, 60")), tmp_path)
        out = export_run(tmp_path, "privacy_vs_n")
        assert out.name == "figure_privacy_vs_n.csv"
        assert len(out.read_text().splitlines()) == 3


def test_summary_excludes_failures():
    ok = ReplicateReport("s", "iid", 10, 0.1, 0, privacy=1.0, utility_loss=0.1)
    bad = ReplicateReport("s", "iid", 10, 0.1, 1, error="FitError: boom")
    (row,) = summarize([ok, bad])
    assert (row.replicates, row.failures, row.privacy_mean) == (2, 1, 1.0)
