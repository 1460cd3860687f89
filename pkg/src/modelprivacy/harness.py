"""Scenario configs, replicate orchestration, CSV persistence and figure-data export.

A scenario is an INI file::

    [scenario]
    schema_version = 1
    id = poly_vs_n
    n_values = 20, 50, 100
    budgets = 0.25
    budget_unit = absolute      ; or "signal": budgets are fractions of E[f*(X)^2]
    replicates = 100
    n_test = 1000
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
    criterion = aic

    [defense.iid]
    kind = iid

Every ``[defense.NAME]`` section adds one defense; rows are written in
(n, budget, defense, replicate) order with defenses in file order.
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import importlib.resources
import io
import json
import logging
import math
import os
import platform
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from . import __version__ as TOOLKIT_VERSION
from . import attackers, defenses
from .core import LinearClassifierTarget, LinearTarget, PolynomialTarget, TargetModel
from .errors import ConfigurationError
from .evaluation import mean_se, run_replicate
from .targets import (
    BetaDist,
    HighDimGrouped,
    QueryDistribution,
    StandardNormal,
    UniformCube,
    highdim_example1_beta,
    signal_second_moment,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

DEFENSE_KINDS = {
    "none": defenses.NoDefense,
    "iid": defenses.IIDNoising,
    "constant": defenses.ConstantNoising,
    "long_range": defenses.LongRangeNoising,
    "order_disguise": defenses.OrderDisguise,
    "mvp": defenses.MVP,
    "label_flip": defenses.LabelFlip,
    "boundary_shift": defenses.BoundaryShift,
    "random_shuffle": defenses.RandomShuffle,
    "misleading_shift": defenses.MisleadingShift,
}

ATTACK_KINDS = {
    "knn": attackers.KNN,
    "poly_gic": attackers.PolyGIC,
    "lasso": attackers.Lasso,
    "elastic_net": attackers.ElasticNet,
    "linear_erm": attackers.LinearClassERM,
}

QUERY_KINDS = {
    "beta": BetaDist,
    "uniform": UniformCube,
    "normal": StandardNormal,
    "highdim_grouped": HighDimGrouped,
}

# Defenses whose output is not a regression or hard-label response that the
# harness attackers can consume.
_UNSCORED_DEFENSES = (defenses.RandomShuffle, defenses.MisleadingShift)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------


def _parse_scalar(text: str) -> Any:
    t = text.strip()
    low = t.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for conv in (int, float):
        try:
            return conv(t)
        except ValueError:
            pass
    return t


def _parse_value(text: str) -> Any:
    if "," in text:
        return tuple(_parse_scalar(p) for p in text.split(",") if p.strip())
    return _parse_scalar(text)


def _coerce(value: Any, annotation: str) -> Any:
    if value is None:
        return None
    if annotation.startswith("tuple"):
        items = value if isinstance(value, tuple) else (value,)
        conv = float if "float" in annotation else int if "int" in annotation else (lambda v: v)
        return tuple(conv(v) for v in items)
    if isinstance(value, tuple):
        raise ConfigurationError(f"expected a single value, got a list {value!r}")
    if annotation.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigurationError(f"expected true/false, got {value!r}")
        return value
    if annotation.startswith("int"):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigurationError(f"expected an integer, got {value!r}")
        return int(value)
    if annotation.startswith("float"):
        if isinstance(value, (bool, str)):
            raise ConfigurationError(f"expected a number, got {value!r}")
        return float(value)
    return str(value)


def _build(kinds: dict[str, type], section: dict[str, str], where: str):
    params = dict(section)
    kind = params.pop("kind", None)
    if kind not in kinds:
        raise ConfigurationError(f"[{where}] kind must be one of {sorted(kinds)}, got {kind!r}")
    cls = kinds[kind]
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(params) - set(known))
    if unknown:
        raise ConfigurationError(f"[{where}] unknown keys for {kind}: {unknown}")
    try:
        kwargs = {k: _coerce(_parse_value(v), str(known[k].type)) for k, v in params.items()}
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"[{where}] {exc}") from exc


def _floats(text: str, where: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise ConfigurationError(f"{where}: {exc}") from exc
    if not vals:
        raise ConfigurationError(f"{where}: empty list")
    return vals


def _build_target(section: dict[str, str], dist: QueryDistribution) -> TargetModel:
    params = dict(section)
    kind = params.pop("kind", None)
    if kind == "polynomial":
        target = PolynomialTarget(_floats(params.pop("coefficients", ""), "[target] coefficients"))
    elif kind in ("linear", "linear_classifier"):
        preset = params.pop("preset", None)
        if preset == "highdim_example1":
            if not isinstance(dist, HighDimGrouped):
                raise ConfigurationError("preset highdim_example1 needs highdim_grouped queries")
            beta = highdim_example1_beta(dist)
        elif preset is None:
            beta = np.array(_floats(params.pop("beta", ""), "[target] beta"))
        else:
            raise ConfigurationError(f"unknown target preset {preset!r}")
        target = LinearTarget(beta) if kind == "linear" else LinearClassifierTarget(beta)
    else:
        raise ConfigurationError(f"[target] kind must be polynomial, linear or linear_classifier, got {kind!r}")
    if params:
        raise ConfigurationError(f"[target] unknown keys: {sorted(params)}")
    return target


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative description of one experiment grid."""

    scenario_id: str
    target: TargetModel
    queries: QueryDistribution
    attack: attackers.AttackSpec
    defenses: tuple[tuple[str, defenses.DefenseSpec], ...]
    n_values: tuple[int, ...]
    budgets: tuple[float, ...]
    replicates: int = 100
    n_test: int = 1000
    seed: int = 0
    budget_unit: str = "absolute"
    out_dir: str | None = None
    source: str = field(default="", compare=False, repr=False)

    def __post_init__(self):
        if not self.defenses:
            raise ConfigurationError("scenario needs at least one [defense.NAME] section")
        if len({name for name, _ in self.defenses}) != len(self.defenses):
            raise ConfigurationError("defense names must be unique")
        if not self.n_values or min(self.n_values) < 1:
            raise ConfigurationError("n_values must be non-empty positive integers")
        if not self.budgets or min(self.budgets) < 0:
            raise ConfigurationError("budgets must be non-empty and non-negative")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be >= 1")
        if self.n_test < 1:
            raise ConfigurationError("n_test must be >= 1")
        if self.budget_unit not in ("absolute", "signal"):
            raise ConfigurationError(f"budget_unit must be absolute or signal, got {self.budget_unit!r}")
        self._check_pairings()

    def _check_pairings(self):
        t, a = self.target, self.attack
        d = self.queries.d
        if isinstance(t, PolynomialTarget):
            if d != 1:
                raise ConfigurationError("polynomial targets need univariate queries")
            if not isinstance(a, (attackers.PolyGIC, attackers.KNN)):
                raise ConfigurationError("polynomial targets pair with poly_gic or knn attackers")
        elif isinstance(t, LinearClassifierTarget):
            if not isinstance(a, (attackers.LinearClassERM, attackers.KNN)):
                raise ConfigurationError("linear classifiers pair with linear_erm or knn attackers")
        elif isinstance(t, LinearTarget) and isinstance(a, (attackers.PolyGIC, attackers.LinearClassERM)):
            raise ConfigurationError("linear targets pair with lasso, elastic_net or knn attackers")
        if isinstance(t, (LinearTarget, LinearClassifierTarget)) and t.beta.size != d:
            raise ConfigurationError(f"target has {t.beta.size} coefficients but queries have d={d}")
        if isinstance(t, LinearClassifierTarget) and max(self.budgets) > 1:
            raise ConfigurationError("classification budgets must lie in [0, 1]")
        for name, spec in self.defenses:
            if isinstance(spec, _UNSCORED_DEFENSES):
                raise ConfigurationError(f"defense {name!r} returns probability vectors, which no harness attacker consumes")
            if isinstance(spec, (defenses.LabelFlip, defenses.BoundaryShift)) != isinstance(t, LinearClassifierTarget):
                if not isinstance(spec, defenses.NoDefense):
                    raise ConfigurationError(f"defense {name!r} does not fit a {type(t).__name__}")
            if isinstance(spec, defenses.OrderDisguise) and not isinstance(t, PolynomialTarget):
                raise ConfigurationError(f"defense {name!r} needs a polynomial target")
            if isinstance(spec, defenses.MVP) and not isinstance(t, LinearTarget):
                raise ConfigurationError(f"defense {name!r} needs a linear target")
            if isinstance(spec, defenses.BoundaryShift) and spec.shift is None and max(self.budgets) >= 0.5:
                raise ConfigurationError("boundary shift calibration needs budgets below 0.5")

    @property
    def defense_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.defenses)

    def absolute_budgets(self) -> tuple[float, ...]:
        if self.budget_unit == "absolute":
            return self.budgets
        scale = signal_second_moment(self.target, self.queries)
        return tuple(b * scale for b in self.budgets)

    def with_overrides(self, *, seed: int | None = None, replicates: int | None = None, out_dir: str | None = None):
        changes: dict[str, Any] = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if replicates is not None:
            changes["replicates"] = int(replicates)
        if out_dir is not None:
            changes["out_dir"] = str(out_dir)
        return dataclasses.replace(self, **changes) if changes else self

    def digest(self) -> str:
        """Hash of the parsed settings, independent of comments and key order."""
        payload = repr((self.scenario_id, self.target, self.queries, self.attack, self.defenses,
                        self.n_values, self.budgets, self.replicates, self.n_test, self.seed, self.budget_unit))
        return hashlib.sha256(payload.encode()).hexdigest()


def parse_config(text: str) -> ScenarioConfig:
    """Parse and validate an INI scenario description."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unreadable config: {exc}") from exc
    for name in ("scenario", "target", "queries", "attack"):
        if not cp.has_section(name):
            raise ConfigurationError(f"missing [{name}] section")
    sc = dict(cp["scenario"])
    version = sc.pop("schema_version", None)
    if version is None or _parse_scalar(version) != SCHEMA_VERSION:
        raise ConfigurationError(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    try:
        scenario_id = sc.pop("id")
        n_values = tuple(int(v) for v in sc.pop("n_values").split(","))
        budgets = _floats(sc.pop("budgets"), "[scenario] budgets")
        replicates = int(sc.pop("replicates", "100"))
        n_test = int(sc.pop("n_test", "1000"))
        seed = int(sc.pop("seed", "0"))
        unit = sc.pop("budget_unit", "absolute").strip()
        out_dir = sc.pop("out_dir", None)
    except KeyError as exc:
        raise ConfigurationError(f"[scenario] missing key {exc}") from exc
    except ValueError as exc:
        raise ConfigurationError(f"[scenario] {exc}") from exc
    if sc:
        raise ConfigurationError(f"[scenario] unknown keys: {sorted(sc)}")

    dist = _build(QUERY_KINDS, dict(cp["queries"]), "queries")
    target = _build_target(dict(cp["target"]), dist)
    attack = _build(ATTACK_KINDS, dict(cp["attack"]), "attack")
    defs = tuple(
        (sec.split(".", 1)[1], _build(DEFENSE_KINDS, dict(cp[sec]), sec))
        for sec in cp.sections()
        if sec.startswith("defense.")
    )
    extra = [s for s in cp.sections() if s not in ("scenario", "target", "queries", "attack") and not s.startswith("defense.")]
    if extra:
        raise ConfigurationError(f"unknown sections: {extra}")
    return ScenarioConfig(scenario_id, target, dist, attack, defs, n_values, budgets, replicates,
                          n_test, seed, unit, out_dir, source=text)


def load_config(path: str | os.PathLike) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def builtin_scenarios() -> dict[str, str]:
    """Shipped scenario configs, keyed by id."""
    root = importlib.resources.files("modelprivacy") / "scenarios"
    out = {}
    for entry in sorted(root.iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".ini"):
            out[entry.name[:-4]] = entry.read_text()
    return out


def load_scenario(name_or_path: str) -> ScenarioConfig:
    """A built-in scenario id, or a path to an INI file."""
    builtins = builtin_scenarios()
    if name_or_path in builtins and not Path(name_or_path).exists():
        return parse_config(builtins[name_or_path])
    return load_config(name_or_path)


# ---------------------------------------------------------------------------
# Reports and CSV
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReplicateReport:
    scenario: str
    defense: str
    n: int
    budget: float
    replicate: int
    privacy: float | None = None
    utility_loss: float | None = None
    symdiff: int | None = None
    q_hat: int | None = None
    selected: str | None = None
    k: int | None = None
    lambda1: float | None = None
    lambda2: float | None = None
    shift: float | None = None
    error: str | None = None
    wall_time: float = field(default=0.0, compare=False)


RAW_COLUMNS = tuple(f.name for f in dataclasses.fields(ReplicateReport) if f.name != "wall_time")
_INT_COLUMNS = {"n", "replicate", "symdiff", "q_hat", "k"}
_FLOAT_COLUMNS = {"budget", "privacy", "utility_loss", "lambda1", "lambda2", "shift"}


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    defense: str
    n: int
    budget: float
    replicates: int
    failures: int
    privacy_mean: float
    privacy_se: float
    utility_mean: float
    utility_se: float
    symdiff_mean: float | None
    symdiff_se: float | None


SUMMARY_COLUMNS = tuple(f.name for f in dataclasses.fields(SummaryRow))


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _unfmt(column: str, text: str) -> Any:
    if text == "":
        return None
    if column in _INT_COLUMNS:
        return int(text)
    if column in _FLOAT_COLUMNS:
        return float(text)
    return text


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def raw_bytes(reports: Sequence[ReplicateReport]) -> bytes:
    """The exact raw.csv content for ``reports``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RAW_COLUMNS)
    for r in reports:
        w.writerow([_fmt(getattr(r, c)) for c in RAW_COLUMNS])
    return buf.getvalue().encode()


def write_raw(path: str | os.PathLike, reports: Sequence[ReplicateReport]) -> None:
    Path(path).write_bytes(raw_bytes(reports))


def read_raw(path: str | os.PathLike) -> list[ReplicateReport]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RAW_COLUMNS:
            raise ConfigurationError(f"{path} does not have the raw.csv columns")
        return [ReplicateReport(**{c: _unfmt(c, row[c]) for c in RAW_COLUMNS}) for row in reader]


def write_summary(path: str | os.PathLike, rows: Sequence[SummaryRow]) -> None:
    _write_csv(Path(path), SUMMARY_COLUMNS, (dataclasses.astuple(r) for r in rows))


def read_summary(path: str | os.PathLike) -> list[SummaryRow]:
    ints = {"n", "replicates", "failures"}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != SUMMARY_COLUMNS:
            raise ConfigurationError(f"{path} does not have the summary.csv columns")
        out = []
        for row in reader:
            vals = {}
            for c in SUMMARY_COLUMNS:
                t = row[c]
                vals[c] = t if c in ("scenario", "defense") else None if t == "" else int(t) if c in ints else float(t)
            out.append(SummaryRow(**vals))
        return out


def summarize(reports: Sequence[ReplicateReport]) -> list[SummaryRow]:
    """Mean and standard error per (defense, n, budget) cell, in first-seen order."""
    cells: dict[tuple, list[ReplicateReport]] = defaultdict(list)
    for r in reports:
        cells[(r.scenario, r.defense, r.n, r.budget)].append(r)
    out = []
    for (scenario, defense, n, budget), rows in cells.items():
        ok = [r for r in rows if r.error is None]
        pm, ps = mean_se(r.privacy for r in ok)
        um, us = mean_se(r.utility_loss for r in ok)
        sd = [r.symdiff for r in ok if r.symdiff is not None]
        sm, ss = mean_se(sd) if sd else (None, None)
        out.append(SummaryRow(scenario, defense, n, budget, len(rows), len(rows) - len(ok), pm, ps, um, us, sm, ss))
    return out


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------


def _report(config: ScenarioConfig, name: str, spec, n: int, budget: float, replicate: int) -> ReplicateReport:
    start = time.perf_counter()
    s = run_replicate(config.target, spec, config.attack, config.queries, n, budget,
                      config.n_test, replicate, config.seed)
    meta = s.metadata
    selected = meta.get("selected")

    def opt(key, conv):
        return None if meta.get(key) is None else conv(meta[key])

    return ReplicateReport(
        scenario=config.scenario_id,
        defense=name,
        n=n,
        budget=float(budget),
        replicate=replicate,
        privacy=float(s.privacy) if s.ok else None,
        utility_loss=float(s.utility_loss) if s.ok else None,
        symdiff=None if s.symdiff is None else int(s.symdiff),
        q_hat=opt("q_hat", int),
        selected=None if selected is None else ";".join(str(int(j)) for j in sorted(selected)),
        k=opt("k", int),
        lambda1=opt("lambda1", float),
        lambda2=opt("lambda2", float),
        shift=opt("shift", float),
        error=s.error,
        wall_time=time.perf_counter() - start,
    )


def _run_cell(args) -> list[ReplicateReport]:
    config, name, spec, n, budget = args
    return [_report(config, name, spec, n, budget, r) for r in range(config.replicates)]


def replicate_reports(config: ScenarioConfig, jobs: int = 1) -> list[ReplicateReport]:
    """All replicate rows, ordered by (n, budget, defense, replicate) whatever the worker count."""
    if jobs < 1:
        raise ConfigurationError("jobs must be >= 1")
    cells = [
        (config, name, spec, n, budget)
        for n in config.n_values
        for budget in config.absolute_budgets()
        for name, spec in config.defenses
    ]
    if jobs == 1 or len(cells) == 1:
        chunks = [_run_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_cell, cells))
    return [r for chunk in chunks for r in chunk]


@dataclass(frozen=True)
class ScenarioResult:
    reports: tuple[ReplicateReport, ...]
    summary: tuple[SummaryRow, ...]
    out_dir: Path | None


def run_scenario(config: ScenarioConfig, out_dir: str | os.PathLike | None = None, jobs: int = 1) -> ScenarioResult:
    """Run the full (n, budget, defense, replicate) grid and write its files.

    Writes raw.csv, summary.csv, timings.csv, config.ini and manifest.json
    into ``out_dir`` (or ``config.out_dir``).  Nothing is written when
    neither is set.
    """
    start = time.perf_counter()
    reports = replicate_reports(config, jobs)
    summary = summarize(reports)
    target_dir = out_dir if out_dir is not None else config.out_dir
    path = None
    if target_dir is not None:
        path = Path(target_dir)
        path.mkdir(parents=True, exist_ok=True)
        write_raw(path / "raw.csv", reports)
        write_summary(path / "summary.csv", summary)
        _write_csv(path / "timings.csv", ("defense", "n", "budget", "replicate", "wall_time"),
                   ((r.defense, r.n, r.budget, r.replicate, r.wall_time) for r in reports))
        if config.source:
            (path / "config.ini").write_text(config.source)
        manifest = {
            "scenario": config.scenario_id,
            "config_sha256": config.digest(),
            "seed": config.seed,
            "replicates": config.replicates,
            "defenses": list(config.defense_names),
            "budgets": list(config.absolute_budgets()),
            "budget_unit": config.budget_unit,
            "failures": sum(r.error is not None for r in reports),
            "toolkit_version": TOOLKIT_VERSION,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "jobs": jobs,
            "wall_time_seconds": time.perf_counter() - start,
        }
        (path / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return ScenarioResult(tuple(reports), tuple(summary), path)


# ---------------------------------------------------------------------------
# Figure data
# ---------------------------------------------------------------------------

FIGURES = {
    "privacy_vs_n": ("privacy", "n"),
    "privacy_vs_u": ("privacy", "budget"),
    "utility_vs_n": ("utility", "n"),
    "utility_vs_u": ("utility", "budget"),
    "symdiff_vs_n": ("symdiff", "n"),
    "symdiff_vs_u": ("symdiff", "budget"),
}


def export_figure_data(summary: Sequence[SummaryRow], figure_id: str, path: str | os.PathLike | None = None) -> list[tuple]:
    """Rows (x, defense, mean, se) for one figure, optionally written as CSV.

    The axis that is not plotted must take a single value.  Every defense
    needs a finite mean at every x; otherwise the error names the absent
    (defense, x) pairs.
    """
    if figure_id not in FIGURES:
        raise ConfigurationError(f"unknown figure {figure_id!r}; choose from {sorted(FIGURES)}")
    if not summary:
        raise ConfigurationError("summary is empty")
    metric, axis = FIGURES[figure_id]
    other = "budget" if axis == "n" else "n"
    fixed = {getattr(r, other) for r in summary}
    if len(fixed) > 1:
        raise ConfigurationError(f"{figure_id} needs a single {other} value, summary has {sorted(fixed)}")
    defenses_seen = list(dict.fromkeys(r.defense for r in summary))
    xs = sorted({getattr(r, axis) for r in summary})
    cells = {(r.defense, getattr(r, axis)): r for r in summary}
    rows, missing = [], []
    for d in defenses_seen:
        for x in xs:
            r = cells.get((d, x))
            mean = None if r is None else getattr(r, f"{metric}_mean")
            if mean is None or not math.isfinite(mean):
                missing.append((d, x))
                continue
            rows.append((x, d, mean, getattr(r, f"{metric}_se")))
    if missing:
        raise ConfigurationError(f"{figure_id}: missing cells (defense, x): {missing}")
    if path is not None:
        _write_csv(Path(path), ("x", "defense", "mean", "se"), rows)
    return rows


def export_run(run_dir: str | os.PathLike, figure_id: str, out: str | os.PathLike | None = None) -> Path:
    run_dir = Path(run_dir)
    summary = read_summary(run_dir / "summary.csv")
    target = Path(out) if out is not None else run_dir / f"figure_{figure_id}.csv"
    export_figure_data(summary, figure_id, target)
    return target
