"""Command-line entry point: ``modelprivacy {run,export,validate,list-scenarios}``.

Exit codes: 0 success, 2 invalid config, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigurationError, ModelPrivacyError
from .harness import FIGURES, builtin_scenarios, export_run, load_scenario, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("modelprivacy")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="modelprivacy", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log replicate failures and progress")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a scenario (INI path or built-in id)")
    run.add_argument("config")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")
    run.add_argument("--replicates", type=int, default=None, help="override the replicate count")
    run.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    run.add_argument("--out", default=None, help="output directory (default runs/<scenario id>)")

    exp = sub.add_parser("export", help="write figure_<id>.csv from a run directory")
    exp.add_argument("run_dir")
    exp.add_argument("figure_id", choices=sorted(FIGURES))
    exp.add_argument("--out", default=None, help="output file (default <run_dir>/figure_<id>.csv)")

    val = sub.add_parser("validate", help="check a scenario config without running it")
    val.add_argument("config")

    sub.add_parser("list-scenarios", help="list the built-in scenario ids")
    return p


def _run(args) -> int:
    config = load_scenario(args.config).with_overrides(seed=args.seed, replicates=args.replicates)
    out = args.out or config.out_dir or str(Path("runs") / config.scenario_id)
    result = run_scenario(config, out, jobs=args.jobs)
    failures = sum(r.error is not None for r in result.reports)
    print(f"{len(result.reports)} replicates ({failures} failed) written to {result.out_dir}")
    for row in result.summary:
        print(f"  {row.defense:>16s}  n={row.n:<5d} U={row.budget:<10.4g} privacy={row.privacy_mean:.4g} (se {row.privacy_se:.2g})")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        if args.command == "list-scenarios":
            for name, text in builtin_scenarios().items():
                first = text.splitlines()[0].lstrip("; ") if text.startswith(";") else ""
                print(f"{name:16s} {first}")
            return EXIT_OK
        if args.command == "validate":
            config = load_scenario(args.config)
            print(f"{config.scenario_id}: ok ({len(config.n_values)} n x {len(config.budgets)} U x "
                  f"{len(config.defenses)} defenses x {config.replicates} replicates)")
            return EXIT_OK
        if args.command == "run":
            if args.jobs < 1:
                raise ConfigurationError("--jobs must be >= 1")
            if args.replicates is not None and args.replicates < 1:
                raise ConfigurationError("--replicates must be >= 1")
            return _run(args)
        if args.command == "export":
            path = export_run(args.run_dir, args.figure_id, args.out)
            print(path)
            return EXIT_OK
    except ConfigurationError as exc:
        if args.command == "export":
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ModelPrivacyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
