"""Command line entry point: ``aif-fl run|compare|grid --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiment import SpecError, parse_spec
from .fedsim import find_fixed_optimal
from .harness import compare_policies, run_experiment

log = logging.getLogger("aif_fl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aif-fl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("run", "run the configured experiment"),
        ("compare", "compare aif, random and fixed-optimal policies"),
        ("grid", "search the fixed-optimal configuration"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--repetitions", type=int, help="override repetitions")
        if name in ("compare", "grid"):
            p.add_argument("--horizon", type=int, default=None, help="rounds for the fixed-optimal search (default min(50, n_rounds))")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        spec = parse_spec(args.config)
        changes = {}
        if args.seed is not None:
            changes["base_seed"] = args.seed
        if args.repetitions is not None:
            changes["repetitions"] = args.repetitions
        if changes:
            spec = spec.replace(**changes)
    except SpecError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG

    try:
        if args.command == "run":
            summary = run_experiment(spec, args.out)
            log.info("mean cumulative fulfillment (both SLOs): %.4f", summary.mean_final("both"))
        elif args.command == "compare":
            table = compare_policies(spec, args.out, args.horizon)
            last = {}
            for row in table:
                last[row["policy"]] = row["mean_cum_both"]
            for name, value in last.items():
                log.info("%-7s final mean cumulative fulfillment: %.4f", name, value)
        else:
            horizon = args.horizon or min(50, spec.n_rounds)
            best = find_fixed_optimal(spec, horizon)
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / "fixed_optimal.txt").write_text(f"{best.batch_size} {best.learning_rate}\n")
            log.info("fixed optimal configuration: (%d, %g)", best.batch_size, best.learning_rate)
    except Exception:  # noqa: BLE001 - every runtime failure maps to exit code 2
        log.exception("run failed")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
