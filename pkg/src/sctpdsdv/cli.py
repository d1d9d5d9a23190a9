"""Command-line entry point.

    sctpdsdv simulate --config FILE|none --policy traditional|persistent|both
                      --seed N --reps N --out DIR
    sctpdsdv compare --a DIR --b DIR --out FILE
    sctpdsdv selftest

Exit status: 0 success, 1 configuration/usage error, 2 runtime error.
"""

import argparse
import logging
import sys
from pathlib import Path

from .errors import ConfigError
from .harness import AGGREGATE_CSV, load_config, run_campaign
from .metrics import gain_report, read_aggregate, write_comparison
from .policy import PolicyMode

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser():
    parser = _Parser(prog="sctpdsdv",
                     description="SCTP/DSDV cut-channel simulator: traditional vs "
                                 "extended persistent timeout policy")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a replication campaign")
    sim.add_argument("--config", default="none", help="config file, or 'none' for defaults")
    sim.add_argument("--policy", default="both",
                     choices=["traditional", "persistent", "both"])
    sim.add_argument("--seed", type=int, help="base seed (overrides config)")
    sim.add_argument("--reps", type=int, help="replications (overrides config)")
    sim.add_argument("--detect-latency", type=float,
                     help="channel-state detection delay in seconds (overrides config)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--jobs", type=int, default=1, help="worker processes")
    sim.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    cmp_ = sub.add_parser("compare", help="compare two aggregate result directories")
    cmp_.add_argument("--a", required=True, help="traditional results directory")
    cmp_.add_argument("--b", required=True, help="persistent results directory")
    cmp_.add_argument("--out", required=True, help="comparison CSV path")
    cmp_.add_argument("--no-figures", action="store_true")

    sub.add_parser("selftest", help="run the built-in conformance and oracle checks")
    return parser


def _simulate(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["base_seed"] = args.seed
    if args.reps is not None:
        changes["reps"] = args.reps
    if args.detect_latency is not None:
        changes["detect_latency"] = args.detect_latency
    if changes:
        cfg = cfg.replace(**changes)
    if args.policy == "both":
        policies = (PolicyMode.TRADITIONAL, PolicyMode.PERSISTENT)
    else:
        policies = (PolicyMode.parse(args.policy),)
    result = run_campaign(cfg, args.out, policies, workers=args.jobs,
                          figures=not args.no_figures)
    for name, path in result.paths.items():
        print(f"{name}: {path}")
    return EXIT_OK


def _pick(rows, policy):
    chosen = [r for r in rows if r.policy == policy.value]
    if chosen:
        return chosen
    if len({r.policy for r in rows}) <= 1:
        return rows
    raise ConfigError(f"no {policy} rows in aggregate file")


def _compare(args):
    a = _pick(read_aggregate(Path(args.a) / AGGREGATE_CSV), PolicyMode.TRADITIONAL)
    b = _pick(read_aggregate(Path(args.b) / AGGREGATE_CSV), PolicyMode.PERSISTENT)
    rows = gain_report(a, b)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_comparison(out, rows)
    print(f"comparison: {out}")
    if not args.no_figures:
        from .report import render_figures
        for name, path in render_figures(
                {PolicyMode.TRADITIONAL: a, PolicyMode.PERSISTENT: b}, out.parent).items():
            print(f"{name}: {path}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return exc.code or EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "simulate":
            return _simulate(args)
        if args.command == "compare":
            return _compare(args)
        from .selftest import run_selftest
        return EXIT_OK if run_selftest() else EXIT_RUNTIME
    except (ConfigError, FileNotFoundError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        logging.getLogger(__name__).debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
