"""Command-line entry point: run, list and validate registry experiments.

Exit codes: 0 success, 2 invalid configuration, 3 failed embedded
assertion, 4 I/O failure.
"""

import argparse
import sys

from .config import parse_config_file, parse_override
from .errors import AssertionFailed, ConfigInvalid, IoFailure
from .experiments import build_config, list_experiments, run_experiment


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="proxsmooth",
        description="Smoothed-prox experiment runner")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment from a config file")
    run.add_argument("--config", required=True, help="flat key = value file")
    run.add_argument("--out", default=None,
                     help="output directory (overrides output_dir and "
                          "PROX_OUT_DIR)")
    run.add_argument("--seed", type=int, default=None,
                     help="RNG seed (overrides the config's seed key)")
    run.add_argument("overrides", nargs="*", metavar="key=value",
                     help="config overrides")

    lst = sub.add_parser("list", help="list registered experiments")
    lst.add_argument("--json", action="store_true", dest="as_json")
    lst.add_argument("filter", nargs="?", default=None,
                     help="substring filter on experiment names")

    val = sub.add_parser("validate",
                         help="check a config file without running it")
    val.add_argument("--config", required=True)
    return parser


def _print_result(result, stream):
    for check in result.checks:
        d = check.as_dict()
        print(f"{d['status']} {d['name']}: value={d['value']:.6g} "
              f"{d['op']} threshold={d['threshold']:.6g}", file=stream)
    for name in result.files:
        print(f"wrote {result.out_dir / name}", file=stream)
    print(f"wrote {result.out_dir / 'manifest.json'}", file=stream)


def _cmd_run(args):
    raw = parse_config_file(args.config)
    overrides = [parse_override(o) for o in args.overrides]
    config = build_config(raw, overrides=overrides, out=args.out,
                          seed=args.seed)
    try:
        result = run_experiment(config)
    except AssertionFailed as e:
        result = getattr(e, "result", None)
        if result is not None:
            _print_result(result, sys.stdout)
        print(f"assertion failed: {e}", file=sys.stderr)
        return 3
    _print_result(result, sys.stdout)
    return 0


def _cmd_validate(args):
    raw = parse_config_file(args.config)
    try:
        build_config(raw)
    except ConfigInvalid as e:
        for problem in e.problems or [str(e)]:
            print(problem, file=sys.stderr)
        return 2
    print("OK")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "validate":
            return _cmd_validate(args)
        print(list_experiments(as_json=args.as_json, filt=args.filter))
        return 0
    except ConfigInvalid as e:
        for problem in e.problems or [str(e)]:
            print(problem, file=sys.stderr)
        return 2
    except IoFailure as e:
        print(str(e), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
