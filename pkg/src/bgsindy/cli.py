"""Command-line harness: run experiments, dump datasets, build curves.

Exit codes: 0 success, 1 user error (bad arguments or config),
2 runtime failure.
"""

from __future__ import annotations

import argparse
import sys

from bgsindy import experiment
from bgsindy.experiment import ConfigError
from bgsindy.systems import SYSTEMS, build_dataset, dump_dataset, get_system

EXIT_OK = 0
EXIT_USER_ERROR = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USER_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bgsindy", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid from a config file")
    run.add_argument("--config", required=True, help="YAML config path")
    run.add_argument("--threads", type=int, default=None,
                     help="worker processes (BGNLM_SINDY_THREADS overrides)")
    run.add_argument("--resume", action="store_true",
                     help="skip cells already completed in the manifest")

    sim = sub.add_parser("simulate", help="simulate one system and dump the dataset CSV")
    sim.add_argument("--system", required=True, choices=sorted(SYSTEMS))
    sim.add_argument("--out", required=True, help="output CSV path")
    sim.add_argument("--dt", type=float, default=1e-3)
    sim.add_argument("--horizon", type=float, default=5.0)
    sim.add_argument("--noise-sd", type=float, default=0.1)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--sizes", default="1000,1000,500",
                     help="train,insample,oos row counts")

    curves = sub.add_parser("curves", help="aggregate a metrics.csv into curves.csv")
    curves.add_argument("--in", dest="metrics", required=True, help="metrics.csv path")
    curves.add_argument("--out", required=True, help="curves.csv path")

    val = sub.add_parser("validate-config", help="check a config file and exit")
    val.add_argument("--config", required=True, help="YAML config path")
    return parser


def _cmd_run(args) -> int:
    try:
        config = experiment.load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_USER_ERROR
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR

    def progress(cid, status):
        print(f"[{status}] {cid}", flush=True)

    try:
        report = experiment.run_experiment(
            config, resume=args.resume, threads=args.threads, progress=progress
        )
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for note in report["missing"]:
        print(f"note: {note}", file=sys.stderr)
    print(f"metrics: {report['metrics']}")
    print(f"terms:   {report['terms']}")
    print(f"curves:  {report['curves']}")
    if report["failures"]:
        for cid, err in report["failures"]:
            print(f"failed cell {cid}: {err}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_simulate(args) -> int:
    try:
        sizes = tuple(int(v) for v in args.sizes.split(","))
        if len(sizes) != 3:
            raise ValueError
    except ValueError:
        print("error: --sizes must be three comma-separated integers", file=sys.stderr)
        return EXIT_USER_ERROR
    try:
        dataset = build_dataset(
            get_system(args.system),
            dt=args.dt,
            horizon=args.horizon,
            noise_sd=args.noise_sd,
            noise_seed=experiment.derive_seed(args.seed, "noise", args.system, 0, 0),
            split_sizes=sizes,
            split_seed=experiment.derive_seed(args.seed, "split", args.system, 0, 0),
        )
        dump_dataset(dataset, args.out)
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_curves(args) -> int:
    try:
        rows = experiment.read_metrics_csv(args.metrics)
    except FileNotFoundError:
        print(f"error: metrics file not found: {args.metrics}", file=sys.stderr)
        return EXIT_USER_ERROR
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if not rows:
        print("error: metrics file holds no rows", file=sys.stderr)
        return EXIT_USER_ERROR
    curve_rows, notes = experiment.emit_curves(rows)
    for note in notes:
        print(f"note: {note}", file=sys.stderr)
    try:
        experiment.write_curves_csv(args.out, curve_rows)
    except Exception as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    try:
        experiment.load_config(args.config)
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_USER_ERROR
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER_ERROR
    print("config OK")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USER_ERROR
    handlers = {
        "run": _cmd_run,
        "simulate": _cmd_simulate,
        "curves": _cmd_curves,
        "validate-config": _cmd_validate,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
