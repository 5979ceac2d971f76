"""``bench`` command line: single runs, parameter sweeps and trace synthesis."""

from __future__ import annotations

import argparse
import sys

from rfpkv.baselines import ParadigmKind
from rfpkv.bench.config import ConfigError, RunConfig
from rfpkv.bench.report import emit, render
from rfpkv.bench.sim import SWEEP_AXES, run, sweep
from rfpkv.errors import ProtocolError
from rfpkv.nic import ProfileError
from rfpkv.workload import WorkloadSpec, parse_distribution, synthesize_trace


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--paradigm", default="rfp", choices=["rfp", "server-reply", "bypass"])
    p.add_argument("--server-workers", type=int, default=4, metavar="N")
    p.add_argument("--clients", type=int, default=35, metavar="N")
    p.add_argument("--client-machines", type=int, default=7, metavar="N")
    p.add_argument("--key-count", type=int, default=1_000_000, metavar="N")
    p.add_argument("--value-size", type=int, default=32, metavar="B")
    p.add_argument("--key-size", type=int, default=16, metavar="B")
    p.add_argument("--get-frac", type=float, default=0.95, metavar="F")
    p.add_argument("--dist", default="uniform", metavar="{uniform|zipf:THETA}")
    p.add_argument("--rfs", type=int, default=36, metavar="B")
    p.add_argument("--ring-depth", type=int, default=8, metavar="N")
    p.add_argument("--ops", type=int, default=1_000_000, metavar="N")
    p.add_argument("--seed", type=int, default=1, metavar="S")
    p.add_argument("--worker-cpu-ns", type=float, default=200.0, metavar="NS")
    p.add_argument("--nic-profile", metavar="PATH")
    p.add_argument("--mode", default="sim", choices=["sim", "live"])
    p.add_argument("--trace", metavar="PATH")
    p.add_argument("--out", metavar="PATH", help="report file (default: stdout)")
    p.add_argument("--format", default="csv", choices=["csv", "json"])


def config_from_args(args) -> RunConfig:
    try:
        dist, theta = parse_distribution(args.dist)
        spec = WorkloadSpec(
            key_count=args.key_count, key_size=args.key_size, value_size=args.value_size,
            get_fraction=args.get_frac, distribution=dist, theta=theta, ops=args.ops,
            seed=args.seed,
        )
        return RunConfig(
            paradigm=ParadigmKind.parse(args.paradigm), server_workers=args.server_workers,
            client_threads=args.clients, client_machines=args.client_machines, rfs=args.rfs,
            ring_depth=args.ring_depth, workload=spec, trace=args.trace,
            nic_profile=args.nic_profile, mode=args.mode, duration_ops=args.ops,
            output=args.out, worker_cpu_ns=args.worker_cpu_ns,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _output(reports, args) -> None:
    if args.out:
        emit(reports, args.out, args.format)
    else:
        sys.stdout.write(render(reports, args.format))


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="one benchmark run")
    _add_run_flags(p_run)
    p_sweep = sub.add_parser("sweep", help="vary one parameter over a list of points")
    _add_run_flags(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--points", required=True, help="comma-separated values")
    p_trace = sub.add_parser("make-trace", help="write a synthetic key<TAB>value trace")
    p_trace.add_argument("path")
    p_trace.add_argument("--records", type=int, default=10_000)
    p_trace.add_argument("--seed", type=int, default=7)
    args = parser.parse_args(argv)

    try:
        if args.command == "make-trace":
            synthesize_trace(args.path, records=args.records, seed=args.seed)
            return 0
        config = config_from_args(args)
        config.load_nic_profile()
        if args.command == "run":
            reports = [run(config)]
        else:
            points = [p.strip() for p in args.points.split(",") if p.strip()]
            if not points:
                raise ConfigError("--points needs at least one value")
            reports = sweep(config, args.axis, points)
        _output(reports, args)
    except (ConfigError, ProfileError, ProtocolError, ValueError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"bench: I/O error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
