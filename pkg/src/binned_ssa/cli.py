import argparse
import sys
from typing import List, Optional

import pandas as pd
from loguru import logger
from pydantic import ValidationError

from .bench import BenchSpec, bench_generator, sweep_bin_width, sweep_bins_and_width, sweep_scaling, sweep_spatial
from .binned import BinPolicy
from .engine import (
    Method,
    OutputMode,
    RunConfig,
    SimulationModel,
    run,
    run_ensemble,
    write_counters,
    write_ensemble_csv,
    write_trajectory_csv,
)
from .model import (
    SSAException,
    audit_dependency_graph,
    build_dependency_graph,
    builtin_model_names,
    lint_model,
    read_model,
)
from .plots import emit_plots
from .spatial import SpatialState, elf_ehrenberg_model, flatten_rdme, write_snapshot

METHODS = [m.value for m in Method]


class UsageError(SSAException):
    def __init__(self, message):
        super().__init__(message, 1)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> List[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> List[int]:
    return [int(float(x)) for x in text.split(",") if x]


def _methods(text: str) -> List[Method]:
    try:
        return [Method(x) for x in text.split(",") if x]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--method", choices=METHODS, default=Method.nrm_bins.value, help="SSA variant")
    p.add_argument("--tfinal", type=float, required=True, help="end time in seconds")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--max-steps", type=int, default=10**9, help="truncate the run after this many steps")
    p.add_argument("--resync", type=int, default=10**6, help="steps between exact propensity recomputations")


def _add_policy_flags(p: argparse.ArgumentParser):
    p.add_argument("--bin-width", type=float, default=None, help="fixed bin width in seconds (nrm-bins)")
    p.add_argument("--bins", type=int, default=None, help="fixed bin count (nrm-bins)")


def _policy(args) -> BinPolicy:
    return BinPolicy(bin_width=getattr(args, "bin_width", None), bin_count=getattr(args, "bins", None))


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="binned-ssa", description="Exact stochastic simulation of reaction networks")
    parser.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate one trajectory of a well-mixed model")
    p.add_argument("--model", required=True, help=f"model file or built-in model ({', '.join(builtin_model_names())})")
    _add_run_flags(p)
    _add_policy_flags(p)
    p.add_argument("--output", choices=[m.value for m in OutputMode], default=None)
    p.add_argument("--interval", type=float, default=None, help="snapshot spacing in seconds")
    p.add_argument("--out", default="-", help="trajectory CSV, '-' for stdout")
    p.add_argument("--counters", default=None, help="write the step counters as JSON to this path")

    p = sub.add_parser("ensemble", help="mean and variance over independent realizations")
    p.add_argument("--model", required=True)
    _add_run_flags(p)
    _add_policy_flags(p)
    p.add_argument("--interval", type=float, default=None)
    p.add_argument("--n", type=int, required=True, help="number of realizations")
    p.add_argument("--workers", type=int, default=1, help="worker processes")
    p.add_argument("--out", default="-")

    p = sub.add_parser("spatial", help="simulate the flattened spatial switch")
    p.add_argument("--domain", type=float, default=12.0, help="domain edge in um")
    p.add_argument("--subvolume", type=float, required=True, help="subvolume edge in um")
    p.add_argument("--model", choices=["elf-ehrenberg"], default="elf-ehrenberg")
    _add_run_flags(p)
    _add_policy_flags(p)
    p.add_argument("--out", default="-", help="final snapshot CSV, '-' for stdout")
    p.add_argument("--counters", default=None)

    p = sub.add_parser("benchmark", help="time one method on a synthetic unit-rate model")
    p.add_argument("--method", choices=METHODS, default=Method.nrm_bins.value)
    p.add_argument("--M", type=int, required=True, help="channel count")
    p.add_argument("--degree", type=int, default=10, help="dependency out-degree")
    p.add_argument("--steps", type=int, default=10**6)
    p.add_argument("--warmup", type=int, default=1000)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    _add_policy_flags(p)
    p.add_argument("--csv", default="-")

    p = sub.add_parser("sweep", help="benchmark sweeps")
    kinds = p.add_subparsers(dest="sweep", required=True)
    for name in ("width", "grid"):
        k = kinds.add_parser(name)
        k.add_argument("--M", type=int, default=10**5)
        k.add_argument("--widths", type=_floats, default=[0.5, 1, 2, 4, 8, 16, 32, 64], help="mean step sizes")
        if name == "grid":
            k.add_argument("--bins", type=_ints, required=True, help="comma separated bin counts")
    k = kinds.add_parser("scaling")
    k.add_argument("--methods", type=_methods, default=list(Method)[:-1])
    k.add_argument("--Ms", type=_ints, default=[10**3, 10**4, 10**5])
    k.add_argument("--degree", type=int, default=10)
    k = kinds.add_parser("spatial")
    k.add_argument("--methods", type=_methods, default=[Method.nsm, Method.nrm_bins, Method.nrm_heap])
    k.add_argument("--subvolumes", type=_floats, default=[2.0, 1.5, 1.0], help="subvolume edges in um")
    k.add_argument("--domain", type=float, default=12.0)
    for k in kinds.choices.values():
        k.add_argument("--steps", type=int, default=10**5)
        k.add_argument("--reps", type=int, default=1)
        k.add_argument("--seed", type=int, default=1)
        k.add_argument("--csv", required=True)

    p = sub.add_parser("validate", help="lint a model file and audit its dependency graph")
    p.add_argument("--model", required=True)

    p = sub.add_parser("plot", help="render a sweep CSV as SVG charts")
    p.add_argument("--csv", required=True)
    p.add_argument("--out-dir", default=".")
    return parser


def _config(args, output: OutputMode, interval: Optional[float] = None) -> RunConfig:
    return RunConfig(
        method=args.method,
        t_final=args.tfinal,
        seed=args.seed,
        output=output,
        interval=interval,
        max_steps=args.max_steps,
        resync_interval=args.resync,
        bin_policy=_policy(args),
    )


def _out(path: str):
    return sys.stdout if path == "-" else path


def _simulate(args) -> int:
    network, state = read_model(args.model)
    output = OutputMode(args.output) if args.output else (OutputMode.interval if args.interval else OutputMode.final)
    config = _config(args, output, args.interval)
    logger.info(f"simulate {args.model}: {config.model_dump_json()}")
    trajectory, counters = run(SimulationModel.from_network(network, state), config)
    if output != OutputMode.counters:
        write_trajectory_csv(_out(args.out), trajectory)
    if args.counters:
        write_counters(args.counters, counters)
    if output == OutputMode.counters and not args.counters:
        print(" ".join(f"{k}={v}" for k, v in counters.as_dict().items()))
    return 0


def _ensemble(args) -> int:
    network, state = read_model(args.model)
    output = OutputMode.interval if args.interval else OutputMode.final
    config = _config(args, output, args.interval)
    logger.info(f"ensemble of {args.n} on {args.model} with {args.workers} workers: {config.model_dump_json()}")
    result = run_ensemble(SimulationModel.from_network(network, state), config, args.n, args.workers)
    write_ensemble_csv(_out(args.out), result)
    return 0


def _spatial(args) -> int:
    spatial, state = elf_ehrenberg_model(args.domain, args.subvolume, args.seed)
    flat = flatten_rdme(spatial)
    config = _config(args, OutputMode.final)
    logger.info(f"spatial {args.model}, {flat.network.channel_count} channels: {config.model_dump_json()}")
    trajectory, counters = run(SimulationModel.from_flat(flat, state), config)
    final = SpatialState.from_system_state(trajectory.final_state, spatial.subvolume_count)
    write_snapshot(_out(args.out), spatial, final)
    if args.counters:
        write_counters(args.counters, counters)
    return 0


def _benchmark(args) -> int:
    spec = BenchSpec(
        method=args.method, channels=args.M, out_degree=args.degree, steps=args.steps, warmup=args.warmup,
        seed=args.seed, repetitions=args.reps, bin_policy=_policy(args),
    )
    logger.info(f"benchmark {spec.model_dump_json()}")
    result = bench_generator(spec)
    pd.DataFrame([result.row()]).to_csv(_out(args.csv), index=False)
    return 0


def _sweep(args) -> int:
    common = dict(steps=args.steps, seed=args.seed, csv_path=args.csv)
    if args.sweep == "width":
        sweep_bin_width(args.M, args.widths, repetitions=args.reps, **common)
    elif args.sweep == "grid":
        sweep_bins_and_width(args.M, args.bins, args.widths, repetitions=args.reps, **common)
    elif args.sweep == "scaling":
        sweep_scaling(args.methods, args.Ms, out_degree=args.degree, repetitions=args.reps, **common)
    else:
        sweep_spatial(args.methods, args.subvolumes, domain_side=args.domain, **common)
    return 0


def _validate(args) -> int:
    network, state = read_model(args.model)
    graph = build_dependency_graph(network)
    audit_dependency_graph(network, graph)
    for warning in lint_model(network, state):
        logger.warning(warning)
    print(
        f"species={network.species_count} channels={network.channel_count} "
        f"mean_out_degree={graph.mean_out_degree():.3f} ok"
    )
    return 0


def _plot(args) -> int:
    for path in emit_plots(args.csv, args.out_dir):
        print(path)
    return 0


_COMMANDS = {
    "simulate": _simulate,
    "ensemble": _ensemble,
    "spatial": _spatial,
    "benchmark": _benchmark,
    "sweep": _sweep,
    "validate": _validate,
    "plot": _plot,
}


def main(argv: Optional[List[str]] = None) -> int:
    """
    Command line entry point.

    :param argv: Arguments without the program name, defaults to ``sys.argv[1:]``
    :return: Exit code: 0 success, 1 usage error, 2 model error, 3 runtime error
    """
    logger.remove()
    logger.add(sys.stderr, level="INFO")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            logger.remove()
            logger.add(sys.stderr, level="DEBUG")
        return _COMMANDS[args.command](args)
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except ValidationError as e:
        logger.error(f"invalid configuration: {e}")
        return 1
    except SSAException as e:
        logger.error(str(e))
        return e.code
    except (ValueError, OSError) as e:
        logger.error(str(e))
        return 1 if isinstance(e, ValueError) else 3


if __name__ == "__main__":
    sys.exit(main())
