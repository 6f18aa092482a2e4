import math
import platform
import socket
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from .binned import BinPolicy
from .engine import Method, make_event_source
from .event_source import NO_EVENT, EventSource, StepCounters, execute_step
from .model import DependencyGraph, SimulationError, compute_all_propensities
from .rng import RngStream
from .spatial import FlatRdme, elf_ehrenberg_model, flatten_rdme

OPTIMAL_BIN_WIDTH = math.sqrt(2.0)
"""Bin width, in mean step sizes, that minimizes the expected search depth"""
PRACTICAL_BIN_WIDTH = 16.0
"""Default bin width in mean step sizes"""


class SyntheticModel(NamedTuple):
    """Fixed propensities with a random dependency graph, for timing the event sources in isolation"""

    propensities: List[float]
    graph: DependencyGraph


def random_unit_rate_network(channels: int, out_degree: int, seed: int, rate: float = 1.0) -> SyntheticModel:
    """
    ``channels`` channels of equal propensity ``rate``. Channel ``j`` affects itself and ``out_degree - 1`` other
    channels drawn uniformly without replacement.

    :param channels: M
    :param out_degree: Affect list length, including the channel itself
    :param seed: Seed of the graph draw
    :param rate: Propensity of every channel
    """
    if not 1 <= out_degree <= channels:
        raise ValueError(f"out degree must lie in [1, {channels}], got {out_degree}")
    rng = np.random.default_rng(seed)
    others = out_degree - 1
    if others == 0:
        affects = [(j,) for j in range(channels)]
    else:
        own = np.arange(channels)[:, None]
        draws = rng.integers(0, channels - 1, size=(channels, others))
        draws += draws >= own
        ordered = np.sort(draws, axis=1)
        dup = np.flatnonzero((np.diff(ordered, axis=1) == 0).any(axis=1)) if others > 1 else []
        for j in dup:
            row = rng.choice(channels - 1, size=others, replace=False)
            ordered[j] = np.sort(row + (row >= j))
        full = np.sort(np.concatenate([ordered, own], axis=1), axis=1)
        affects = [tuple(row) for row in full.tolist()]
    return SyntheticModel([float(rate)] * channels, DependencyGraph(affects))


def bench_loop(source: EventSource, model: SyntheticModel, steps: int, t0: float = 0.0) -> float:
    """
    Drive an initialized source for ``steps`` selections, feeding every affected channel its unchanged propensity.

    :return: Simulation time after the last step
    """
    props = model.propensities
    affects = model.graph.affects
    counters = source.counters
    on_update = source.on_update
    next_event = source.next_event
    t = t0
    for _ in range(steps):
        t, j = next_event(t)
        if j == NO_EVENT:
            raise SimulationError("synthetic benchmark model reached an absorbing state")
        dep = affects[j]
        for i in dep:
            on_update(i, props[i], t)
        counters.steps += 1
        counters.propensity_updates += len(dep)
    return t


class BenchSpec(BaseModel):
    """One benchmark point"""

    method: Method = Method.nrm_bins
    channels: int = Field(ge=1)
    out_degree: int = Field(10, ge=1)
    steps: int = Field(10**6, ge=1)
    warmup: int = Field(1000, ge=0)
    seed: int = 1
    repetitions: int = Field(5, ge=1)
    rate: float = Field(1.0, gt=0)
    bin_policy: BinPolicy = Field(default_factory=BinPolicy)

    @model_validator(mode="after")
    def _check(self):
        if self.out_degree > self.channels:
            raise ValueError(f"out_degree {self.out_degree} exceeds the channel count {self.channels}")
        if self.steps < self.warmup:
            raise ValueError(f"steps {self.steps} must not be smaller than warmup {self.warmup}")
        return self


class BenchResult(BaseModel):
    """Timing and instrumentation of one benchmark point"""

    spec: BenchSpec
    elapsed_seconds: float
    """Median over repetitions of the timed loop"""
    elapsed_min: float
    elapsed_max: float
    counters: Dict[str, int]
    """Counters of the first repetition, warmup excluded"""
    host: str
    platform: str
    python: str
    timestamp: datetime

    @property
    def ns_per_step(self) -> float:
        return self.elapsed_seconds * 1e9 / self.spec.steps

    def per_step(self, name: str) -> float:
        return self.counters[name] / self.spec.steps

    @property
    def search_depth(self) -> float:
        return (self.counters["bins_scanned"] + self.counters["entries_scanned"]) / self.spec.steps

    @property
    def trials_per_selection(self) -> float:
        return (self.spec.steps + self.counters["rejections"]) / self.spec.steps

    @property
    def heap_swaps_per_update(self) -> float:
        updates = self.counters["propensity_updates"] + self.counters["heap_updates"]
        return self.counters["heap_swaps"] / updates if updates else 0.0

    def row(self) -> Dict[str, Union[str, int, float]]:
        """Flat CSV row"""
        return {
            "method": self.spec.method.value,
            "channels": self.spec.channels,
            "out_degree": self.spec.out_degree,
            "steps": self.spec.steps,
            "seed": self.spec.seed,
            "ns_per_step": self.ns_per_step,
            "elapsed_min": self.elapsed_min,
            "elapsed_max": self.elapsed_max,
            "search_depth": self.search_depth,
            "bins_scanned_per_step": self.per_step("bins_scanned"),
            "entries_scanned_per_step": self.per_step("entries_scanned"),
            "trials_per_selection": self.trials_per_selection,
            "heap_swaps_per_update": self.heap_swaps_per_update,
            "rebuilds": self.counters["rebuilds"],
            "host": self.host,
            "platform": self.platform,
            "python": self.python,
            "timestamp": self.timestamp.isoformat(),
        }


def _environment() -> Dict[str, str]:
    return {
        "host": socket.gethostname(),
        "platform": platform.platform(),
        "python": platform.python_version(),
    }


def bench_generator(spec: BenchSpec, model: Optional[SyntheticModel] = None) -> BenchResult:
    """
    Time the steady-state step cost of one method on a synthetic model. Only the step loop after warmup is timed;
    construction and initialization are excluded.

    :param spec: Benchmark point
    :param model: Prebuilt synthetic model; built from ``spec`` when omitted
    """
    if model is None:
        model = random_unit_rate_network(spec.channels, spec.out_degree, spec.seed, spec.rate)
    elapsed = []
    first: Optional[Dict[str, int]] = None
    for _ in range(spec.repetitions):
        counters = StepCounters()
        source = make_event_source(spec.method, spec.channels, bin_policy=spec.bin_policy, counters=counters)
        source.initialize(model.propensities, 0.0, RngStream(spec.seed))
        t = bench_loop(source, model, spec.warmup)
        counters.reset()
        start = time.perf_counter()
        bench_loop(source, model, spec.steps, t)
        elapsed.append(time.perf_counter() - start)
        if first is None:
            first = counters.as_dict()
    result = BenchResult(
        spec=spec,
        elapsed_seconds=float(np.median(elapsed)),
        elapsed_min=min(elapsed),
        elapsed_max=max(elapsed),
        counters=first,
        timestamp=datetime.now(timezone.utc),
        **_environment(),
    )
    logger.info(
        f"{spec.method.value} M={spec.channels}: {result.ns_per_step:.0f} ns/step, "
        f"search depth {result.search_depth:.2f}"
    )
    return result


def _write(frame: pd.DataFrame, csv_path: Optional[Union[str, Path]]) -> pd.DataFrame:
    if csv_path is not None:
        frame.to_csv(csv_path, index=False)
        logger.info(f"wrote {len(frame)} rows to {csv_path}")
    return frame


def sweep_bin_width(
    channels: int,
    widths: Sequence[float],
    steps: int,
    out_degree: int = 1,
    seed: int = 1,
    repetitions: int = 1,
    warmup: int = 1000,
    csv_path: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """
    Binned NRM at fixed bin widths, expressed in mean step sizes. Every propensity is ``1 / channels`` so the mean
    step size is one second. The theoretical optimum and the practical default are always included and flagged.
    """
    widths = sorted(set(float(w) for w in widths) | {OPTIMAL_BIN_WIDTH, PRACTICAL_BIN_WIDTH})
    model = random_unit_rate_network(channels, out_degree, seed, 1.0 / channels)
    rows = []
    for w in widths:
        spec = BenchSpec(
            channels=channels, out_degree=out_degree, steps=steps, warmup=min(warmup, steps), seed=seed,
            repetitions=repetitions, rate=1.0 / channels, bin_policy=BinPolicy(bin_width=w),
        )
        row = bench_generator(spec, model).row()
        row["bin_width"] = w
        row["optimal"] = w == OPTIMAL_BIN_WIDTH
        row["default"] = w == PRACTICAL_BIN_WIDTH
        rows.append(row)
    frame = pd.DataFrame(rows)
    best = frame.loc[frame["ns_per_step"].idxmin(), "bin_width"]
    if not 8.0 <= best <= 32.0:
        logger.warning(f"fastest bin width {best} lies outside [8, 32] mean steps on this machine")
    return _write(frame, csv_path)


def sweep_bins_and_width(
    channels: int,
    bin_counts: Sequence[int],
    widths: Sequence[float],
    steps: int,
    out_degree: int = 1,
    seed: int = 1,
    repetitions: int = 1,
    warmup: int = 1000,
    csv_path: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """Binned NRM over a grid of fixed bin counts and bin widths, widths in mean step sizes"""
    model = random_unit_rate_network(channels, out_degree, seed, 1.0 / channels)
    rows = []
    for k in bin_counts:
        for w in widths:
            spec = BenchSpec(
                channels=channels, out_degree=out_degree, steps=steps, warmup=min(warmup, steps), seed=seed,
                repetitions=repetitions, rate=1.0 / channels, bin_policy=BinPolicy(bin_width=w, bin_count=k),
            )
            row = bench_generator(spec, model).row()
            row["bin_count"] = k
            row["bin_width"] = w
            rows.append(row)
    frame = pd.DataFrame(rows)
    default_k = math.ceil(20 * math.sqrt(channels))
    if default_k in set(bin_counts):
        best = frame["ns_per_step"].min()
        at_default = frame.loc[frame["bin_count"] == default_k, "ns_per_step"].min()
        if at_default > 1.25 * best:
            logger.warning(f"K={default_k} is {at_default / best:.2f}x slower than the best grid point")
    return _write(frame, csv_path)


def sweep_scaling(
    methods: Sequence[Method],
    channel_counts: Sequence[int],
    steps: int,
    out_degree: int = 10,
    seed: int = 1,
    repetitions: int = 1,
    warmup: int = 1000,
    csv_path: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """Every method at every channel count; channel counts must be strictly ascending"""
    if any(b <= a for a, b in zip(channel_counts, channel_counts[1:])):
        raise ValueError(f"channel counts must be strictly ascending, got {list(channel_counts)}")
    rows = []
    for M in channel_counts:
        model = random_unit_rate_network(M, min(out_degree, M), seed)
        for method in methods:
            spec = BenchSpec(
                method=method, channels=M, out_degree=min(out_degree, M), steps=steps, warmup=min(warmup, steps),
                seed=seed, repetitions=repetitions,
            )
            rows.append(bench_generator(spec, model).row())
    return _write(pd.DataFrame(rows), csv_path)


def _drive(source: EventSource, flat: FlatRdme, pops: List[int], t: float, steps: int) -> float:
    network, graph = flat.network, flat.graph
    for _ in range(steps):
        t, j = execute_step(source, network, graph, pops, t)
        if j == NO_EVENT:
            raise SimulationError(f"spatial benchmark model reached an absorbing state at t={t}")
    return t


def sweep_spatial(
    methods: Sequence[Method],
    side_lengths: Sequence[float],
    steps: int,
    domain_side: float = 12.0,
    seed: int = 1,
    warmup: int = 1000,
    bin_policy: Optional[BinPolicy] = None,
    csv_path: Optional[Union[str, Path]] = None,
) -> pd.DataFrame:
    """
    Step cost of each method on the flattened bistable switch at several subvolume sizes. The model is built once
    per size and every method starts from the same state.
    """
    rows = []
    for side in side_lengths:
        spatial, state = elf_ehrenberg_model(domain_side, side, seed)
        flat = flatten_rdme(spatial)
        initial = state.to_system_state()
        propensities = compute_all_propensities(flat.network, initial).values
        for method in methods:
            counters = StepCounters()
            source = make_event_source(method, flat.network.channel_count, spatial.layout, bin_policy, counters)
            source.initialize(propensities, 0.0, RngStream(seed))
            pops = list(initial.populations)
            t = _drive(source, flat, pops, 0.0, min(warmup, steps))
            counters.reset()
            start = time.perf_counter()
            t = _drive(source, flat, pops, t, steps)
            elapsed = time.perf_counter() - start
            rows.append(
                {
                    "method": Method(method).value,
                    "subvolume": side,
                    "subvolumes": spatial.subvolume_count,
                    "channels": flat.network.channel_count,
                    "steps": steps,
                    "ns_per_step": elapsed * 1e9 / steps,
                    "search_depth": counters.search_depth,
                    "heap_updates_per_step": counters.heap_updates / steps,
                    "sim_time": t,
                    **_environment(),
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                }
            )
            logger.info(f"{Method(method).value} at l={side} um: {rows[-1]['ns_per_step']:.0f} ns/step")
    return _write(pd.DataFrame(rows), csv_path)
