import json
import math
from concurrent.futures import ProcessPoolExecutor
from enum import Enum
from pathlib import Path
from typing import IO, List, NamedTuple, Optional, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from .binned import BinnedNRM, BinPolicy
from .direct import CompositionRejectionDirect, GroupedDirect, LinearDirect
from .event_source import NO_EVENT, EventSource, StepCounters, apply_event
from .heap import HeapNRM
from .model import (
    DependencyGraph,
    ReactionNetwork,
    SystemState,
    build_dependency_graph,
    compute_all_propensities,
)
from .rng import RngStream, split_seed
from .spatial import FlatRdme, NsmQueue, SpatialState, SubvolumeLayout


class Method(str, Enum):
    """Selectable exact SSA variants"""

    direct = "direct"
    direct2d = "direct2d"
    direct3d = "direct3d"
    cr = "cr"
    nrm_heap = "nrm-heap"
    nrm_bins = "nrm-bins"
    nsm = "nsm"


class OutputMode(str, Enum):
    interval = "interval"
    """Snapshot every ``interval`` seconds, including t0"""
    final = "final"
    """Single snapshot at ``t_final``"""
    counters = "counters"
    """No snapshots, instrumentation only"""


class RunConfig(BaseModel):
    """Parameters of one trajectory"""

    method: Method = Method.nrm_bins
    t_final: float = Field(gt=0)
    """Simulation end time in seconds"""
    seed: int = 1
    output: OutputMode = OutputMode.final
    interval: Optional[float] = Field(None, gt=0)
    """Snapshot spacing for ``output == interval``"""
    max_steps: int = Field(10**9, ge=1)
    """Safety cap; reaching it truncates the trajectory"""
    resync_interval: int = Field(10**6, ge=0)
    """Steps between exact recomputations of every propensity; 0 disables"""
    bin_policy: BinPolicy = Field(default_factory=BinPolicy)

    @model_validator(mode="after")
    def _check_interval(self):
        if self.output == OutputMode.interval and self.interval is None:
            raise ValueError("interval output needs an interval")
        return self


class SimulationModel(NamedTuple):
    """Everything a run needs besides its configuration"""

    network: ReactionNetwork
    initial_state: SystemState
    graph: DependencyGraph
    layout: Optional[SubvolumeLayout] = None
    """Block structure for the next-subvolume method; well-mixed models use a single block"""

    @staticmethod
    def from_network(network: ReactionNetwork, state: SystemState) -> "SimulationModel":
        return SimulationModel(network, state, build_dependency_graph(network))

    @staticmethod
    def from_flat(flat: FlatRdme, state: SpatialState) -> "SimulationModel":
        return SimulationModel(flat.network, state.to_system_state(), flat.graph, flat.model.layout)


class Trajectory(NamedTuple):
    """Sampled right-continuous trajectory of one run"""

    species: Tuple[str, ...]
    times: np.ndarray
    """Sample times, strictly increasing"""
    populations: np.ndarray
    """``(len(times), species)`` int64 array; row ``k`` is the state just after all events at ``times[k]``"""
    final_state: SystemState
    """State at ``final_time``"""
    step_count: int
    final_time: float
    absorbed: bool
    """No channel could fire before ``t_final``"""
    truncated: bool
    """``max_steps`` was reached before ``t_final``"""


def make_event_source(
    method: Method,
    channel_count: int,
    layout: Optional[SubvolumeLayout] = None,
    bin_policy: Optional[BinPolicy] = None,
    counters: Optional[StepCounters] = None,
) -> EventSource:
    """
    Construct the event source of a method.

    :param method: The method
    :param channel_count: Number of channels, used for the well-mixed next-subvolume layout
    :param layout: Subvolume block structure for ``nsm``
    :param bin_policy: Table sizing for ``nrm-bins``
    :param counters: Shared instrumentation
    """
    counters = counters if counters is not None else StepCounters()
    method = Method(method)
    if method == Method.direct:
        return LinearDirect(counters)
    if method == Method.direct2d:
        return GroupedDirect(2, counters)
    if method == Method.direct3d:
        return GroupedDirect(3, counters)
    if method == Method.cr:
        return CompositionRejectionDirect(counters)
    if method == Method.nrm_heap:
        return HeapNRM(counters)
    if method == Method.nrm_bins:
        return BinnedNRM(bin_policy, counters)
    return NsmQueue(layout if layout is not None else SubvolumeLayout.single(channel_count), counters)


def _sample_times(config: RunConfig, t0: float) -> List[float]:
    if config.output == OutputMode.final:
        return [config.t_final]
    if config.output == OutputMode.counters:
        return []
    n = math.floor((config.t_final - t0) / config.interval + 1e-9)
    return [t0 + k * config.interval for k in range(n + 1)]


def run(model: SimulationModel, config: RunConfig) -> Tuple[Trajectory, StepCounters]:
    """
    Simulate one trajectory from ``model.initial_state`` to ``config.t_final``.

    The same model, method and seed always produce the same trajectory and counters.

    :param model: The model
    :param config: Method, end time, seed and output
    :return: The sampled trajectory and the counters of the run
    """
    network, graph = model.network, model.graph
    counters = StepCounters()
    rng = RngStream(config.seed)
    source = make_event_source(config.method, network.channel_count, model.layout, config.bin_policy, counters)
    pops = list(model.initial_state.populations)
    t = model.initial_state.time
    source.initialize(compute_all_propensities(network, SystemState(pops, t)).values, t, rng)

    t_final = config.t_final
    sample_times = _sample_times(config, t)
    samples: List[List[int]] = []
    k = 0
    absorbed = truncated = False
    resync = config.resync_interval
    max_steps = config.max_steps
    while True:
        if counters.steps >= max_steps:
            truncated = True
            break
        time, j = source.next_event(t)
        if j == NO_EVENT:
            absorbed = True
            break
        if time > t_final:
            break
        while k < len(sample_times) and sample_times[k] < time:
            samples.append(list(pops))
            k += 1
        apply_event(source, network, graph, pops, j, time)
        t = time
        if resync and counters.steps % resync == 0:
            source.resync(compute_all_propensities(network, SystemState(pops, t)).values)
    if truncated:
        logger.warning(f"run truncated after {counters.steps} steps at t={t} before t_final={t_final}")
        sample_times = sample_times[:k]
        final_time = t
    else:
        final_time = t_final
        while k < len(sample_times):
            samples.append(list(pops))
            k += 1
    if absorbed:
        logger.info(f"absorbing state reached at t={t} after {counters.steps} steps")

    S = network.species_count
    trajectory = Trajectory(
        species=network.species_names,
        times=np.asarray(sample_times, dtype=float),
        populations=np.asarray(samples, dtype=np.int64).reshape(len(samples), S),
        final_state=SystemState(pops, final_time),
        step_count=counters.steps,
        final_time=final_time,
        absorbed=absorbed,
        truncated=truncated,
    )
    logger.debug(f"{config.method.value} run finished: {counters.as_dict()}")
    return trajectory, counters


class EnsembleResult(NamedTuple):
    """Moments of an ensemble at the common sample times"""

    species: Tuple[str, ...]
    times: np.ndarray
    mean: np.ndarray
    """``(len(times), species)`` sample mean"""
    variance: np.ndarray
    """Unbiased sample variance, zero for a single realization"""
    realizations: int
    sample_counts: np.ndarray
    """Realizations that reached each sample time; smaller than ``realizations`` only after truncation"""
    counters: StepCounters
    """Counters summed over all realizations"""
    truncated: int
    """Realizations that hit ``max_steps``"""


def _realization(args: Tuple[SimulationModel, RunConfig, int]) -> Tuple[np.ndarray, dict, bool]:
    model, config, k = args
    trajectory, counters = run(model, config.model_copy(update={"seed": split_seed(config.seed, k)}))
    return trajectory.populations, counters.as_dict(), trajectory.truncated


def run_ensemble(model: SimulationModel, config: RunConfig, n: int, workers: int = 1) -> EnsembleResult:
    """
    Run ``n`` independent realizations. Realization ``k`` uses seed ``split_seed(config.seed, k)``, so the result
    does not depend on ``workers``; sums are accumulated in exact integer arithmetic.

    :param model: The model
    :param config: Run parameters; ``output`` must produce samples
    :param n: Number of realizations
    :param workers: Worker processes, 1 runs in this process
    """
    if n < 1:
        raise ValueError(f"an ensemble needs at least one realization, got {n}")
    if config.output == OutputMode.counters:
        raise ValueError("an ensemble needs sampled output, not counters only")
    times = np.asarray(_sample_times(config, model.initial_state.time), dtype=float)
    S = model.network.species_count
    total = np.zeros((len(times), S), dtype=np.int64)
    total_sq = np.zeros((len(times), S), dtype=np.int64)
    reached = np.zeros(len(times), dtype=np.int64)
    pooled = StepCounters()
    truncated = 0
    jobs = [(model, config, k) for k in range(n)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_realization, jobs, chunksize=max(1, n // (4 * workers)))
            for pops, counts, trunc in results:
                truncated += _accumulate(total, total_sq, reached, pooled, pops, counts, trunc)
    else:
        for job in jobs:
            truncated += _accumulate(total, total_sq, reached, pooled, *_realization(job))
    if truncated:
        logger.warning(f"{truncated} of {n} realizations were truncated; their moments cover fewer samples")
    # rows no realization reached are nan; rows with one contributor have zero variance
    c = reached[:, None].astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(c > 0, total / np.maximum(c, 1.0), np.nan)
        variance = np.where(c > 1, (total_sq - total.astype(float) ** 2 / np.maximum(c, 1.0)) / (c - 1.0), 0.0)
    variance[reached == 0] = np.nan
    logger.info(f"ensemble of {n} realizations done, {pooled.steps} steps in total")
    return EnsembleResult(model.network.species_names, times, mean, variance, n, reached, pooled, truncated)


def _accumulate(
    total, total_sq, reached, pooled: StepCounters, pops: np.ndarray, counts: dict, trunc: bool
) -> int:
    rows = len(pops)
    total[:rows] += pops
    total_sq[:rows] += pops * pops
    reached[:rows] += 1
    pooled.add(StepCounters(**counts))
    return int(trunc)


def write_trajectory_csv(out: Union[str, Path, IO[str]], trajectory: Trajectory) -> None:
    """CSV with a ``t`` column followed by one column per species"""
    frame = pd.DataFrame(trajectory.populations, columns=list(trajectory.species))
    frame.insert(0, "t", trajectory.times)
    frame.to_csv(out, index=False)


def write_ensemble_csv(out: Union[str, Path, IO[str]], result: EnsembleResult) -> None:
    """CSV with a ``t`` column followed by ``<species>_mean`` and ``<species>_var`` per species"""
    frame = pd.DataFrame({"t": result.times})
    for s, name in enumerate(result.species):
        frame[f"{name}_mean"] = result.mean[:, s]
        frame[f"{name}_var"] = result.variance[:, s]
    frame.to_csv(out, index=False)


def write_counters(path: Union[str, Path], counters: StepCounters) -> None:
    """Flat JSON object of every counter"""
    Path(path).write_text(json.dumps(counters.as_dict(), indent=2) + "\n", encoding="utf-8")
