from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Dict, List, Protocol, Sequence, Tuple, runtime_checkable

from .model import DependencyGraph, ReactionNetwork, SystemState
from .rng import RngStream

NO_EVENT = -1
"""Channel index returned by :meth:`EventSource.next_event` when no channel can fire"""


@dataclass(slots=True)
class StepCounters:
    """
    Instrumentation of one run. Every field is monotone nondecreasing between calls to :meth:`reset`.
    """

    steps: int = 0
    bins_scanned: int = 0
    entries_scanned: int = 0
    rejections: int = 0
    heap_swaps: int = 0
    heap_updates: int = 0
    rebuilds: int = 0
    moved_entries: int = 0
    propensity_updates: int = 0
    clamps: int = 0

    def reset(self) -> None:
        for f in fields(self):
            setattr(self, f.name, 0)

    def as_dict(self) -> Dict[str, int]:
        return asdict(self)

    def add(self, other: "StepCounters") -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    @property
    def search_depth(self) -> float:
        """Mean bins scanned plus entries scanned per step"""
        if self.steps == 0:
            return 0.0
        return (self.bins_scanned + self.entries_scanned) / self.steps


@runtime_checkable
class EventSource(Protocol):
    """
    Shared interface of every next-event generator. A source is driven by one simulation on one thread.

    The joint law of the successive ``(time, channel)`` pairs it produces is the exact law of the underlying jump
    process, whichever data structure is used.
    """

    counters: StepCounters

    def initialize(self, propensities: Sequence[float], t0: float, rng: RngStream) -> None: ...
    def next_event(self, t: float) -> Tuple[float, int]: ...
    def on_update(self, j: int, propensity: float, t: float) -> None: ...
    def resync(self, propensities: Sequence[float]) -> None: ...
    def audit(self) -> None: ...


def apply_event(
    source: EventSource, network: ReactionNetwork, graph: DependencyGraph, populations: List[int], j: int, t: float
) -> None:
    """
    Fire channel ``j`` at time ``t`` and push the new propensity of every affected channel into ``source``.
    """
    network.fire(j, populations)
    affects = graph.affects[j]
    counters = source.counters
    counters.steps += 1
    counters.propensity_updates += len(affects)
    prop = network.channel_propensity
    for i in affects:
        source.on_update(i, prop(i, populations), t)


def execute_step(
    source: EventSource,
    network: ReactionNetwork,
    graph: DependencyGraph,
    populations: List[int],
    t: float,
    t_limit: float = float("inf"),
) -> Tuple[float, int]:
    """
    Select the next event and, unless it lies beyond ``t_limit``, apply it.

    :return: The event time and channel. The channel is :data:`NO_EVENT` in an absorbing state. When the returned
             time exceeds ``t_limit`` nothing was applied.
    """
    time, j = source.next_event(t)
    if j == NO_EVENT or time > t_limit:
        return time, j
    apply_event(source, network, graph, populations, j, time)
    return time, j


def advance_state(
    source: EventSource, network: ReactionNetwork, graph: DependencyGraph, state: SystemState
) -> Tuple[SystemState, int]:
    """
    Execute one step from ``state`` and return the state at the event time, sharing ``state.populations``.

    :return: The new state and the fired channel, or the unchanged state and :data:`NO_EVENT`
    """
    time, j = execute_step(source, network, graph, state.populations, state.time)
    if j == NO_EVENT:
        return state, NO_EVENT
    return SystemState(state.populations, time), j


def direct_step(
    source: EventSource, network: ReactionNetwork, graph: DependencyGraph, state: SystemState
) -> Tuple[SystemState, int]:
    """
    One direct-method step: waiting time from the propensity sum, channel from the source's selection structure,
    then incremental propensity updates for the dependent channels.

    :param source: A linear, grouped or composition-rejection source
    :param network: The network
    :param graph: Its dependency graph
    :param state: Current state, mutated in place
    :return: The state at the new time and the fired channel, or the unchanged state and :data:`NO_EVENT` when the
             propensity sum is zero
    """
    return advance_state(source, network, graph, state)


def nrm_step(
    source: EventSource, network: ReactionNetwork, graph: DependencyGraph, state: SystemState
) -> Tuple[SystemState, int]:
    """
    One next-reaction step: fire the channel with the smallest absolute event time, then give every dependent
    channel (the fired one included) a fresh exponential event time from its new propensity.

    :param source: A heap or binned-table source
    :param network: The network
    :param graph: Its dependency graph
    :param state: Current state, mutated in place
    :return: The state at the new time and the fired channel, or the unchanged state and :data:`NO_EVENT`
    """
    return advance_state(source, network, graph, state)
