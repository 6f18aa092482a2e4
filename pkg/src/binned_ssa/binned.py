import math
from typing import List, Optional, Sequence, Tuple

from loguru import logger
from pydantic import BaseModel, Field

from .event_source import NO_EVENT, StepCounters
from .model import ExactnessError
from .rng import RngStream

OVERFLOW = -1
"""Pseudo-bin of an event time at or beyond the end of the window"""


class BinPolicy(BaseModel):
    """
    How the binned event table sizes itself on every rebuild.

    By default the bin width is ``width_factor`` mean step sizes and the bin count is
    ``bins_factor * sqrt(active channels)``. ``bin_width`` and ``bin_count`` fix either value, which the
    benchmark sweeps use.
    """

    width_factor: float = Field(16.0, gt=0)
    """Bin width in units of the estimated mean step size"""
    bins_factor: float = Field(20.0, gt=0)
    """Bin count in units of the square root of the active channel count"""
    min_steps_for_estimate: int = Field(100, ge=1)
    """Steps since the last rebuild needed before the elapsed time is used to estimate the mean step"""
    bin_width: Optional[float] = Field(None, gt=0)
    """Fixed bin width in seconds"""
    bin_count: Optional[int] = Field(None, ge=1)
    """Fixed number of bins"""
    rebuild_trigger_ratio: Optional[float] = Field(None, gt=1)
    """Rebuild early when the active channel count changes by more than this factor since the last rebuild"""


class BinnedEventTable:
    """
    Absolute event times of all channels, bucketed into ``bin_count`` bins of width ``bin_width`` starting at
    ``lower_bound``. A channel is stored in bin ``i`` exactly when its propensity is positive and
    ``compute_bin_index`` of its event time is ``i``. Times beyond the window are remembered but not stored;
    they are placed on the next rebuild.

    Selection scans forward from the first possibly nonempty bin, then scans that bin's entries for the minimum.
    The selected entry stays in place; the caller must update it.

    :param channel_count: Number of channels
    :param policy: Sizing rules
    :param counters: Receives ``bins_scanned``, ``entries_scanned``, ``rebuilds`` and ``moved_entries``
    """

    def __init__(self, channel_count: int, policy: Optional[BinPolicy] = None, counters: Optional[StepCounters] = None):
        self.policy = policy if policy is not None else BinPolicy()
        self.counters = counters if counters is not None else StepCounters()
        M = channel_count
        self.event_time: List[float] = [math.inf] * M
        self.propensity: List[float] = [0.0] * M
        self.bin_of: List[int] = [OVERFLOW] * M
        self.slot_of: List[int] = [-1] * M
        self.lower_bound = 0.0
        self.bin_width = 1.0
        self.bin_count = 1
        self.bins: List[List[int]] = [[]]
        self.min_bin = 0
        self.active_count = 0
        self.stored_count = 0
        self.steps_since_rebuild = 0
        self.rebuild_t0 = 0.0
        self.active_at_rebuild = 0

    def build(self, propensities: Sequence[float], event_times: Sequence[float], t0: float) -> None:
        """
        Load every channel and size the table for the start of a run, with bin width ``width_factor / a0``.
        """
        self.propensity = list(propensities)
        self.event_time = list(event_times)
        self.active_count = sum(1 for a in self.propensity if a > 0.0)
        self.lower_bound = t0
        self.rebuild(t0)
        # the initial sizing is not a rebuild
        self.counters.rebuilds -= 1

    def compute_bin_index(self, time: float) -> int:
        """
        Bin of an absolute event time, or :data:`OVERFLOW` when the time is at or past the end of the window.

        :raises ExactnessError: if ``time`` precedes the window
        """
        offset = time - self.lower_bound
        if offset < 0.0:
            raise ExactnessError(f"event time {time} precedes the table window starting at {self.lower_bound}")
        if time == math.inf:
            return OVERFLOW
        i = int(offset / self.bin_width)
        return i if i < self.bin_count else OVERFLOW

    def _append(self, j: int, i: int):
        b = self.bins[i]
        self.bin_of[j] = i
        self.slot_of[j] = len(b)
        b.append(j)
        self.stored_count += 1

    def _remove(self, j: int, i: int):
        b = self.bins[i]
        slot = self.slot_of[j]
        last = b.pop()
        if last != j:
            b[slot] = last
            self.slot_of[last] = slot
        self.bin_of[j] = OVERFLOW
        self.slot_of[j] = -1
        self.stored_count -= 1

    def insert(self, j: int, time: float, propensity: Optional[float] = None) -> None:
        """
        Record the event time of an unstored channel and file it if it falls inside the window.

        :raises ExactnessError: if ``j`` is already stored
        """
        if self.bin_of[j] != OVERFLOW:
            raise ExactnessError(f"channel {j} is already stored in bin {self.bin_of[j]}")
        if propensity is not None:
            self.active_count += (propensity > 0.0) - (self.propensity[j] > 0.0)
            self.propensity[j] = propensity
        self.event_time[j] = time
        i = self.compute_bin_index(time)
        if i != OVERFLOW and self.propensity[j] > 0.0:
            self._append(j, i)

    def update(self, j: int, time: float, propensity: Optional[float] = None) -> None:
        """
        Give channel ``j`` a new event time. An entry that stays in the same bin is overwritten in place; otherwise
        it is swap-removed from its old bin and appended to the new one.
        """
        if propensity is not None:
            self.active_count += (propensity > 0.0) - (self.propensity[j] > 0.0)
            self.propensity[j] = propensity
        new_bin = self.compute_bin_index(time) if self.propensity[j] > 0.0 else OVERFLOW
        self.event_time[j] = time
        old_bin = self.bin_of[j]
        if new_bin == old_bin:
            return
        if old_bin != OVERFLOW:
            self._remove(j, old_bin)
            if new_bin != OVERFLOW:
                self.counters.moved_entries += 1
        if new_bin != OVERFLOW:
            self._append(j, new_bin)

    def mean_step_estimate(self, t_now: float) -> Optional[float]:
        """
        Elapsed time per step since the last rebuild once enough steps have been taken, otherwise the reciprocal of
        the exactly summed current propensities. ``None`` when every propensity is zero.
        """
        steps = self.steps_since_rebuild
        if steps >= self.policy.min_steps_for_estimate and t_now > self.rebuild_t0:
            return (t_now - self.rebuild_t0) / steps
        a0 = math.fsum(self.propensity)
        return 1.0 / a0 if a0 > 0.0 else None

    def rebuild(
        self, t_now: float, active_count: Optional[int] = None, mean_step_estimate: Optional[float] = None
    ) -> None:
        """
        Move the window to start at ``t_now``, resize it and refile every channel.

        :param t_now: New lower bound; must not precede the current one
        :param active_count: Channels with positive propensity, defaults to the tracked count
        :param mean_step_estimate: Mean step size, defaults to :meth:`mean_step_estimate`
        """
        if t_now < self.lower_bound:
            raise ExactnessError(f"rebuild at {t_now} precedes the current window start {self.lower_bound}")
        policy = self.policy
        if active_count is None:
            active_count = self.active_count
        if mean_step_estimate is None:
            mean_step_estimate = self.mean_step_estimate(t_now)
        if policy.bin_width is not None:
            width = policy.bin_width
        elif mean_step_estimate is not None:
            width = policy.width_factor * mean_step_estimate
        else:
            width = self.bin_width
        if policy.bin_count is not None:
            count = policy.bin_count
        else:
            count = max(1, math.ceil(policy.bins_factor * math.sqrt(max(active_count, 1))))
        self.lower_bound = t_now
        self.bin_width = width
        self.bin_count = count
        self.bins = [[] for _ in range(count)]
        M = len(self.event_time)
        self.bin_of = [OVERFLOW] * M
        self.slot_of = [-1] * M
        self.stored_count = 0
        self.min_bin = 0
        self.steps_since_rebuild = 0
        self.rebuild_t0 = t_now
        self.active_at_rebuild = active_count
        propensity = self.propensity
        for j, time in enumerate(self.event_time):
            if propensity[j] > 0.0 and time != math.inf:
                i = self.compute_bin_index(time)
                if i != OVERFLOW:
                    self._append(j, i)
        self.counters.rebuilds += 1
        logger.debug(f"rebuilt event table at t={t_now}: {count} bins of width {width}, {self.stored_count} stored")

    def _advance_window(self, t_now: float) -> bool:
        self.rebuild(t_now)
        if self.stored_count > 0:
            return True
        finite = [time for j, time in enumerate(self.event_time) if self.propensity[j] > 0.0 and time != math.inf]
        if not finite:
            return False
        # the whole window was empty: jump straight to the earliest pending event
        self.rebuild(min(finite))
        return True

    def _needs_early_rebuild(self) -> bool:
        ratio = self.policy.rebuild_trigger_ratio
        if ratio is None or self.active_at_rebuild == 0:
            return False
        return self.active_count > ratio * self.active_at_rebuild or self.active_count * ratio < self.active_at_rebuild

    def select_next(self, t_now: float) -> Tuple[float, int]:
        """
        Smallest stored event time and its channel. Rebuilds the table at ``t_now`` when the scan runs off the end
        of the window.

        :return: ``(time, channel)`` or ``(inf, NO_EVENT)`` when no channel can fire
        """
        if self._needs_early_rebuild():
            self.rebuild(t_now)
        bins = self.bins
        K = self.bin_count
        i = self.min_bin
        scanned = 0
        while True:
            if i >= K:
                self.counters.bins_scanned += scanned
                scanned = 0
                if not self._advance_window(t_now):
                    return math.inf, NO_EVENT
                bins = self.bins
                K = self.bin_count
                i = 0
                continue
            scanned += 1
            if bins[i]:
                break
            i += 1
        self.min_bin = i
        b = bins[i]
        event_time = self.event_time
        best = b[0]
        best_time = event_time[best]
        for j in b:
            tj = event_time[j]
            if tj < best_time:
                best, best_time = j, tj
        counters = self.counters
        counters.bins_scanned += scanned
        counters.entries_scanned += len(b)
        self.steps_since_rebuild += 1
        return best_time, best

    def audit(self) -> None:
        """
        :raises ExactnessError: if any storage, locator or window invariant is broken
        """
        stored = 0
        for i, b in enumerate(self.bins):
            if b and i < self.min_bin:
                raise ExactnessError(f"bin {i} is below min_bin {self.min_bin} but not empty")
            for slot, j in enumerate(b):
                if self.bin_of[j] != i or self.slot_of[j] != slot:
                    raise ExactnessError(f"locator of channel {j} does not point to bin {i} slot {slot}")
                stored += 1
        if stored != self.stored_count:
            raise ExactnessError(f"stored count {self.stored_count} but {stored} entries in bins")
        active = 0
        for j, (a, time) in enumerate(zip(self.propensity, self.event_time)):
            active += a > 0.0
            expected = self.compute_bin_index(time) if a > 0.0 else OVERFLOW
            if self.bin_of[j] != expected:
                raise ExactnessError(f"channel {j} at time {time} sits in bin {self.bin_of[j]}, expected {expected}")
        if active != self.active_count:
            raise ExactnessError(f"active count {self.active_count} but {active} channels have positive propensity")


class BinnedNRM:
    """
    Next-reaction method on a :class:`BinnedEventTable`. With the default policy the expected search cost per step
    is bounded by a constant independent of the channel count.

    :param policy: Table sizing rules
    """

    def __init__(self, policy: Optional[BinPolicy] = None, counters: Optional[StepCounters] = None):
        self.counters = counters if counters is not None else StepCounters()
        self.policy = policy if policy is not None else BinPolicy()
        self.table: Optional[BinnedEventTable] = None
        self._rng: Optional[RngStream] = None

    def initialize(self, propensities: Sequence[float], t0: float, rng: RngStream) -> None:
        self._rng = rng
        self.table = BinnedEventTable(len(propensities), self.policy, self.counters)
        self.table.build(propensities, [t0 + rng.exponential(a) for a in propensities], t0)
        logger.debug(
            f"binned event table: {self.table.bin_count} bins of width {self.table.bin_width:.6g} "
            f"for {self.table.active_count} active channels"
        )

    def next_event(self, t: float) -> Tuple[float, int]:
        return self.table.select_next(t)

    def on_update(self, j: int, propensity: float, t: float) -> None:
        self.table.update(j, t + self._rng.exponential(propensity), propensity)

    def resync(self, propensities: Sequence[float]) -> None:
        table = self.table
        table.propensity = list(propensities)
        table.active_count = sum(1 for a in table.propensity if a > 0.0)

    def audit(self) -> None:
        self.table.audit()
