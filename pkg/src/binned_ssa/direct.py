import math
from bisect import bisect_right, insort
from itertools import accumulate
from typing import Dict, List, Optional, Sequence, Tuple

from loguru import logger

from .event_source import NO_EVENT, StepCounters
from .model import ExactnessError
from .rng import RngStream

REJECTION_LIMIT = 10_000
"""Rejection trials after which composition-rejection selection gives up"""


def _last_nonzero(values: Sequence[float], start: int, stop: int) -> int:
    for i in range(stop - 1, start - 1, -1):
        if values[i] > 0.0:
            return i
    raise ExactnessError(f"selected an empty range [{start}, {stop}) of the propensity table")


def linear_select(propensities: Sequence[float], r: float, counters: Optional[StepCounters] = None) -> int:
    """
    Smallest channel index ``j`` whose prefix sum exceeds ``r``.

    If rounding leaves ``r`` at or above the full sum, the last channel with a positive propensity is returned and
    ``counters.clamps`` is incremented.

    :param propensities: Propensities in channel order
    :param r: Target in ``[0, a0)``
    :param counters: Receives the prefix-scan length and clamp events
    :return: The selected channel
    """
    prefix = list(accumulate(propensities))
    j = bisect_right(prefix, r)
    if j >= len(prefix):
        j = _last_nonzero(propensities, 0, len(prefix))
        logger.warning(f"selection target {r} reached the propensity sum {prefix[-1]}, clamped to channel {j}")
        if counters is not None:
            counters.clamps += 1
    if counters is not None:
        counters.entries_scanned += j + 1
    return j


def scan_range(values: Sequence[float], start: int, stop: int, r: float, counters: StepCounters) -> Tuple[int, int]:
    """
    First index in ``[start, stop)`` whose running sum exceeds ``r``, and the number of entries scanned. Falls back
    to the last positive entry on rounding, counting a clamp.
    """
    acc = 0.0
    for i in range(start, stop):
        acc += values[i]
        if acc > r:
            return i, i - start + 1
    counters.clamps += 1
    j = _last_nonzero(values, start, stop)
    logger.warning(f"selection target {r} reached the sum of [{start}, {stop}), clamped to entry {j}")
    return j, stop - start


class _DirectBase:
    """Propensity sum bookkeeping shared by the direct-method sources"""

    def __init__(self, counters: Optional[StepCounters] = None):
        self.counters = counters if counters is not None else StepCounters()
        self._rng: Optional[RngStream] = None
        self.total = 0.0
        self.active = 0

    def _set_total(self, propensities: Sequence[float]):
        total = 0.0
        for a in propensities:
            total += a
        self.total = total
        self.active = sum(1 for a in propensities if a > 0.0)

    def _track(self, old: float, new: float):
        self.active += (new > 0.0) - (old > 0.0)
        if self.active == 0:
            self.total = 0.0
        else:
            self.total += new - old

    def _waiting_time(self) -> float:
        return -math.log(self._rng.uniform()) / self.total


class LinearDirect(_DirectBase):
    """
    Direct method with a linear prefix-sum search. Expected search depth is linear in the channel count.
    """

    def initialize(self, propensities: Sequence[float], t0: float, rng: RngStream) -> None:
        self._a = list(propensities)
        self._set_total(self._a)
        self._rng = rng

    def next_event(self, t: float) -> Tuple[float, int]:
        if self.active == 0:
            return math.inf, NO_EVENT
        tau = self._waiting_time()
        j = linear_select(self._a, self._rng.random() * self.total, self.counters)
        return t + tau, j

    def on_update(self, j: int, propensity: float, t: float) -> None:
        self._track(self._a[j], propensity)
        self._a[j] = propensity

    def resync(self, propensities: Sequence[float]) -> None:
        self._a = list(propensities)
        self._set_total(self._a)

    def audit(self) -> None:
        exact = math.fsum(self._a)
        if abs(exact - self.total) > 1e-9 * max(exact, 1.0):
            raise ExactnessError(f"propensity sum drifted: stored {self.total}, exact {exact}")


class GroupedTable:
    """
    Two- or three-level sum table over the propensities. Channels are split into ``g`` groups of ``g`` (two levels)
    or ``g`` groups of ``g`` subgroups of ``g`` (three levels) where ``g = ceil(M ** (1 / depth))``.

    :param propensities: Initial propensities
    :param depth: Number of levels, 2 or 3
    :param counters: Receives clamp events
    """

    def __init__(self, propensities: Sequence[float], depth: int, counters: Optional[StepCounters] = None):
        if depth not in (2, 3):
            raise ValueError(f"grouped table depth must be 2 or 3, got {depth}")
        self.counters = counters if counters is not None else StepCounters()
        self.depth = depth
        self.values = list(propensities)
        M = len(self.values)
        g = max(1, round(M ** (1.0 / depth)))
        while g**depth < M:
            g += 1
        while g > 1 and (g - 1) ** depth >= M:
            g -= 1
        self.fanout = g
        # block size of each summary level, coarse to fine
        self.block_sizes = [g ** (depth - 1 - lvl) for lvl in range(depth - 1)]
        self.sums: List[List[float]] = []
        self.active: List[List[int]] = []
        for block in self.block_sizes:
            n_blocks = -(-M // block)
            sums = [0.0] * n_blocks
            active = [0] * n_blocks
            for j, a in enumerate(self.values):
                sums[j // block] += a
                active[j // block] += a > 0.0
            self.sums.append(sums)
            self.active.append(active)
        self.total = 0.0
        for a in self.sums[0]:
            self.total += a
        self.total_active = sum(self.active[0])

    def update(self, j: int, propensity: float) -> None:
        old = self.values[j]
        self.values[j] = propensity
        delta = propensity - old
        step = (propensity > 0.0) - (old > 0.0)
        for block, sums, active in zip(self.block_sizes, self.sums, self.active):
            b = j // block
            active[b] += step
            sums[b] = sums[b] + delta if active[b] > 0 else 0.0
        self.total_active += step
        self.total = self.total + delta if self.total_active > 0 else 0.0

    def select(self, uniforms: Sequence[float]) -> Tuple[int, List[int]]:
        """
        Descend the levels, scaling one uniform per level to the sum of the group chosen one level up.

        :param uniforms: ``depth`` variates in ``[0, 1)``
        :return: The channel and the prefix-scan length at each level
        """
        g = self.fanout
        levels = self.sums + [self.values]
        bound = self.total
        start, stop = 0, len(levels[0])
        scans = []
        idx = 0
        for lvl, (values, u) in enumerate(zip(levels, uniforms)):
            idx, scanned = scan_range(values, start, stop, u * bound, self.counters)
            scans.append(scanned)
            bound = values[idx]
            if lvl + 1 < len(levels):
                start = idx * g
                stop = min(start + g, len(levels[lvl + 1]))
        return idx, scans

    def audit(self) -> None:
        M = len(self.values)
        for block, sums, active in zip(self.block_sizes, self.sums, self.active):
            for b, s in enumerate(sums):
                chunk = self.values[b * block : min((b + 1) * block, M)]
                exact = math.fsum(chunk)
                if abs(exact - s) > 1e-9 * max(exact, 1.0):
                    raise ExactnessError(f"group sum {b} drifted: stored {s}, exact {exact}")
                if active[b] != sum(1 for a in chunk if a > 0.0):
                    raise ExactnessError(f"group {b} active count is wrong")


class GroupedDirect(_DirectBase):
    """
    Direct method over a :class:`GroupedTable`. Expected search depth grows like ``M ** (1 / depth)``.

    :param depth: 2 or 3
    """

    def __init__(self, depth: int = 2, counters: Optional[StepCounters] = None):
        super().__init__(counters)
        self.depth = depth
        self.table: Optional[GroupedTable] = None

    def initialize(self, propensities: Sequence[float], t0: float, rng: RngStream) -> None:
        self.table = GroupedTable(propensities, self.depth, self.counters)
        self._rng = rng

    def next_event(self, t: float) -> Tuple[float, int]:
        table = self.table
        if table.total_active == 0:
            return math.inf, NO_EVENT
        rng = self._rng
        tau = -math.log(rng.uniform()) / table.total
        j, scans = table.select([rng.random() for _ in range(self.depth)])
        self.counters.entries_scanned += sum(scans)
        return t + tau, j

    def on_update(self, j: int, propensity: float, t: float) -> None:
        self.table.update(j, propensity)

    def resync(self, propensities: Sequence[float]) -> None:
        self.table = GroupedTable(propensities, self.depth, self.counters)

    def audit(self) -> None:
        self.table.audit()


def exponent_group(a: float) -> int:
    """Group index ``floor(log2(a))`` of a positive propensity, so that ``2**g <= a < 2**(g+1)``"""
    return math.frexp(a)[1] - 1


class CompositionRejectionTable:
    """
    Channels with positive propensity grouped by binary exponent. Group ``g`` holds the channels with
    ``2**g <= a < 2**(g+1)``; zero-propensity channels belong to no group. Membership changes are O(1) by
    swap-remove.

    :param propensities: Initial propensities
    """

    def __init__(self, propensities: Sequence[float]):
        self.values = list(propensities)
        M = len(self.values)
        self.groups: Dict[int, List[int]] = {}
        self.group_sums: Dict[int, float] = {}
        self.order: List[int] = []
        """Exponents of the nonempty groups, ascending. Selection walks it from the end."""
        self.group_of: List[Optional[int]] = [None] * M
        self.slot_of: List[int] = [-1] * M
        self.total = 0.0
        self.active_count = 0
        for j, a in enumerate(self.values):
            if a > 0.0:
                self._add(j, exponent_group(a), a)

    def _add(self, j: int, g: int, a: float):
        members = self.groups.get(g)
        if members is None:
            members = self.groups[g] = []
            self.group_sums[g] = 0.0
            insort(self.order, g)
        self.group_of[j] = g
        self.slot_of[j] = len(members)
        members.append(j)
        self.group_sums[g] += a
        self.total += a
        self.active_count += 1

    def _remove(self, j: int, g: int, a: float):
        members = self.groups[g]
        slot = self.slot_of[j]
        last = members.pop()
        if last != j:
            members[slot] = last
            self.slot_of[last] = slot
        self.group_of[j] = None
        self.slot_of[j] = -1
        self.active_count -= 1
        if members:
            self.group_sums[g] -= a
        else:
            del self.groups[g]
            del self.group_sums[g]
            self.order.remove(g)
        if self.active_count == 0:
            self.total = 0.0
        else:
            self.total -= a

    def update(self, j: int, propensity: float) -> None:
        old = self.values[j]
        self.values[j] = propensity
        g_old = self.group_of[j]
        g_new = exponent_group(propensity) if propensity > 0.0 else None
        if g_old is not None and g_old == g_new:
            self.group_sums[g_old] += propensity - old
            self.total += propensity - old
            return
        if g_old is not None:
            self._remove(j, g_old, old)
        if g_new is not None:
            self._add(j, g_new, propensity)

    def select(self, rng: RngStream, counters: StepCounters) -> int:
        """
        Pick a group in proportion to its sum, then draw members uniformly and accept member ``j`` with probability
        ``a_j / 2**(g+1)``.

        :raises ExactnessError: after :data:`REJECTION_LIMIT` consecutive rejections
        """
        r = rng.random() * self.total
        acc = 0.0
        g = None
        for exp in reversed(self.order):
            acc += self.group_sums[exp]
            if acc > r:
                g = exp
                break
        if g is None:
            g = self.order[0]
            counters.clamps += 1
            logger.warning(f"group selection target {r} reached the propensity sum {acc}, clamped to group {g}")
        members = self.groups[g]
        bound = math.ldexp(1.0, g + 1)
        values = self.values
        n = len(members)
        for _ in range(REJECTION_LIMIT):
            j = members[rng.integer(n)]
            if rng.random() * bound < values[j]:
                return j
            counters.rejections += 1
        raise ExactnessError(f"group {g} rejected {REJECTION_LIMIT} consecutive draws")

    def audit(self) -> None:
        for j, a in enumerate(self.values):
            g = self.group_of[j]
            if a > 0.0:
                if g != exponent_group(a) or self.groups[g][self.slot_of[j]] != j:
                    raise ExactnessError(f"channel {j} with propensity {a} is filed in the wrong group")
            elif g is not None:
                raise ExactnessError(f"channel {j} has zero propensity but is a member of group {g}")
        for g, members in self.groups.items():
            exact = math.fsum(self.values[j] for j in members)
            if abs(exact - self.group_sums[g]) > 1e-9 * max(exact, 1.0):
                raise ExactnessError(f"group {g} sum drifted: stored {self.group_sums[g]}, exact {exact}")
        if sorted(self.groups) != self.order:
            raise ExactnessError("group order list does not match the nonempty groups")


class CompositionRejectionDirect(_DirectBase):
    """
    Direct method with composition-rejection selection. Expected selection cost is bounded by a constant
    independent of the channel count; the mean number of trials per selection is at most two.
    """

    def initialize(self, propensities: Sequence[float], t0: float, rng: RngStream) -> None:
        self.table = CompositionRejectionTable(propensities)
        self._rng = rng
        logger.debug(f"composition-rejection table with {len(self.table.groups)} groups")

    def next_event(self, t: float) -> Tuple[float, int]:
        table = self.table
        if table.active_count == 0:
            return math.inf, NO_EVENT
        tau = -math.log(self._rng.uniform()) / table.total
        j = table.select(self._rng, self.counters)
        return t + tau, j

    def on_update(self, j: int, propensity: float, t: float) -> None:
        self.table.update(j, propensity)

    def resync(self, propensities: Sequence[float]) -> None:
        self.table = CompositionRejectionTable(propensities)

    def audit(self) -> None:
        self.table.audit()
