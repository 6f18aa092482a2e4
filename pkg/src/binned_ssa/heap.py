import math
from typing import List, Optional, Sequence, Tuple

from .event_source import NO_EVENT, StepCounters
from .model import ExactnessError
from .rng import RngStream


class BinaryMinHeap:
    """
    Indexed binary min-heap keyed by absolute event time. Every key stays in the heap, including ``inf`` for
    channels that cannot fire, so that any key can be changed in O(log M) through the locator.

    :param times: Initial key of every item; the item index is its position in this sequence
    :param counters: Receives ``heap_swaps``
    """

    def __init__(self, times: Sequence[float], counters: Optional[StepCounters] = None):
        self.counters = counters if counters is not None else StepCounters()
        n = len(times)
        self.time: List[float] = list(times)
        """Key of the node at each heap position"""
        self.item: List[int] = list(range(n))
        """Item stored at each heap position"""
        self.locator: List[int] = list(range(n))
        """Heap position of each item"""
        for pos in range(n // 2 - 1, -1, -1):
            self._sift_down(pos)

    def __len__(self):
        return len(self.time)

    def _sift_up(self, pos: int):
        time, item, locator = self.time, self.item, self.locator
        key, it = time[pos], item[pos]
        swaps = 0
        while pos > 0:
            parent = (pos - 1) >> 1
            if time[parent] <= key:
                break
            time[pos] = time[parent]
            item[pos] = item[parent]
            locator[item[pos]] = pos
            pos = parent
            swaps += 1
        time[pos] = key
        item[pos] = it
        locator[it] = pos
        self.counters.heap_swaps += swaps

    def _sift_down(self, pos: int):
        time, item, locator = self.time, self.item, self.locator
        n = len(time)
        key, it = time[pos], item[pos]
        swaps = 0
        while True:
            child = 2 * pos + 1
            if child >= n:
                break
            right = child + 1
            if right < n and time[right] < time[child]:
                child = right
            if time[child] >= key:
                break
            time[pos] = time[child]
            item[pos] = item[child]
            locator[item[pos]] = pos
            pos = child
            swaps += 1
        time[pos] = key
        item[pos] = it
        locator[it] = pos
        self.counters.heap_swaps += swaps

    def select(self) -> Tuple[float, int]:
        """The smallest key and its item"""
        return self.time[0], self.item[0]

    def key(self, i: int) -> float:
        return self.time[self.locator[i]]

    def update(self, i: int, time: float) -> None:
        """Change the key of item ``i`` and restore the heap order"""
        pos = self.locator[i]
        old = self.time[pos]
        self.time[pos] = time
        if time < old:
            self._sift_up(pos)
        elif time > old:
            self._sift_down(pos)

    def audit(self) -> None:
        time, item, locator = self.time, self.item, self.locator
        for pos in range(1, len(time)):
            if time[(pos - 1) >> 1] > time[pos]:
                raise ExactnessError(f"heap order violated at position {pos}")
        for pos, it in enumerate(item):
            if locator[it] != pos:
                raise ExactnessError(f"locator of item {it} points to {locator[it]}, item sits at {pos}")


class HeapNRM:
    """
    Next-reaction method on a binary heap of absolute event times. Selection is O(1) and every update costs
    O(log M) heap swaps.

    Every affected channel, the fired one included, receives a fresh exponential time from its new propensity.
    """

    def __init__(self, counters: Optional[StepCounters] = None):
        self.counters = counters if counters is not None else StepCounters()
        self.heap: Optional[BinaryMinHeap] = None
        self._rng: Optional[RngStream] = None

    def initialize(self, propensities: Sequence[float], t0: float, rng: RngStream) -> None:
        self._rng = rng
        self.heap = BinaryMinHeap([t0 + rng.exponential(a) for a in propensities], self.counters)

    def next_event(self, t: float) -> Tuple[float, int]:
        time, j = self.heap.select()
        if time == math.inf:
            return math.inf, NO_EVENT
        return time, j

    def on_update(self, j: int, propensity: float, t: float) -> None:
        self.heap.update(j, t + self._rng.exponential(propensity))

    def resync(self, propensities: Sequence[float]) -> None:
        # event times are absolute; nothing accumulates
        pass

    def audit(self) -> None:
        self.heap.audit()
