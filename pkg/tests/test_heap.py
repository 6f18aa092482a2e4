import math

from hypothesis import given, settings
from hypothesis import strategies as st

from binned_ssa.event_source import NO_EVENT, StepCounters
from binned_ssa.heap import BinaryMinHeap, HeapNRM
from binned_ssa.rng import RngStream


def _drain(heap: BinaryMinHeap):
    out = []
    for _ in range(len(heap)):
        time, i = heap.select()
        out.append(time)
        heap.update(i, math.inf)
    return out


def test_select_minimum():
    heap = BinaryMinHeap([math.inf, 5.0, 7.0, 6.0])
    assert heap.select() == (5.0, 1)
    assert BinaryMinHeap([2.5]).select() == (2.5, 0)


def test_random_times_root_is_minimum():
    rng = RngStream(1)
    times = [rng.random() * 100 for _ in range(1000)]
    heap = BinaryMinHeap(times)
    assert heap.select() == (min(times), times.index(min(times)))
    heap.audit()


def test_decrease_child_becomes_root():
    heap = BinaryMinHeap([1.0, 2.0, 3.0])
    heap.update(2, 0.5)
    assert heap.select() == (0.5, 2)
    heap.audit()


def test_infinite_key_sinks():
    heap = BinaryMinHeap([1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0])
    heap.update(0, math.inf)
    assert heap.locator[0] >= len(heap) // 2
    assert heap.key(0) == math.inf
    heap.audit()


def test_swaps_are_counted():
    counters = StepCounters()
    heap = BinaryMinHeap([1.0, 2.0, 3.0, 4.0], counters)
    counters.reset()
    heap.update(3, 0.0)
    # leaf at depth 2 climbs to the root
    assert counters.heap_swaps == 2


def test_many_updates_extract_in_sorted_order():
    rng = RngStream(3)
    n = 500
    heap = BinaryMinHeap([rng.random() for _ in range(n)])
    final = [heap.key(i) for i in range(n)]
    for _ in range(10_000):
        i = rng.integer(n)
        t = rng.random() * 10
        heap.update(i, t)
        final[i] = t
    heap.audit()
    assert _drain(heap) == sorted(final)


@settings(max_examples=50, deadline=None)
@given(
    times=st.lists(st.floats(0.0, 1e6), min_size=1, max_size=60),
    updates=st.lists(st.tuples(st.integers(0, 59), st.one_of(st.floats(0.0, 1e6), st.just(math.inf))), max_size=100),
)
def test_heap_invariants_hold(times, updates):
    heap = BinaryMinHeap(times)
    for i, t in updates:
        heap.update(i % len(times), t)
    heap.audit()
    drained = _drain(heap)
    assert drained == sorted(drained)


def test_heap_nrm_absorbing():
    source = HeapNRM()
    source.initialize([0.0, 0.0], 0.0, RngStream(1))
    assert source.next_event(0.0) == (math.inf, NO_EVENT)
    source.on_update(1, 2.0, 3.0)
    time, j = source.next_event(3.0)
    assert j == 1
    assert time >= 3.0
    source.audit()
