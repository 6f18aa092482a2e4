import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binned_ssa.bench import SyntheticModel, bench_loop, random_unit_rate_network
from binned_ssa.binned import OVERFLOW, BinnedEventTable, BinnedNRM, BinPolicy
from binned_ssa.event_source import NO_EVENT, StepCounters
from binned_ssa.model import DependencyGraph, ExactnessError
from binned_ssa.rng import RngStream


def _table(lower_bound=10.0, width=0.5, count=40, channels=8) -> BinnedEventTable:
    table = BinnedEventTable(channels, BinPolicy(bin_width=width, bin_count=count))
    table.build([1.0] * channels, [math.inf] * channels, lower_bound)
    return table


def _stored(table: BinnedEventTable):
    return sorted(j for b in table.bins for j in b)


def test_compute_bin_index():
    table = _table()
    assert table.compute_bin_index(10.0) == 0
    assert table.compute_bin_index(12.25) == 4
    assert table.compute_bin_index(30.1) == OVERFLOW
    assert table.compute_bin_index(29.99) == 39
    assert table.compute_bin_index(math.inf) == OVERFLOW
    with pytest.raises(ExactnessError, match="precedes"):
        table.compute_bin_index(9.99)


def test_insert():
    table = _table()
    table.insert(2, 11.6)
    assert table.bins[3] == [2]
    assert (table.bin_of[2], table.slot_of[2]) == (3, 0)
    table.insert(5, 11.7)
    assert (table.bin_of[5], table.slot_of[5]) == (3, 1)
    table.insert(6, math.inf)
    assert table.bin_of[6] == OVERFLOW
    assert table.event_time[6] == math.inf
    with pytest.raises(ExactnessError, match="already stored"):
        table.insert(2, 12.0)
    table.audit()


def test_random_inserts_keep_invariants():
    rng = RngStream(2)
    table = _table(channels=1000)
    for j in range(1000):
        table.insert(j, 10.0 + rng.random() * 30.0)
    table.audit()
    assert table.stored_count == sum(1 for t in table.event_time if t < 30.0)


def test_select_scans_to_first_nonempty_bin():
    table = BinnedEventTable(10, BinPolicy(bin_width=1.0, bin_count=3))
    table.build([1.0] * 10, [math.inf] * 10, 0.0)
    table.insert(1, 0.4)
    table.insert(7, 2.5)
    table.insert(3, 2.1)
    counters = table.counters
    assert table.select_next(0.0) == (0.4, 1)
    assert counters.bins_scanned == 1
    assert counters.entries_scanned == 1
    table.update(1, math.inf, propensity=0.0)
    assert table.select_next(0.4) == (2.1, 3)
    assert counters.bins_scanned == 1 + 3
    assert counters.entries_scanned == 1 + 2
    assert table.min_bin == 2


def test_select_rebuilds_when_window_is_empty():
    table = BinnedEventTable(4, BinPolicy(bin_width=1.0, bin_count=3))
    table.build([0.0, 0.0, 1.0, 0.0], [math.inf, math.inf, 50.0, math.inf], 0.0)
    assert table.stored_count == 0
    assert table.select_next(0.0) == (50.0, 2)
    assert table.counters.rebuilds >= 1
    assert table.lower_bound == 50.0
    table.audit()


def test_select_absorbing():
    table = BinnedEventTable(3, BinPolicy())
    table.build([0.0] * 3, [math.inf] * 3, 0.0)
    assert table.select_next(0.0) == (math.inf, NO_EVENT)
    table.audit()


def test_update_paths():
    table = _table()
    table.insert(0, 11.2)
    counters = table.counters
    table.update(0, 11.4)
    assert table.bins[2] == [0]
    assert table.event_time[0] == 11.4
    assert counters.moved_entries == 0
    table.update(0, 12.6)
    assert table.bins[2] == [] and table.bins[5] == [0]
    assert counters.moved_entries == 1
    table.update(0, 40.0)
    assert table.bin_of[0] == OVERFLOW
    assert _stored(table) == []
    table.audit()


def test_update_activates_zero_propensity_channel():
    table = BinnedEventTable(3, BinPolicy(bin_width=1.0, bin_count=10))
    table.build([1.0, 0.0, 1.0], [0.5, math.inf, 20.0], 0.0)
    assert table.active_count == 2
    assert _stored(table) == [0]
    table.update(1, 3.5, propensity=2.0)
    assert table.bin_of[1] == 3
    assert table.active_count == 3
    table.update(0, math.inf, propensity=0.0)
    assert table.bin_of[0] == OVERFLOW
    assert table.active_count == 2
    table.audit()


def test_rebuild_sizing():
    table = BinnedEventTable(400, BinPolicy())
    table.build([1.0] * 400, [math.inf] * 400, 0.0)
    table.rebuild(1.0, active_count=400, mean_step_estimate=0.125)
    assert table.bin_count == 400
    assert table.bin_width == 2.0
    table.rebuild(1.0, active_count=1, mean_step_estimate=0.125)
    assert table.bin_count == 20


def test_initial_width_uses_total_propensity():
    table = BinnedEventTable(4, BinPolicy())
    table.build([1.0, 1.0, 2.0, 4.0], [math.inf] * 4, 0.0)
    assert table.bin_width == 16.0 / 8.0
    assert table.bin_count == math.ceil(20 * math.sqrt(4))
    assert table.counters.rebuilds == 0


def test_rebuild_preserves_stored_set():
    rng = RngStream(4)
    n = 300
    table = BinnedEventTable(n, BinPolicy(bin_width=0.05, bin_count=50))
    times = [1.0 + rng.random() * 5.0 for _ in range(n)]
    table.build([1.0] * n, times, 0.0)
    before = {j for j in range(n) if times[j] < 2.5}
    assert set(_stored(table)) == before
    table.rebuild(1.0, mean_step_estimate=1.0)
    table.audit()
    # default width factor is overridden by the fixed width
    assert table.bin_width == 0.05
    assert set(_stored(table)) == {j for j in range(n) if 1.0 <= times[j] < 3.5}
    with pytest.raises(ExactnessError):
        table.rebuild(0.5)


def test_mean_step_estimate():
    table = BinnedEventTable(2, BinPolicy(min_steps_for_estimate=10))
    table.build([2.0, 2.0], [math.inf, math.inf], 0.0)
    assert table.mean_step_estimate(5.0) == 0.25
    table.steps_since_rebuild = 10
    assert table.mean_step_estimate(5.0) == 0.5


def test_trigger_ratio_rebuilds_early():
    table = BinnedEventTable(100, BinPolicy(rebuild_trigger_ratio=2.0, bin_width=1.0))
    table.build([1.0] * 10 + [0.0] * 90, [5.0] * 10 + [math.inf] * 90, 0.0)
    for j in range(10, 40):
        table.update(j, 6.0, propensity=1.0)
    table.select_next(0.0)
    assert table.counters.rebuilds == 1
    assert table.bin_count == math.ceil(20 * math.sqrt(40))


@settings(max_examples=30, deadline=None)
@given(
    ops=st.lists(st.tuples(st.integers(0, 49), st.floats(0.0, 20.0), st.booleans()), min_size=1, max_size=300),
    width=st.floats(0.01, 5.0),
    count=st.integers(1, 30),
)
def test_table_invariants_under_random_updates(ops, width, count):
    n = 50
    table = BinnedEventTable(n, BinPolicy(bin_width=width, bin_count=count))
    table.build([1.0] * n, [float(j) for j in range(n)], 0.0)
    t = 0.0
    for j, dt, zero in ops:
        if zero:
            table.update(j, math.inf, propensity=0.0)
        else:
            table.update(j, t + dt, propensity=1.0)
        time, k = table.select_next(t)
        if k != NO_EVENT:
            assert time == min(table.event_time[i] for i in range(n) if table.propensity[i] > 0)
            t = time
        table.audit()


@pytest.mark.slow
def test_table_invariants_over_a_million_operations():
    n = 64
    rng = np.random.default_rng(2718)
    table = BinnedEventTable(n, BinPolicy(min_steps_for_estimate=20, rebuild_trigger_ratio=3.0))
    table.build([1.0] * n, rng.exponential(1.0, n).tolist(), 0.0)
    ops = rng.integers(0, 100, size=10**6).tolist()
    channels = rng.integers(0, n, size=10**6).tolist()
    gaps = rng.exponential(1.0, size=10**6).tolist()
    t = 0.0
    for step, (op, j, gap) in enumerate(zip(ops, channels, gaps)):
        if op < 60:
            time, k = table.select_next(t)
            if k == NO_EVENT:
                table.update(j, t + gap, propensity=1.0)
                continue
            if step % 1000 == 0:
                assert time == min(table.event_time[i] for i in range(n) if table.propensity[i] > 0)
            t = time
            table.update(k, t + gap * (1 + op % 7), propensity=1.0)
        elif op < 85:
            table.update(j, t + gap * 10 ** (op % 4 - 1), propensity=1.0)
        elif op < 97:
            table.update(j, math.inf, propensity=0.0)
        else:
            table.rebuild(t)
        if step % 997 == 0:
            table.audit()
    table.audit()
    assert table.counters.rebuilds > 0


@pytest.mark.parametrize("width", [1.0, math.sqrt(2.0), 2.0, 4.0])
def test_search_depth_law(width):
    M = 10_000
    model = random_unit_rate_network(M, 1, seed=1, rate=1.0 / M)
    source = BinnedNRM(BinPolicy(bin_width=width))
    source.initialize(model.propensities, 0.0, RngStream(21))
    t = bench_loop(source, model, 5000)
    source.counters.reset()
    steps = 60_000
    bench_loop(source, model, steps, t)
    counters = source.counters
    assert counters.bins_scanned / steps == pytest.approx(1 / width + 1, rel=0.05)
    assert counters.entries_scanned / steps == pytest.approx(width / 2 + 1, rel=0.05)


@pytest.mark.slow
def test_fast_and_slow_channels():
    # one channel near 1/s beside 10^4 slow channels summing to 0.01/s
    slow = 10_000
    model = SyntheticModel([1.0] + [1e-6] * slow, DependencyGraph([(j,) for j in range(slow + 1)]))
    source = BinnedNRM(BinPolicy(bin_width=6.64))
    source.initialize(model.propensities, 0.0, RngStream(64))
    steps = 10**6
    bench_loop(source, model, steps)
    assert source.counters.search_depth == pytest.approx(2.15, rel=0.10)
    source.audit()


def test_small_width_scans_many_bins():
    M = 2000
    model = random_unit_rate_network(M, 1, seed=2, rate=1.0 / M)
    source = BinnedNRM(BinPolicy(bin_width=0.1))
    source.initialize(model.propensities, 0.0, RngStream(3))
    bench_loop(source, model, 20_000)
    assert source.counters.bins_scanned / 20_000 == pytest.approx(11.0, rel=0.05)


def test_large_window_never_rebuilds():
    M = 100
    model = random_unit_rate_network(M, 1, seed=3, rate=1.0 / M)
    counters = StepCounters()
    source = BinnedNRM(BinPolicy(bin_width=1e6, bin_count=10), counters)
    source.initialize(model.propensities, 0.0, RngStream(3))
    bench_loop(source, model, 1000)
    assert counters.rebuilds == 0
    source.audit()
