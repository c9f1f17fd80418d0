import ctypes
import math

import pytest
from hypothesis import given, settings, strategies as st

from indexbench.profiler import (
    CounterSample,
    MetricUnavailable,
    TmamBreakdown,
    compute_backend_split,
    compute_cpi,
    compute_cycle_breakdown,
    compute_tmam,
    load_event_map,
    normalize_memory_breakdown,
    open_counters,
)
from indexbench.profiler.eventmap import ALL_INPUTS, LEVEL_INPUTS, EventMapError, host_cpu_id, parse_descriptor
from indexbench.profiler.perf import (
    ATTR_SIZE,
    PERF_TYPE_RAW,
    PERF_TYPE_SOFTWARE,
    PERF_COUNT_SW_TASK_CLOCK,
    Counter,
    CounterSet,
    PerfAttr,
    Reading,
    UnsupportedEvent,
    raw_config,
)
from indexbench.profiler.tmam import MEMORY_COMPONENTS, InconsistentBreakdown, raw_memory_components


def sample(**counts):
    return CounterSample({k: float(v) for k, v in counts.items()}, issue_width=4)


FULL = dict(cycles=1000, instructions=2000, uops_issued_any=2400, uops_retired_retire_slots=2000,
            int_misc_recovery_cycles=50, idq_uops_not_delivered_core=400,
            cycle_activity_stalls_total=300, cycle_activity_stalls_mem_any=200,
            exe_activity_1_ports_util=60, exe_activity_2_ports_util=40, exe_activity_bound_on_stores=20,
            cycle_activity_stalls_l1d_miss=150, cycle_activity_stalls_l2_miss=120,
            cycle_activity_stalls_l3_miss=100)


# -- arithmetic ---------------------------------------------------------------

def test_cpi_example():
    assert compute_cpi(sample(cycles=100, instructions=400)) == 0.25


def test_cpi_needs_both_counters():
    with pytest.raises(MetricUnavailable):
        compute_cpi(sample(cycles=100))
    with pytest.raises(MetricUnavailable):
        compute_cpi(sample(cycles=100, instructions=0))


def test_all_slots_retiring():
    lv = compute_cycle_breakdown(sample(cycles=100, uops_issued_any=400, uops_retired_retire_slots=400,
                                        int_misc_recovery_cycles=0, idq_uops_not_delivered_core=0))
    assert lv == {"retiring": 1.0, "bad_speculation": 0.0, "frontend_bound": 0.0, "backend_bound": 0.0}


def test_half_slots_empty_with_frontend_ready():
    lv = compute_cycle_breakdown(sample(cycles=100, uops_issued_any=200, uops_retired_retire_slots=200,
                                        int_misc_recovery_cycles=0, idq_uops_not_delivered_core=0))
    assert lv["backend_bound"] == 0.5 and lv["retiring"] == 0.5


def test_hand_computed_breakdown():
    lv = compute_cycle_breakdown(sample(**FULL))
    # slots 4000; FE 400/4000; BS (2400-2000+200)/4000; RET 2000/4000
    assert lv == {"retiring": 0.5, "bad_speculation": 0.15, "frontend_bound": 0.1, "backend_bound": 0.25}


def test_skewed_counters_rescaled():
    lv = compute_cycle_breakdown(sample(cycles=100, uops_issued_any=420, uops_retired_retire_slots=400,
                                        int_misc_recovery_cycles=0, idq_uops_not_delivered_core=40))
    assert sum(lv.values()) == pytest.approx(1.0)
    assert lv["backend_bound"] == 0.0


def test_backend_split_hand_computed():
    # denominator 300 + 60 + 40 (retiring > 0.1); ratio 220/400
    split = compute_backend_split(sample(**FULL), 0.25, 0.5)
    assert split["memory_bound"] == pytest.approx(0.25 * 220 / 400, abs=1e-15)
    assert split["core_bound"] + split["memory_bound"] == pytest.approx(0.25, abs=1e-15)


def test_backend_split_ignores_two_port_cycles_when_retiring_low():
    split = compute_backend_split(sample(**FULL), 0.25, 0.05)
    assert split["memory_bound"] == pytest.approx(0.25 * 220 / 360)


def test_backend_zero_gives_zero_split():
    assert compute_backend_split(sample(**FULL), 0.0, 0.5) == {"core_bound": 0.0, "memory_bound": 0.0}


def test_raw_memory_ladder():
    raw = raw_memory_components(sample(**FULL))
    assert raw == {"l1_bound": 0.05, "l2_bound": 0.03, "l3_bound": 0.02, "dram_bound": 0.1, "store_bound": 0.02}


@pytest.mark.parametrize("raw, mb, expect", [
    ((10, 10, 20, 50, 10), 0.40, (0.04, 0.04, 0.08, 0.20, 0.04)),
    ((0, 0, 0, 0, 0), 0.0, (0, 0, 0, 0, 0)),
    ((1, 1, 1, 1, 1), 0.5, (0.1,) * 5),
])
def test_normalize_examples(raw, mb, expect):
    out = normalize_memory_breakdown(raw, mb)
    assert [out[k] for k in MEMORY_COMPONENTS] == pytest.approx(expect, abs=1e-15)


def test_normalize_rejects_zero_components_with_memory_stalls():
    with pytest.raises(InconsistentBreakdown):
        normalize_memory_breakdown((0, 0, 0, 0, 0), 0.3)


def test_normalize_rejects_negative():
    with pytest.raises(ValueError):
        normalize_memory_breakdown((1, -1, 0, 0, 0), 0.3)


@settings(max_examples=300)
@given(st.lists(st.floats(0, 1e6), min_size=5, max_size=5).filter(lambda v: sum(v) > 0),
       st.floats(0, 1))
def test_normalize_sums_to_memory_bound(raw, mb):
    out = normalize_memory_breakdown(raw, mb)
    assert math.fsum(out.values()) == pytest.approx(mb, abs=1e-12)
    total = sum(raw)
    for k, r in zip(MEMORY_COMPONENTS, raw):
        assert out[k] == pytest.approx(r * mb / total, rel=1e-12, abs=1e-300)


@settings(max_examples=200)
@given(st.integers(1, 10**9), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_cycle_breakdown_is_a_partition(cycles, fe, ret, extra, rec):
    slots = 4 * cycles
    s = sample(cycles=cycles, uops_retired_retire_slots=ret * slots, uops_issued_any=(ret + extra) * slots,
               int_misc_recovery_cycles=rec * cycles, idq_uops_not_delivered_core=fe * slots)
    lv = compute_cycle_breakdown(s)
    assert all(0.0 <= v <= 1.0 for v in lv.values())
    assert math.fsum(lv.values()) == pytest.approx(1.0, abs=1e-12)


def test_compute_tmam_full_sample():
    t = compute_tmam(sample(**FULL), 4)
    assert t.unavailable == {}
    assert math.fsum(t.memory.values()) == pytest.approx(t.backend["memory_bound"])
    assert TmamBreakdown.from_dict(t.to_dict()) == t


def test_compute_tmam_degrades_per_level():
    t = compute_tmam(sample(cycles=10, instructions=10), 4)
    assert t.cycle_breakdown is None and t.backend is None and t.memory is None
    assert set(t.unavailable) == {"cycle_breakdown", "backend", "memory"}
    t = compute_tmam(sample(**FULL), 2)
    assert t.cycle_breakdown is not None and t.unavailable["backend"] == "not requested"


def test_nan_counter_is_unavailable():
    with pytest.raises(MetricUnavailable):
        compute_cpi(sample(cycles=float("nan"), instructions=1))


# -- counter plumbing ---------------------------------------------------------

def test_attr_layout():
    assert ctypes.sizeof(PerfAttr) == ATTR_SIZE == 112


def test_raw_config_encoding():
    assert raw_config(0xa3, 0x14, 20) == 0x14 << 24 | 0x14 << 8 | 0xa3
    assert raw_config(0x0d, 0x01, 1, edge=True) == 1 << 24 | 1 << 18 | 0x01 << 8 | 0x0d
    with pytest.raises(ValueError):
        raw_config(0x100)


def test_reading_scaling():
    assert Reading(100, 10, 10).scaled == 100
    assert Reading(100, 20, 10).scaled == 200
    assert Reading(100, 20, 10).multiplex_ratio == 0.5
    assert math.isnan(Reading(0, 20, 0).scaled)


def _software_counter_available():
    try:
        Counter("task", PERF_TYPE_SOFTWARE, PERF_COUNT_SW_TASK_CLOCK).close()
        return True
    except OSError:
        return False


@pytest.mark.skipif(not _software_counter_available(), reason="perf_event_open not permitted")
def test_software_counter_counts_busy_time():
    with CounterSet([("task", PERF_TYPE_SOFTWARE, PERF_COUNT_SW_TASK_CLOCK)]) as cs:
        cs.start()
        sum(range(200_000))
        cs.stop()
        r = cs.read()["task"]
    assert r.raw > 0 and r.multiplex_ratio == 1.0


def test_unsupported_raw_event_is_recorded_not_raised():
    if not _software_counter_available():
        pytest.skip("perf_event_open not permitted")
    try:
        c = Counter("bogus", PERF_TYPE_RAW, raw_config(0xff, 0xff))
    except UnsupportedEvent:
        pass
    else:  # a PMU accepted the encoding; nothing to check
        c.close()
        return
    cs = CounterSet([("bogus", PERF_TYPE_RAW, raw_config(0xff, 0xff))])
    assert "bogus" in cs.failed and cs.names == []
    cs.close()


# -- event map ----------------------------------------------------------------

def test_descriptor_parsing():
    assert parse_descriptor("unavailable") is None
    assert parse_descriptor("hw:instructions").config == 1
    d = parse_descriptor("raw:event=0xa3,umask=0x14,cmask=20")
    assert d.type == PERF_TYPE_RAW and d.config == raw_config(0xa3, 0x14, 20)
    for bad in ("hw:nope", "raw:umask=1", "raw:event=zz", "xyz:1", "raw:event=1,bogus"):
        with pytest.raises(EventMapError):
            parse_descriptor(bad)


def test_shipped_map_selects_by_cpu_id():
    assert load_event_map(cpu_id="GenuineIntel-6-85").section == "skylake-sp"
    assert load_event_map(cpu_id="GenuineIntel-6-142").section == "skylake-client"
    generic = load_event_map(cpu_id="AuthenticAMD-25-1")
    assert generic.section == "generic"
    assert generic.level_supported(1) and not generic.level_supported(2)


def test_every_section_maps_every_input():
    for cpu in ("GenuineIntel-6-85", "GenuineIntel-6-94", "other"):
        m = load_event_map(cpu_id=cpu)
        assert set(m.events) == set(ALL_INPUTS)


def test_skylake_map_covers_all_levels():
    m = load_event_map(cpu_id="GenuineIntel-6-85")
    assert m.unavailable() == []
    assert len(m.events_for_levels(2)) == len(LEVEL_INPUTS[1]) + len(LEVEL_INPUTS[2]) >= 4


def test_custom_map_validation(tmp_path):
    path = tmp_path / "m.conf"
    path.write_text("[x]\nmatch = *\nissue_width = 4\ncycles = hw:cpu-cycles\n")
    with pytest.raises(EventMapError):
        load_event_map(path)
    lines = "\n".join(f"{n} = unavailable" for n in ALL_INPUTS)
    path.write_text(f"[x]\nmatch = *\nissue_width = 4\n{lines}\nmystery = hw:instructions\n")
    with pytest.raises(EventMapError):
        load_event_map(path)
    path.write_text(f"[x]\nmatch = *\nissue_width = 4\n{lines}\n")
    assert load_event_map(path).unavailable() == list(ALL_INPUTS)


def test_host_cpu_id_format(tmp_path):
    info = tmp_path / "cpuinfo"
    info.write_text("vendor_id\t: GenuineIntel\ncpu family\t: 6\nmodel\t\t: 85\n")
    assert host_cpu_id(str(info)) == "GenuineIntel-6-85"


def test_open_counters_degrades_on_unsupported_host():
    if not _software_counter_available():
        pytest.skip("perf_event_open not permitted")
    m = load_event_map(cpu_id="GenuineIntel-6-85")
    with open_counters(m, 4) as h:
        h.start()
        sum(range(10_000))
        s = h.stop()
        t = compute_tmam(s, 4)
    if h.skipped:
        assert t.cycle_breakdown is None or set(h.skipped).isdisjoint(LEVEL_INPUTS[2])
    else:
        assert s.cycles > 0
