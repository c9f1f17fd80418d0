"""Top-down cycle accounting from raw counter values.

Slot accounting follows the published TMAM definitions for Intel cores
with ``issue_width`` slots per cycle:

    slots          = issue_width * cycles
    frontend_bound = IDQ_UOPS_NOT_DELIVERED.CORE / slots
    bad_spec       = (UOPS_ISSUED.ANY - UOPS_RETIRED.RETIRE_SLOTS
                      + issue_width * INT_MISC.RECOVERY_CYCLES) / slots
    retiring       = UOPS_RETIRED.RETIRE_SLOTS / slots
    backend_bound  = 1 - frontend_bound - bad_spec - retiring

The back-end is split with the stall-cycle ratio

    memory_bound = backend_bound * (STALLS_MEM_ANY + BOUND_ON_STORES)
                   / (STALLS_TOTAL + 1_PORTS_UTIL + [retiring > 0.1] * 2_PORTS_UTIL)

and the memory stalls per level are cycle fractions of the STALLS_* ladder,
rescaled by ``normalize_memory_breakdown`` so that they add up to
memory_bound.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Union

from .eventmap import LEVEL_INPUTS, MAX_LEVEL, EventMap
from .perf import CounterSet, Reading

MEMORY_COMPONENTS = ("l1_bound", "l2_bound", "l3_bound", "dram_bound", "store_bound")
CYCLE_COMPONENTS = ("retiring", "bad_speculation", "frontend_bound", "backend_bound")
BACKEND_COMPONENTS = ("core_bound", "memory_bound")


class MetricUnavailable(ValueError):
    """The sample lacks what a metric needs; the metric is reported as unavailable."""


class InconsistentBreakdown(MetricUnavailable):
    """Memory stalls reported with no attributable component."""


@dataclass
class CounterSample:
    counts: Dict[str, float]
    issue_width: int = 4
    multiplex: Dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_readings(cls, readings: Mapping[str, Reading], issue_width: int) -> "CounterSample":
        counts = {}
        ratios = {}
        for name, r in readings.items():
            ratios[name] = r.multiplex_ratio
            if r.time_running > 0 or r.time_enabled == 0:
                counts[name] = r.scaled
        return cls(counts, issue_width, ratios)

    def need(self, *names: str) -> Sequence[float]:
        missing = [n for n in names if n not in self.counts]
        if missing:
            raise MetricUnavailable(f"missing counters: {', '.join(missing)}")
        values = [self.counts[n] for n in names]
        if any(v < 0 or math.isnan(v) for v in values):
            raise MetricUnavailable("negative or undefined counter value")
        return values

    @property
    def cycles(self) -> float:
        return self.need("cycles")[0]

    @property
    def instructions(self) -> float:
        return self.need("instructions")[0]

    @property
    def slots(self) -> float:
        return self.issue_width * self.cycles


def compute_cpi(sample: CounterSample) -> float:
    cycles, instructions = sample.need("cycles", "instructions")
    if instructions <= 0:
        raise MetricUnavailable("zero instructions retired")
    return cycles / instructions


def compute_cycle_breakdown(sample: CounterSample) -> Dict[str, float]:
    """Retiring / bad speculation / front-end / back-end fractions of all slots.

    Slots where the front-end delivered nothing while the back-end was also
    stalled are counted by the front-end event only when the back-end was
    ready, so joint stalls fall into ``backend_bound`` (the remainder)."""
    cycles, issued, retired, recovery, not_delivered = sample.need(
        "cycles", "uops_issued_any", "uops_retired_retire_slots",
        "int_misc_recovery_cycles", "idq_uops_not_delivered_core")
    if cycles <= 0:
        raise MetricUnavailable("zero cycles")
    slots = sample.issue_width * cycles
    frontend = _clamp(not_delivered / slots)
    bad_spec = _clamp((issued - retired + sample.issue_width * recovery) / slots)
    retiring = _clamp(retired / slots)
    head = frontend + bad_spec + retiring
    if head > 1.0:
        # counter skew can push the sum past the slot total; rescale
        frontend, bad_spec, retiring = frontend / head, bad_spec / head, retiring / head
        head = 1.0
    return {
        "retiring": retiring,
        "bad_speculation": bad_spec,
        "frontend_bound": frontend,
        "backend_bound": 1.0 - head,
    }


def compute_backend_split(sample: CounterSample, backend_bound: float,
                          retiring: float) -> Dict[str, float]:
    """Split ``backend_bound`` into core-bound and memory-bound parts."""
    stalls_total, mem_any, ports1, ports2, stores = sample.need(
        "cycle_activity_stalls_total", "cycle_activity_stalls_mem_any",
        "exe_activity_1_ports_util", "exe_activity_2_ports_util",
        "exe_activity_bound_on_stores")
    if backend_bound <= 0:
        return {"core_bound": 0.0, "memory_bound": 0.0}
    denom = stalls_total + ports1 + (ports2 if retiring > 0.1 else 0.0)
    if denom <= 0:
        raise MetricUnavailable("back-end bound without any stall cycles")
    ratio = _clamp((mem_any + stores) / denom)
    memory = backend_bound * ratio
    return {"core_bound": backend_bound - memory, "memory_bound": memory}


def raw_memory_components(sample: CounterSample) -> Dict[str, float]:
    """Per-level memory stall fractions of cycles, before normalisation."""
    cycles, mem_any, l1_miss, l2_miss, l3_miss, stores = sample.need(
        "cycles", "cycle_activity_stalls_mem_any", "cycle_activity_stalls_l1d_miss",
        "cycle_activity_stalls_l2_miss", "cycle_activity_stalls_l3_miss",
        "exe_activity_bound_on_stores")
    if cycles <= 0:
        raise MetricUnavailable("zero cycles")
    return {
        "l1_bound": max(mem_any - l1_miss, 0.0) / cycles,
        "l2_bound": max(l1_miss - l2_miss, 0.0) / cycles,
        "l3_bound": max(l2_miss - l3_miss, 0.0) / cycles,
        "dram_bound": l3_miss / cycles,
        "store_bound": stores / cycles,
    }


def normalize_memory_breakdown(raw: Union[Mapping[str, float], Sequence[float]],
                               memory_bound: float) -> Dict[str, float]:
    """M_norm = M * memory_bound / (L1 + L2 + L3 + DRAM + Store)."""
    if isinstance(raw, Mapping):
        values = [float(raw[k]) for k in MEMORY_COMPONENTS]
    else:
        values = [float(v) for v in raw]
        if len(values) != len(MEMORY_COMPONENTS):
            raise ValueError("expected five memory components")
    if any(v < 0 or math.isnan(v) for v in values):
        raise ValueError("memory components must be non-negative")
    total = sum(values)
    if total == 0:
        if memory_bound > 0:
            raise InconsistentBreakdown("memory_bound > 0 but every memory component is zero")
        return dict.fromkeys(MEMORY_COMPONENTS, 0.0)
    return {k: v * memory_bound / total for k, v in zip(MEMORY_COMPONENTS, values)}


def _clamp(x: float) -> float:
    return min(max(x, 0.0), 1.0)


@dataclass
class TmamBreakdown:
    """Metric levels 2-4; a level that could not be computed is None and
    its reason is in ``unavailable``."""

    cycle_breakdown: Optional[Dict[str, float]] = None
    backend: Optional[Dict[str, float]] = None
    memory: Optional[Dict[str, float]] = None
    memory_raw: Optional[Dict[str, float]] = None
    unavailable: Dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TmamBreakdown":
        return cls(**data)


def compute_tmam(sample: CounterSample, max_level: int = MAX_LEVEL) -> TmamBreakdown:
    out = TmamBreakdown()
    if max_level < 2:
        out.unavailable.update(cycle_breakdown="not requested", backend="not requested",
                               memory="not requested")
        return out
    try:
        out.cycle_breakdown = compute_cycle_breakdown(sample)
    except MetricUnavailable as exc:
        out.unavailable["cycle_breakdown"] = str(exc)
    if max_level < 3:
        out.unavailable.update(backend="not requested", memory="not requested")
        return out
    if out.cycle_breakdown is None:
        out.unavailable["backend"] = "needs the cycle breakdown"
    else:
        try:
            out.backend = compute_backend_split(sample, out.cycle_breakdown["backend_bound"],
                                                out.cycle_breakdown["retiring"])
        except MetricUnavailable as exc:
            out.unavailable["backend"] = str(exc)
    if max_level < 4:
        out.unavailable["memory"] = "not requested"
        return out
    try:
        out.memory_raw = raw_memory_components(sample)
    except MetricUnavailable as exc:
        out.unavailable["memory"] = str(exc)
        return out
    if out.backend is None:
        out.unavailable["memory"] = "needs the back-end split"
        return out
    try:
        out.memory = normalize_memory_breakdown(out.memory_raw, out.backend["memory_bound"])
    except InconsistentBreakdown as exc:
        out.unavailable["memory"] = str(exc)
    return out


class CounterHandle:
    """Counters for metric levels 1..level, armed but not yet counting.

    ``start``/``stop`` bracket exactly the region to attribute.  Events the
    host rejects are dropped and the levels needing them report unavailable;
    PermissionDenied from the kernel propagates."""

    def __init__(self, event_map: EventMap, level: int) -> None:
        self.event_map = event_map
        self.level = level
        self.skipped = {name: "unavailable in event map"
                        for lvl in range(1, level + 1) for name in LEVEL_INPUTS[lvl]
                        if event_map.events.get(name) is None}
        self._set = CounterSet(event_map.events_for_levels(level))
        self.skipped.update(self._set.failed)

    @property
    def events(self):
        return self._set.names

    def start(self) -> None:
        self._set.start()

    def stop(self) -> CounterSample:
        self._set.stop()
        return CounterSample.from_readings(self._set.read(), self.event_map.issue_width)

    def close(self) -> None:
        self._set.close()

    def __enter__(self) -> "CounterHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_counters(event_map: EventMap, level: int = MAX_LEVEL) -> CounterHandle:
    return CounterHandle(event_map, level)
