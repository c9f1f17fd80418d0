"""Hardware counter access and top-down cycle accounting."""

from .eventmap import EventMap, EventMapError, load_event_map, host_cpu_id
from .perf import PermissionDenied, UnsupportedEvent, PerfError
from .tmam import (
    CounterSample,
    InconsistentBreakdown,
    MetricUnavailable,
    TmamBreakdown,
    compute_backend_split,
    compute_cpi,
    compute_cycle_breakdown,
    compute_tmam,
    normalize_memory_breakdown,
    open_counters,
    raw_memory_components,
)

__all__ = [
    "CounterSample", "EventMap", "EventMapError", "InconsistentBreakdown", "MetricUnavailable",
    "PerfError", "PermissionDenied", "TmamBreakdown", "UnsupportedEvent", "compute_backend_split",
    "compute_cpi", "compute_cycle_breakdown", "compute_tmam", "host_cpu_id", "load_event_map",
    "normalize_memory_breakdown", "open_counters", "raw_memory_components",
]
