"""Four-phase experiment lifecycle: population, warm-up, run, wrap-up.

Counters (when enabled) bracket only the run phase.  Memory is sampled from
the OS (RSS) and, with the allocator shim on, from ``tracemalloc``; both are
reported gross and net of a baseline taken before population.
"""

from __future__ import annotations

import dataclasses
import gc
import json
import os
import platform
import sys
import threading
import time
import tracemalloc
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import psutil

from . import __version__
from .alex import AlexConfig, AlexIndex
from .art import ArtIndex
from .btree import BPlusTree
from .core import NullIndex, OracleIndex, OrderedIndex
from .profiler import (
    MetricUnavailable,
    TmamBreakdown,
    compute_cpi,
    compute_tmam,
    host_cpu_id,
    load_event_map,
    open_counters,
)
from .workload import (
    DEFAULT_WARMUP,
    PRNG_NAME,
    RequestStream,
    WorkloadConfig,
    generate_population,
    iter_request_chunks,
    mix_name,
    warmup_stream,
)

INDEX_KINDS = ("alex", "art", "btree")
PHASES = ("population", "warmup", "run", "wrapup")
RSS_SAMPLE_INTERVAL_S = 1.0
MAX_DISPATCH_OVERHEAD = 0.05


class EnvironmentProblem(RuntimeError):
    """The host cannot provide something the configuration insists on."""


def make_index(kind: str, tunables: Optional[dict] = None) -> OrderedIndex:
    tunables = dict(tunables or {})
    if kind == "alex":
        return AlexIndex(AlexConfig(**tunables))
    if kind == "btree":
        return BPlusTree(**tunables)
    if tunables:
        raise ValueError(f"{kind} takes no tunables, got {sorted(tunables)}")
    if kind == "art":
        return ArtIndex()
    if kind == "null":
        return NullIndex()
    if kind == "oracle":
        return OracleIndex()
    raise ValueError(f"unknown index kind {kind!r}")


@dataclass
class ExperimentConfig:
    index_kind: str
    workload: WorkloadConfig
    tunables: Dict[str, object] = field(default_factory=dict)
    profile: bool = False
    levels: int = 4
    require_counters: bool = False
    event_map_path: Optional[str] = None
    warmup_count: int = DEFAULT_WARMUP
    alloc_trace: bool = False
    rss_sidecar: bool = True
    pin_cpu: bool = True
    check_overhead: bool = True
    output_dir: Optional[Path] = None
    experiment: str = "custom"
    scale: str = "custom"

    def __post_init__(self) -> None:
        if self.index_kind not in INDEX_KINDS + ("null", "oracle"):
            raise ValueError(f"unknown index kind {self.index_kind!r}")
        if not 1 <= self.levels <= 4:
            raise ValueError("levels must be in 1..4")
        if self.warmup_count < 0:
            raise ValueError("warmup_count must be non-negative")
        if self.output_dir is not None:
            self.output_dir = Path(self.output_dir)

    @property
    def label(self) -> str:
        return f"{self.experiment}_{mix_name(self.workload.mix)}_{self.index_kind}"

    def echo(self) -> dict:
        wl = self.workload
        return {
            "index_kind": self.index_kind,
            "tunables": dict(self.tunables),
            "population_count": wl.population_count,
            "request_count": wl.request_count,
            "mix": list(wl.mix.as_tuple()),
            "read_bounds": list(wl.read_bounds),
            "insert_bounds": list(wl.insert_bounds),
            "population_bounds": list(wl.pop_bounds),
            "pattern": wl.pattern.value,
            "seed": wl.seed,
            "warmup_count": self.warmup_count,
            "profile": self.profile,
            "levels": self.levels,
            "alloc_trace": self.alloc_trace,
            "experiment": self.experiment,
            "scale": self.scale,
        }


@dataclass
class RunReport:
    index_kind: str
    experiment: str
    scale: str
    pattern: str
    mix: str
    mix_pct: List[float]
    seed: int
    prng: str
    population_count: int
    request_count: int
    warmup_count: int
    phase_ns: Dict[str, int]
    avg_exec_time_us: float
    outcomes: Dict[str, int]
    final_count: int
    memory: Dict[str, Optional[int]]
    memory_footprint_bytes: int
    instructions_per_request: Optional[float]
    cpi: Optional[float]
    counters: Dict[str, object]
    tmam: TmamBreakdown
    index_stats: Dict[str, object]
    dispatch_overhead: Optional[float]
    config: Dict[str, object]
    host: Dict[str, object]
    unavailable: Dict[str, str] = field(default_factory=dict)
    repeat: int = 0
    version: str = __version__

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["tmam"] = self.tmam.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "RunReport":
        data = dict(data)
        data["tmam"] = TmamBreakdown.from_dict(data["tmam"])
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        return cls.from_dict(json.loads(text))


def time_phase(body: Callable[[], object]) -> Tuple[int, object]:
    """Run ``body`` and return (elapsed ns on the monotonic clock, result)."""
    start = time.perf_counter_ns()
    result = body()
    return time.perf_counter_ns() - start, result


def _rss_bytes() -> Optional[int]:
    try:
        return psutil.Process().memory_info().rss
    except (psutil.Error, OSError):
        return None


def measure_memory_footprint() -> Dict[str, Optional[int]]:
    """Current RSS and, if tracing, live bytes allocated through Python."""
    return {
        "rss_bytes": _rss_bytes(),
        "alloc_bytes": tracemalloc.get_traced_memory()[0] if tracemalloc.is_tracing() else None,
    }


class RssSampler(threading.Thread):
    """Samples RSS every ``interval`` seconds into a CSV sidecar
    (timestamp_ms, rss_bytes) and tracks the peak."""

    def __init__(self, path: Optional[Path], interval: float = RSS_SAMPLE_INTERVAL_S) -> None:
        super().__init__(name="rss-sampler", daemon=True)
        self.path = path
        self.interval = interval
        self.peak = 0
        self.samples: List[Tuple[int, int]] = []
        self._halt = threading.Event()

    def _sample(self) -> None:
        rss = _rss_bytes()
        if rss is None:
            return
        self.peak = max(self.peak, rss)
        self.samples.append((int(time.time() * 1000), rss))

    def run(self) -> None:
        self._sample()
        while not self._halt.wait(self.interval):
            self._sample()

    def stop(self) -> None:
        self._halt.set()
        self.join()
        self._sample()
        if self.path is not None:
            with open(self.path, "w") as fh:
                fh.write("timestamp_ms,rss_bytes\n")
                for ts, rss in self.samples:
                    fh.write(f"{ts},{rss}\n")


def host_metadata() -> dict:
    meta = {
        "hostname": platform.node(),
        "platform": platform.platform(),
        "machine": platform.machine(),
        "python": sys.version.split()[0],
        "cpu_id": host_cpu_id(),
        "cpu_model": _cpu_model(),
        "logical_cpus": os.cpu_count(),
        "total_memory_bytes": psutil.virtual_memory().total,
    }
    try:
        meta["perf_event_paranoid"] = int(Path("/proc/sys/kernel/perf_event_paranoid").read_text())
    except (OSError, ValueError):
        meta["perf_event_paranoid"] = None
    return meta


def _cpu_model() -> str:
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.startswith("model name"):
                return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or "unknown"


def pin_to_one_cpu() -> Optional[int]:
    """Restrict this process to a single CPU; returns it, or None if the OS
    does not allow it."""
    if not hasattr(os, "sched_setaffinity"):
        return None
    try:
        allowed = os.sched_getaffinity(0)
        cpu = min(allowed)
        os.sched_setaffinity(0, {cpu})
        return cpu
    except OSError:
        return None


def _new_tally() -> Dict[str, int]:
    return {
        "read_found": 0, "read_missing": 0,
        "update_ok": 0, "update_not_found": 0,
        "insert_ok": 0, "insert_exists": 0,
        "delete_ok": 0, "delete_not_found": 0,
    }


def dispatch(index: OrderedIndex, chunks: Iterable[RequestStream], tally: Dict[str, int]) -> None:
    """Apply every request; anomalies are counted, never raised.

    Only anomalies are counted in the loop; successes are derived from the
    per-kind totals afterwards.  Chunks holding a single request kind go
    through ``map`` so that the iteration itself runs in C."""
    read, update, insert, delete = index.read, index.update, index.insert, index.delete
    totals = [0, 0, 0, 0]
    r_miss = u_nf = i_ex = d_nf = 0
    for chunk in chunks:
        counts = chunk.counts()
        n = len(chunk)
        totals[0] += counts["read"]
        totals[1] += counts["update"]
        totals[2] += counts["insert"]
        totals[3] += counts["delete"]
        keys = chunk.keys.tolist()
        if counts["read"] == n:
            r_miss += list(map(read, keys)).count(None)
            continue
        if counts["insert"] == n:
            i_ex += list(map(insert, keys, chunk.values.tolist())).count(False)
            continue
        for kind, key, value in zip(chunk.kinds.tolist(), keys, chunk.values.tolist()):
            if kind == 0:
                if read(key) is None:
                    r_miss += 1
            elif kind == 1:
                if not update(key, value):
                    u_nf += 1
            elif kind == 2:
                if not insert(key, value):
                    i_ex += 1
            elif not delete(key):
                d_nf += 1
    tally["read_found"] += totals[0] - r_miss
    tally["read_missing"] += r_miss
    tally["update_ok"] += totals[1] - u_nf
    tally["update_not_found"] += u_nf
    tally["insert_ok"] += totals[2] - i_ex
    tally["insert_exists"] += i_ex
    tally["delete_ok"] += totals[3] - d_nf
    tally["delete_not_found"] += d_nf


def _materialise(config: WorkloadConfig, population) -> List[RequestStream]:
    return list(iter_request_chunks(config, population))


def run_experiment(config: ExperimentConfig, repeat: int = 0) -> RunReport:
    wl = config.workload
    unavailable: Dict[str, str] = {}
    out_dir = config.output_dir
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    pinned = pin_to_one_cpu() if config.pin_cpu else None

    event_map = handle = None
    if config.profile:
        event_map = load_event_map(config.event_map_path)
        # PermissionDenied propagates: the caller asked for counters
        handle = open_counters(event_map, config.levels)
        if config.require_counters and handle.skipped:
            handle.close()
            raise EnvironmentProblem("counters unavailable: " + ", ".join(sorted(handle.skipped)))

    sampler = None
    if config.rss_sidecar:
        sidecar = out_dir / f"{config.label}_r{repeat}_rss.csv" if out_dir is not None else None
        sampler = RssSampler(sidecar)
        sampler.start()

    try:
        gc.collect()
        baseline = measure_memory_footprint()
        population = generate_population(wl)
        requests = _materialise(wl, population)
        warm = warmup_stream(config.warmup_count, wl.read_bounds, rng=wl.streams()[2])
        if config.alloc_trace:
            tracemalloc.start()
            baseline["alloc_bytes"] = tracemalloc.get_traced_memory()[0]

        index = make_index(config.index_kind, config.tunables)
        phase_ns: Dict[str, int] = {}

        def populate() -> None:
            keys = population.tolist()
            index.bulk_load_arrays(keys, keys) if hasattr(index, "bulk_load_arrays") \
                else index.bulk_load(list(zip(keys, keys)))

        phase_ns["population"], _ = time_phase(populate)
        if len(index) != wl.population_count and config.index_kind != "null":
            raise RuntimeError(f"population loaded {len(index)} of {wl.population_count} keys")

        warm_tally = _new_tally()
        phase_ns["warmup"], _ = time_phase(lambda: dispatch(index, [warm], warm_tally))

        tally = _new_tally()
        if handle is not None:
            handle.start()
        phase_ns["run"], _ = time_phase(lambda: dispatch(index, requests, tally))
        sample = handle.stop() if handle is not None else None

        def wrap_up() -> Dict[str, Optional[int]]:
            nonlocal requests, warm, population
            requests = warm = population = None
            gc.collect()
            return measure_memory_footprint()

        phase_ns["wrapup"], end = time_phase(wrap_up)
        final_count = len(index)
        index_stats = index.stats()
        if config.alloc_trace:
            tracemalloc.stop()
    finally:
        if sampler is not None:
            sampler.stop()
        if handle is not None:
            handle.close()

    memory = {
        "rss_bytes": end["rss_bytes"],
        "rss_baseline_bytes": baseline["rss_bytes"],
        "net_rss_bytes": None,
        "peak_rss_bytes": sampler.peak if sampler is not None else None,
        "alloc_bytes": end["alloc_bytes"],
        "alloc_baseline_bytes": baseline["alloc_bytes"],
        "net_alloc_bytes": None,
    }
    if end["rss_bytes"] is not None and baseline["rss_bytes"] is not None:
        memory["net_rss_bytes"] = end["rss_bytes"] - baseline["rss_bytes"]
    else:
        unavailable["rss"] = "RSS source unavailable; allocator count only"
    if end["alloc_bytes"] is not None:
        memory["net_alloc_bytes"] = end["alloc_bytes"] - baseline["alloc_bytes"]
    else:
        unavailable["alloc"] = "allocator shim disabled"
    if sampler is None:
        unavailable["peak_rss"] = "RSS sampler disabled"
    footprint = memory["rss_bytes"] if memory["rss_bytes"] is not None else (memory["alloc_bytes"] or 0)

    counters: Dict[str, object] = {}
    cpi = ipr = None
    if sample is not None:
        counters = {
            "values": dict(sample.counts),
            "multiplex_ratio": dict(sample.multiplex),
            "skipped": dict(handle.skipped),
            "event_map": event_map.to_dict(),
        }
        try:
            cpi = compute_cpi(sample)
            ipr = sample.instructions / wl.request_count if wl.request_count else None
        except MetricUnavailable as exc:
            unavailable["cpi"] = unavailable["instructions_per_request"] = str(exc)
        tmam = compute_tmam(sample, config.levels)
    else:
        reason = "profiling disabled"
        unavailable["cpi"] = unavailable["instructions_per_request"] = reason
        unavailable["counters"] = reason
        tmam = TmamBreakdown(unavailable={k: reason for k in ("cycle_breakdown", "backend", "memory")})
    if ipr is None and "instructions_per_request" not in unavailable:
        unavailable["instructions_per_request"] = "no requests"

    overhead = None
    if config.check_overhead and phase_ns["run"] > 0 and config.index_kind != "null":
        overhead = measure_dispatch_overhead(wl) / phase_ns["run"]
    elif config.check_overhead:
        unavailable["dispatch_overhead"] = "not applicable"
    else:
        unavailable["dispatch_overhead"] = "check disabled"

    host = host_metadata()
    host["pinned_cpu"] = pinned
    report = RunReport(
        index_kind=config.index_kind,
        experiment=config.experiment,
        scale=config.scale,
        pattern=wl.pattern.value,
        mix=mix_name(wl.mix),
        mix_pct=list(wl.mix.as_tuple()),
        seed=wl.seed,
        prng=PRNG_NAME,
        population_count=wl.population_count,
        request_count=wl.request_count,
        warmup_count=config.warmup_count,
        phase_ns=phase_ns,
        avg_exec_time_us=(phase_ns["run"] / wl.request_count / 1000.0) if wl.request_count else 0.0,
        outcomes=tally,
        final_count=final_count,
        memory=memory,
        memory_footprint_bytes=footprint,
        instructions_per_request=ipr,
        cpi=cpi,
        counters=counters,
        tmam=tmam,
        index_stats=_jsonable(index_stats),
        dispatch_overhead=overhead,
        config=config.echo(),
        host=host,
        unavailable=unavailable,
        repeat=repeat,
    )
    if out_dir is not None:
        (out_dir / f"{config.label}_r{repeat}.json").write_text(report.to_json())
    return report


def measure_dispatch_overhead(wl: WorkloadConfig) -> int:
    """Run time of the dispatch loop alone, over the same request stream,
    against the no-op index."""
    population = generate_population(wl)
    chunks = _materialise(wl, population)
    tally = _new_tally()
    ns, _ = time_phase(lambda: dispatch(NullIndex(), chunks, tally))
    return ns


def _jsonable(obj):
    return json.loads(json.dumps(obj, default=str))
