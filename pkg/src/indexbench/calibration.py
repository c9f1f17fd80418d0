"""Microbenchmarks with known micro-architectural signatures, used to check
that the event map produces sensible numbers on a host.

Each workload runs under the counters and is judged by a gate, e.g. a
pointer chase over a working set far larger than the last-level cache must
come out back-end (memory) bound.
"""

from __future__ import annotations

import array
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .profiler import (
    EventMap,
    MetricUnavailable,
    TmamBreakdown,
    compute_cpi,
    compute_tmam,
    load_event_map,
    open_counters,
)

DEFAULT_LLC_BYTES = 32 << 20
MAX_CHASE_BYTES = 512 << 20


def llc_bytes() -> int:
    """Size of the largest CPU cache, from sysfs."""
    best = 0
    base = Path("/sys/devices/system/cpu/cpu0/cache")
    for entry in base.glob("index*"):
        try:
            text = (entry / "size").read_text().strip()
        except OSError:
            continue
        mult = {"K": 1 << 10, "M": 1 << 20, "G": 1 << 30}.get(text[-1:], 1)
        digits = text.rstrip("KMG")
        if digits.isdigit():
            best = max(best, int(digits) * mult)
    return best or DEFAULT_LLC_BYTES


def make_cycle(n: int, seed: int = 1) -> array.array:
    """Single random cycle over ``n`` slots: following ``nxt[i]`` from any
    slot visits every slot once before returning."""
    order = np.random.default_rng(seed).permutation(n)
    nxt = np.empty(n, dtype=np.int64)
    nxt[order] = np.roll(order, -1)
    out = array.array("q")
    out.frombytes(nxt.tobytes())
    return out


def pointer_chase(nxt: array.array, steps: int) -> int:
    i = 0
    for _ in range(steps):
        i = nxt[i]
    return i


def fp_dependency_chain(steps: int) -> float:
    x = 1.0
    for _ in range(steps):
        x = x * 1.000000001 + 1e-12
    return x


def independent_adds(rounds: int, width: int = 1024) -> float:
    a = np.ones(width)
    b = np.full(width, 0.5)
    for _ in range(rounds):
        np.add(a, b, out=a)
    return float(a[0])


def no_op(_: int = 0) -> None:
    return None


@dataclass
class Measurement:
    name: str
    seconds: float
    counts: Dict[str, float]
    cpi: Optional[float]
    tmam: TmamBreakdown


@dataclass
class Gate:
    name: str
    passed: Optional[bool]
    detail: str


@dataclass
class CalibrationResult:
    event_map: dict
    llc_bytes: int
    measurements: List[Measurement] = field(default_factory=list)
    gates: List[Gate] = field(default_factory=list)


def measure(event_map: EventMap, name: str, body: Callable[[], object], levels: int = 4) -> Measurement:
    with open_counters(event_map, levels) as handle:
        handle.start()
        t = time.perf_counter()
        body()
        seconds = time.perf_counter() - t
        sample = handle.stop()
    try:
        cpi = compute_cpi(sample)
    except MetricUnavailable:
        cpi = None
    return Measurement(name, seconds, dict(sample.counts), cpi, compute_tmam(sample, levels))


def _gate(name: str, ok: Optional[bool], detail: str) -> Gate:
    return Gate(name, ok, detail)


def run_calibration(event_map: Optional[EventMap] = None, scale: float = 1.0) -> CalibrationResult:
    """Run every calibration workload and evaluate the gates.  A gate whose
    inputs are unavailable has ``passed = None``."""
    event_map = event_map or load_event_map()
    llc = llc_bytes()
    res = CalibrationResult(event_map.to_dict(), llc)
    steps = max(1000, int(2_000_000 * scale))

    big = make_cycle(max(1 << 16, min(10 * llc, MAX_CHASE_BYTES) // 8))
    small = make_cycle(2048)
    pointer_chase(small, 10_000)

    runs = {
        "noop_a": lambda: no_op(),
        "noop_b": lambda: no_op(),
        "chase_l1": lambda: pointer_chase(small, steps),
        "chase_dram": lambda: pointer_chase(big, steps),
        "fp_chain": lambda: fp_dependency_chain(steps),
        "independent_adds": lambda: independent_adds(max(100, steps // 20)),
    }
    m = {name: measure(event_map, name, body) for name, body in runs.items()}
    res.measurements = list(m.values())

    def instr(name: str) -> Optional[float]:
        return m[name].counts.get("instructions")

    a, b = instr("noop_a"), instr("noop_b")
    if a is None or b is None:
        res.gates.append(_gate("noop_repeatable", None, "instructions unavailable"))
    else:
        spread = abs(a - b) / max(a, b, 1.0)
        res.gates.append(_gate("noop_repeatable", spread <= 0.01, f"instruction spread {spread:.4f} (<= 0.01)"))

    cb = m["chase_dram"].tmam.cycle_breakdown
    res.gates.append(_gate("chase_backend_bound", None if cb is None else cb["backend_bound"] > 0.6,
                           "n/a" if cb is None else f"backend_bound {cb['backend_bound']:.3f} (> 0.6)"))
    be = m["chase_dram"].tmam.backend
    res.gates.append(_gate("chase_memory_over_core", None if be is None else be["memory_bound"] > be["core_bound"],
                           "n/a" if be is None else f"memory {be['memory_bound']:.3f} vs core {be['core_bound']:.3f}"))
    fe = m["fp_chain"].tmam.backend
    res.gates.append(_gate("fp_chain_core_dominant", None if fe is None else fe["core_bound"] > fe["memory_bound"],
                           "n/a" if fe is None else f"core {fe['core_bound']:.3f} vs memory {fe['memory_bound']:.3f}"))
    cpi = m["independent_adds"].cpi
    res.gates.append(_gate("adds_cpi_below_half", None if cpi is None else cpi < 0.5,
                           "n/a" if cpi is None else f"CPI {cpi:.3f} (< 0.5)"))
    floor = [x.cpi for x in res.measurements if x.cpi is not None]
    width = event_map.issue_width
    res.gates.append(_gate("cpi_floor", None if not floor else min(floor) >= 1.0 / width,
                           "n/a" if not floor else f"min CPI {min(floor):.3f} (>= {1.0 / width})"))
    mem_small = m["chase_l1"].tmam.memory
    mem_big = m["chase_dram"].tmam.memory
    res.gates.append(_gate("dram_bound_l1_resident", None if mem_small is None else mem_small["dram_bound"] < 0.05,
                           "n/a" if mem_small is None else f"dram_bound {mem_small['dram_bound']:.3f} (< 0.05)"))
    res.gates.append(_gate("dram_bound_10x_llc", None if mem_big is None else mem_big["dram_bound"] > 0.3,
                           "n/a" if mem_big is None else f"dram_bound {mem_big['dram_bound']:.3f} (> 0.3)"))
    return res
