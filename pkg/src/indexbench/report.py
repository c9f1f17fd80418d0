"""Tabular projection of run reports: CSV, JSON and a plain-text table.

CSV columns, in this fixed order (empty cell = unavailable):

    index_kind, experiment, pattern, scale, mix, population_count,
    request_count, seed, repeat, avg_exec_time_us, instr_per_request, cpi,
    footprint_bytes, net_footprint_bytes, alloc_bytes, net_alloc_bytes,
    retiring, bad_speculation, frontend_bound, backend_bound,
    core_bound, memory_bound,
    l1_bound, l2_bound, l3_bound, dram_bound, store_bound

``footprint_bytes`` is end-of-run RSS (harness included); the ``net_``
variants subtract the baseline sampled before population.  ``alloc_*``
come from the allocator shim and are empty when it was off.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, TextIO, Union

from .profiler.tmam import BACKEND_COMPONENTS, CYCLE_COMPONENTS, MEMORY_COMPONENTS
from .runner import RunReport

FORMATS = ("csv", "json", "table")
LEVEL_SUM_TOLERANCE = 0.02


@dataclass
class ReportRow:
    index_kind: str
    experiment: str
    pattern: str
    scale: str
    mix: str
    population_count: int
    request_count: int
    seed: int
    repeat: int
    avg_exec_time_us: float
    instr_per_request: Optional[float]
    cpi: Optional[float]
    footprint_bytes: Optional[int]
    net_footprint_bytes: Optional[int]
    alloc_bytes: Optional[int]
    net_alloc_bytes: Optional[int]
    retiring: Optional[float] = None
    bad_speculation: Optional[float] = None
    frontend_bound: Optional[float] = None
    backend_bound: Optional[float] = None
    core_bound: Optional[float] = None
    memory_bound: Optional[float] = None
    l1_bound: Optional[float] = None
    l2_bound: Optional[float] = None
    l3_bound: Optional[float] = None
    dram_bound: Optional[float] = None
    store_bound: Optional[float] = None

    @classmethod
    def from_report(cls, r: RunReport) -> "ReportRow":
        row = cls(
            index_kind=r.index_kind, experiment=r.experiment, pattern=r.pattern, scale=r.scale,
            mix=r.mix, population_count=r.population_count, request_count=r.request_count,
            seed=r.seed, repeat=r.repeat, avg_exec_time_us=r.avg_exec_time_us,
            instr_per_request=r.instructions_per_request, cpi=r.cpi,
            footprint_bytes=r.memory.get("rss_bytes"), net_footprint_bytes=r.memory.get("net_rss_bytes"),
            alloc_bytes=r.memory.get("alloc_bytes"), net_alloc_bytes=r.memory.get("net_alloc_bytes"),
        )
        for part in (r.tmam.cycle_breakdown, r.tmam.backend, r.tmam.memory):
            for key, value in (part or {}).items():
                setattr(row, key, value)
        return row

    def level_sum(self) -> Optional[float]:
        values = [getattr(self, k) for k in CYCLE_COMPONENTS]
        if any(v is None for v in values):
            return None
        return sum(values)


CSV_COLUMNS: List[str] = [f.name for f in fields(ReportRow)]
_INT_COLUMNS = {"population_count", "request_count", "seed", "repeat", "footprint_bytes",
                "net_footprint_bytes", "alloc_bytes", "net_alloc_bytes"}
_STR_COLUMNS = {"index_kind", "experiment", "pattern", "scale", "mix"}

assert CSV_COLUMNS[-len(MEMORY_COMPONENTS):] == list(MEMORY_COMPONENTS)
assert all(c in CSV_COLUMNS for c in CYCLE_COMPONENTS + BACKEND_COMPONENTS)


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(rows: Sequence[ReportRow], out: TextIO) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for row in rows:
        writer.writerow([_cell(getattr(row, c)) for c in CSV_COLUMNS])


def read_csv(source: Union[str, Path, TextIO]) -> List[ReportRow]:
    """Parse CSV written by ``write_csv`` back into rows."""
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return read_csv(fh)
    reader = csv.DictReader(source)
    if reader.fieldnames != CSV_COLUMNS:
        raise ValueError("CSV header does not match the report schema")
    rows = []
    for rec in reader:
        kwargs = {}
        for col in CSV_COLUMNS:
            text = rec[col]
            if col in _STR_COLUMNS:
                kwargs[col] = text
            elif text == "":
                kwargs[col] = None
            elif col in _INT_COLUMNS:
                kwargs[col] = int(text)
            else:
                kwargs[col] = float(text)
        rows.append(ReportRow(**kwargs))
    return rows


def validate_rows(rows: Iterable[ReportRow], tolerance: float = LEVEL_SUM_TOLERANCE) -> List[str]:
    """Problems found in emitted rows; an empty list means all checks pass."""
    problems = []
    for row in rows:
        total = row.level_sum()
        if total is not None and abs(total - 1.0) > tolerance:
            problems.append(f"{row.index_kind}/{row.experiment}/{row.mix}: cycle breakdown sums to {total:.4f}")
        if row.backend_bound is not None and row.core_bound is not None and row.memory_bound is not None:
            if abs(row.core_bound + row.memory_bound - row.backend_bound) > tolerance:
                problems.append(f"{row.index_kind}/{row.experiment}/{row.mix}: back-end split does not add up")
        if row.cpi is not None and row.cpi < 0:
            problems.append(f"{row.index_kind}/{row.experiment}/{row.mix}: negative CPI")
    return problems


def _fmt(value, digits: int = 3) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        if math.isnan(value):
            return "n/a"
        return f"{value:.{digits}f}"
    return str(value)


TABLE_COLUMNS = [
    ("index", "index_kind"), ("experiment", "experiment"), ("mix", "mix"),
    ("us/req", "avg_exec_time_us"), ("instr/req", "instr_per_request"), ("CPI", "cpi"),
    ("RSS MiB", "footprint_bytes"), ("alloc MiB", "net_alloc_bytes"),
    ("retire", "retiring"), ("badspec", "bad_speculation"), ("FE", "frontend_bound"),
    ("BE", "backend_bound"), ("mem", "memory_bound"), ("dram", "dram_bound"),
]


def format_table(rows: Sequence[ReportRow]) -> str:
    body = []
    for row in rows:
        line = []
        for _, attr in TABLE_COLUMNS:
            value = getattr(row, attr)
            if attr in ("footprint_bytes", "net_alloc_bytes") and value is not None:
                value = value / (1 << 20)
                line.append(f"{value:.1f}")
            else:
                line.append(_fmt(value))
        body.append(line)
    header = [h for h, _ in TABLE_COLUMNS]
    widths = [max(len(h), *(len(r[i]) for r in body)) if body else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in body]
    return "\n".join(lines) + "\n"


def emit_report(reports: Sequence[RunReport], fmt: str, out: Union[None, str, Path, TextIO] = None) -> str:
    """Render reports as csv, json (RunReport verbatim) or table; write to
    ``out`` (a path or stream) when given, and return the text."""
    if not reports:
        raise ValueError("no reports to emit")
    if fmt == "csv":
        buf = io.StringIO()
        write_csv([ReportRow.from_report(r) for r in reports], buf)
        text = buf.getvalue()
    elif fmt == "json":
        payload = reports[0].to_dict() if len(reports) == 1 else [r.to_dict() for r in reports]
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    elif fmt == "table":
        text = format_table([ReportRow.from_report(r) for r in reports])
    else:
        raise ValueError(f"format must be one of {FORMATS}")
    if isinstance(out, (str, Path)):
        Path(out).write_text(text)
    elif out is not None:
        out.write(text)
    return text


def load_reports(path: Union[str, Path]) -> List[RunReport]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [RunReport.from_dict(d) for d in data]


def rows_as_dicts(rows: Iterable[ReportRow]) -> List[dict]:
    return [asdict(r) for r in rows]
