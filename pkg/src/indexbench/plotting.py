"""Grouped and stacked bar charts of report rows, written as SVG.

Every plotted number comes from ``ReportRow`` fields, so a chart can be
rebuilt from the emitted CSV alone.  ``render_breakdown_chart`` returns the
plotted values alongside writing the file.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .profiler.tmam import BACKEND_COMPONENTS, CYCLE_COMPONENTS, MEMORY_COMPONENTS  # noqa: E402
from .report import ReportRow  # noqa: E402
from .runner import INDEX_KINDS, RunReport  # noqa: E402
from .workload import MIX_ORDER  # noqa: E402

CHART_KINDS = ("exec_time", "instr", "cpi", "level1", "backend", "memory_norm", "memory_abs")

# kind -> (title, y label, segments or a single field)
_SPECS: Dict[str, Tuple[str, str, Tuple[str, ...]]] = {
    "exec_time": ("Average execution time per request", "time per request (us)", ("avg_exec_time_us",)),
    "instr": ("Instructions retired per request", "instructions per request", ("instr_per_request",)),
    "cpi": ("Cycles per instruction", "CPI", ("cpi",)),
    "level1": ("Breakdown of execution cycles (normalized)", "fraction of pipeline slots", CYCLE_COMPONENTS),
    "backend": ("Breakdown of back-end stalls (normalized)", "fraction of pipeline slots", BACKEND_COMPONENTS),
    "memory_norm": ("Breakdown of memory stalls (normalized)", "fraction of pipeline slots", MEMORY_COMPONENTS),
    "memory_abs": ("Breakdown of memory stalls per request", "time per request (us)", MEMORY_COMPONENTS),
}

_COLOURS = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"]
_HATCHES = {"alex": "", "art": "//", "btree": ".."}


class ChartError(ValueError):
    pass


@dataclass
class Bar:
    mix: str
    index_kind: str
    segments: Dict[str, Optional[float]]

    @property
    def height(self) -> Optional[float]:
        if any(v is None for v in self.segments.values()):
            return None
        return sum(self.segments.values())


@dataclass
class ChartData:
    kind: str
    title: str
    ylabel: str
    groups: List[str]
    bars: List[Bar] = field(default_factory=list)

    def bar(self, mix: str, index_kind: str) -> Bar:
        for b in self.bars:
            if b.mix == mix and b.index_kind == index_kind:
                return b
        raise KeyError((mix, index_kind))


def _as_rows(items: Sequence[Union[ReportRow, RunReport]]) -> List[ReportRow]:
    return [ReportRow.from_report(x) if isinstance(x, RunReport) else x for x in items]


def _ordered(values, preferred) -> List[str]:
    seen = list(dict.fromkeys(values))
    return [v for v in preferred if v in seen] + [v for v in seen if v not in preferred]


def chart_data(rows: Sequence[Union[ReportRow, RunReport]], kind: str) -> ChartData:
    """Bars grouped by mix, one per index kind, without drawing anything."""
    if kind not in _SPECS:
        raise ChartError(f"chart kind must be one of {CHART_KINDS}")
    rows = _as_rows(rows)
    if not rows:
        raise ChartError("no rows to chart")
    axes = {(r.scale, r.experiment, r.pattern, r.population_count) for r in rows}
    if len(axes) > 1:
        raise ChartError(f"rows mix scales or experiment sets: {sorted(axes)}")
    seen = set()
    for r in rows:
        cell = (r.mix, r.index_kind)
        if cell in seen:
            raise ChartError(f"duplicate row for {cell}; chart one repeat at a time")
        seen.add(cell)
    title, ylabel, parts = _SPECS[kind]
    data = ChartData(kind, title, ylabel, _ordered([r.mix for r in rows], MIX_ORDER))
    kinds = _ordered([r.index_kind for r in rows], INDEX_KINDS)
    by_cell = {(r.mix, r.index_kind): r for r in rows}
    for mix in data.groups:
        for idx in kinds:
            row = by_cell.get((mix, idx))
            if row is None:
                continue
            if kind == "memory_abs":
                t = row.avg_exec_time_us
                segs = {p: (getattr(row, p) * t if getattr(row, p) is not None else None) for p in parts}
            else:
                segs = {p: getattr(row, p) for p in parts}
            data.bars.append(Bar(mix, idx, segs))
    return data


def render_breakdown_chart(rows: Sequence[Union[ReportRow, RunReport]], kind: str,
                           path: Union[str, Path]) -> ChartData:
    """Draw a grouped (single metric) or stacked (breakdown) bar chart to
    ``path``; the format follows the suffix, SVG by default."""
    data = chart_data(rows, kind)
    path = Path(path)
    if not path.suffix:
        path = path.with_suffix(".svg")
    kinds = _ordered([b.index_kind for b in data.bars], INDEX_KINDS)
    width = 0.8 / max(len(kinds), 1)
    fig, ax = plt.subplots(figsize=(max(4.0, 1.6 * len(data.groups) + 1.5), 3.6))
    parts = list(data.bars[0].segments) if data.bars else []
    stacked = len(parts) > 1
    missing = 0
    for g, mix in enumerate(data.groups):
        for k, idx in enumerate(kinds):
            try:
                bar = data.bar(mix, idx)
            except KeyError:
                continue
            x = g - 0.4 + width * (k + 0.5)
            if bar.height is None:
                missing += 1
                ax.text(x, 0, "n/a", ha="center", va="bottom", fontsize=6, rotation=90)
                continue
            bottom = 0.0
            for s, (name, value) in enumerate(bar.segments.items()):
                colour = _COLOURS[s % len(_COLOURS)] if stacked else _COLOURS[k % len(_COLOURS)]
                ax.bar(x, value, width * 0.92, bottom=bottom, color=colour,
                       hatch=_HATCHES.get(idx, "xx") if stacked else None,
                       edgecolor="white" if not stacked else "black", linewidth=0.3,
                       label=name if stacked and g == 0 and k == 0 else (idx if not stacked and g == 0 else None))
                bottom += value
    ax.set_xticks(range(len(data.groups)))
    ax.set_xticklabels(data.groups, fontsize=8)
    ax.set_ylabel(data.ylabel, fontsize=8)
    ax.set_title(data.title, fontsize=9)
    ax.tick_params(axis="y", labelsize=7)
    if kind in ("level1", "backend", "memory_norm") and not missing:
        ax.set_ylim(0, max(1.0, max((b.height or 0) for b in data.bars) * 1.05))
    if stacked:
        ax.set_xlabel("bars per mix: " + ", ".join(kinds), fontsize=7)
    if data.bars and missing < len(data.bars):
        ax.legend(fontsize=6, frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
    elif data.bars:
        ax.text(0.5, 0.5, "metric unavailable on this host", transform=ax.transAxes,
                ha="center", va="center", fontsize=8)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return data


def chart_values(data: ChartData) -> Dict[Tuple[str, str], Optional[float]]:
    """(mix, index) -> bar height, for comparing charts with their source rows."""
    return {(b.mix, b.index_kind): b.height for b in data.bars}

