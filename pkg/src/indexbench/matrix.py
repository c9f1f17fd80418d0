"""Preset experiment grids and the sequential matrix driver.

A preset is an ini file: a ``[matrix]`` section (scale, seed, warm-up,
mixes, indexes) plus one section per experiment set giving the pattern,
population and request counts, and ``lo:hi`` key bounds.
"""

from __future__ import annotations

import configparser
import json
import time
import traceback
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .plotting import CHART_KINDS, ChartError, render_breakdown_chart
from .profiler import PermissionDenied
from .report import ReportRow, emit_report, validate_rows, write_csv
from .runner import INDEX_KINDS, EnvironmentProblem, ExperimentConfig, RunReport, run_experiment
from .workload import DEFAULT_WARMUP, Pattern, WorkloadConfig, builtin_mix

PRESETS = ("desk-small", "desk-large")


def parse_bounds(text: str) -> Tuple[int, int]:
    """``"lo:hi"`` -> (lo, hi), half-open."""
    lo, sep, hi = text.strip().partition(":")
    if not sep:
        raise ValueError(f"bounds must look like lo:hi, got {text!r}")
    try:
        return int(lo, 0), int(hi, 0)
    except ValueError:
        raise ValueError(f"bounds must be integers, got {text!r}") from None


def _split_list(text: str) -> List[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass(frozen=True)
class ExperimentSet:
    name: str
    pattern: Pattern
    populate: int
    requests: int
    read_bounds: Tuple[int, int]
    insert_bounds: Tuple[int, int]


@dataclass
class Preset:
    scale: str
    seed: int
    warmup: int
    mixes: List[str]
    indexes: List[str]
    sets: List[ExperimentSet]

    def cells(self) -> List[Tuple[ExperimentSet, str, str]]:
        return [(s, m, i) for s in self.sets for m in self.mixes for i in self.indexes]


def load_preset(name_or_path: str) -> Preset:
    """Load a shipped preset by name, or any preset file by path."""
    parser = configparser.ConfigParser(interpolation=None)
    if name_or_path in PRESETS:
        parser.read_string(resources.files("indexbench.data").joinpath(f"{name_or_path}.ini").read_text())
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise ValueError(f"unknown preset {name_or_path!r}; choose {PRESETS} or give a file")
        parser.read_string(path.read_text())
    if not parser.has_section("matrix"):
        raise ValueError("preset lacks a [matrix] section")
    head = parser["matrix"]
    sets = []
    for name in parser.sections():
        if name == "matrix":
            continue
        sec = parser[name]
        sets.append(ExperimentSet(
            name=name,
            pattern=Pattern(sec["pattern"].strip().lower()),
            populate=int(sec["populate"]),
            requests=int(sec["requests"]),
            read_bounds=parse_bounds(sec["read-bounds"]),
            insert_bounds=parse_bounds(sec["insert-bounds"]),
        ))
    mixes = _split_list(head.get("mixes", "read-only, read-heavy, write-heavy, insert-only"))
    for m in mixes:
        builtin_mix(m)
    indexes = _split_list(head.get("indexes", ",".join(INDEX_KINDS)))
    for i in indexes:
        if i not in INDEX_KINDS:
            raise ValueError(f"unknown index {i!r} in preset")
    return Preset(
        scale=head.get("scale", Path(name_or_path).stem),
        seed=int(head.get("seed", "0")),
        warmup=int(head.get("warmup", str(DEFAULT_WARMUP))),
        mixes=mixes,
        indexes=indexes,
        sets=sets,
    )


def cell_config(preset: Preset, exp: ExperimentSet, mix: str, index: str, **options) -> ExperimentConfig:
    wl = WorkloadConfig(
        population_count=exp.populate,
        request_count=exp.requests,
        mix=builtin_mix(mix),
        read_bounds=exp.read_bounds,
        insert_bounds=exp.insert_bounds,
        pattern=exp.pattern,
        seed=preset.seed,
    )
    tunables = dict(options.pop("tunables", {}).get(index, {}))
    options.setdefault("warmup_count", preset.warmup)
    return ExperimentConfig(index_kind=index, workload=wl, tunables=tunables,
                            experiment=exp.name, scale=preset.scale, **options)


@dataclass
class MatrixResult:
    reports: List[RunReport] = field(default_factory=list)
    failures: List[dict] = field(default_factory=list)
    charts: List[str] = field(default_factory=list)
    problems: List[str] = field(default_factory=list)
    environment_error: Optional[str] = None
    manifest_path: Optional[Path] = None


def run_matrix(preset: str | Preset, output_dir: Optional[Path] = None, *,
               only_sets: Optional[Sequence[str]] = None,
               only_mixes: Optional[Sequence[str]] = None,
               only_indexes: Optional[Sequence[str]] = None,
               overrides: Optional[Dict[str, Tuple[int, int]]] = None,
               charts: bool = True,
               progress: Optional[Callable[[str], None]] = None,
               **options) -> MatrixResult:
    """Run every (set, mix, index) cell one after another.

    A failing cell is recorded and the grid continues; counter permission
    problems abort, since every later cell would hit them too.  With an
    output directory, writes per-cell JSON, ``reports.csv``,
    ``reports.json``, charts per experiment set and ``manifest.json``.
    ``overrides`` maps a set name to replacement (populate, requests).
    """
    p = preset if isinstance(preset, Preset) else load_preset(preset)
    out = Path(output_dir) if output_dir is not None else None
    result = MatrixResult()
    started = time.time()
    cells = [c for c in p.cells()
             if (only_sets is None or c[0].name in only_sets)
             and (only_mixes is None or c[1] in only_mixes)
             and (only_indexes is None or c[2] in only_indexes)]
    for n, (exp, mix, index) in enumerate(cells, 1):
        if overrides and exp.name in overrides:
            pop, req = overrides[exp.name]
            exp = ExperimentSet(exp.name, exp.pattern, pop, req, exp.read_bounds, exp.insert_bounds)
        label = f"{exp.name}/{mix}/{index}"
        if progress:
            progress(f"[{n}/{len(cells)}] {label}")
        try:
            cfg = cell_config(p, exp, mix, index, output_dir=out / "cells" if out else None, **dict(options))
            result.reports.append(run_experiment(cfg))
        except (PermissionDenied, EnvironmentProblem) as exc:
            result.environment_error = f"{label}: {exc}"
            result.failures.append({"cell": label, "error": str(exc), "kind": "environment"})
            break
        except Exception as exc:  # keep the grid going; the manifest carries the trace
            result.failures.append({"cell": label, "error": repr(exc), "kind": "run",
                                    "trace": traceback.format_exc()})

    rows = [ReportRow.from_report(r) for r in result.reports]
    result.problems = validate_rows(rows)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if result.reports:
            with open(out / "reports.csv", "w", newline="") as fh:
                write_csv(rows, fh)
            (out / "reports.json").write_text(
                json.dumps([r.to_dict() for r in result.reports], indent=2, sort_keys=True) + "\n")
        if charts:
            result.charts = render_set_charts(rows, out / "charts", result.failures)
        manifest = {
            "scale": p.scale,
            "seed": p.seed,
            "cells_planned": len(cells),
            "cells_completed": len(result.reports),
            "failures": result.failures,
            "validation_problems": result.problems,
            "environment_error": result.environment_error,
            "charts": result.charts,
            "elapsed_s": round(time.time() - started, 3),
        }
        result.manifest_path = out / "manifest.json"
        result.manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    return result


def render_set_charts(rows: Sequence[ReportRow], chart_dir: Path,
                      failures: Optional[List[dict]] = None) -> List[str]:
    """Every chart kind for each experiment set present in ``rows``."""
    written = []
    groups: Dict[Tuple[str, str], List[ReportRow]] = {}
    for r in rows:
        groups.setdefault((r.scale, r.experiment), []).append(r)
    for (scale, experiment), members in groups.items():
        for kind in CHART_KINDS:
            path = chart_dir / f"{scale}_{experiment}_{kind}.svg"
            try:
                render_breakdown_chart(members, kind, path)
                written.append(str(path))
            except ChartError as exc:
                if failures is not None:
                    failures.append({"cell": f"chart {path.name}", "error": str(exc), "kind": "chart"})
    return written


def emit_matrix(result: MatrixResult, fmt: str, stream) -> None:
    if result.reports:
        emit_report(result.reports, fmt, stream)
