"""``indexbench`` command line.

Subcommands: ``run`` (one experiment), ``matrix`` (a preset grid),
``report`` (re-emit saved results and draw charts), ``calibrate`` and
``dump-requests``.  Exit codes: 0 success, 1 usage, 2 partial matrix
failure, 3 environment (counters or permissions).
"""

from __future__ import annotations

import argparse
import configparser
import io
import json
import secrets
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .matrix import PRESETS, load_preset, parse_bounds, render_set_charts, run_matrix
from .plotting import CHART_KINDS, ChartError, render_breakdown_chart
from .profiler import PermissionDenied, load_event_map
from .profiler.eventmap import MAX_LEVEL
from .report import (
    FORMATS,
    ReportRow,
    emit_report,
    format_table,
    load_reports,
    read_csv,
    rows_as_dicts,
    write_csv,
)
from .runner import INDEX_KINDS, EnvironmentProblem, ExperimentConfig, make_index, run_experiment
from .workload import (
    DEFAULT_WARMUP,
    KEY_MAX,
    MixSpec,
    Pattern,
    WorkloadConfig,
    builtin_mix,
    generate_population,
    generate_requests,
)

EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_ENVIRONMENT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse would exit(2)
        raise UsageError(message)


# flag -> (type, default, help).  Defaults are applied after merging the
# config file so that an explicit flag always wins.
RUN_OPTIONS: Dict[str, tuple] = {
    "index": (str, None, f"index to benchmark: {', '.join(INDEX_KINDS)}"),
    "populate": (int, None, "number of keys loaded before the run"),
    "requests": (int, None, "number of requests in the run phase"),
    "mix": (str, None, "mix name (read-only, read-heavy, write-heavy, insert-only) or R,U,I,D percentages"),
    "read-bounds": (str, None, "lo:hi key range for reads, updates and deletes"),
    "insert-bounds": (str, None, "lo:hi key range for inserted keys"),
    "pattern": (str, "consecutive", "key pattern: consecutive or random"),
    "seed": (int, None, "seed for every stream (drawn from entropy when omitted)"),
    "tunables": (str, None, "ini file with [alex] and [btree] tunable sections"),
    "output": (str, None, "directory for JSON reports, CSV and the RSS sidecar"),
    "warmup": (int, DEFAULT_WARMUP, "number of warm-up reads"),
    "profile": (bool, False, "read hardware counters around the run phase"),
    "levels": (int, MAX_LEVEL, "deepest metric level to collect (1-4)"),
    "require-counters": (bool, False, "fail with exit 3 if any counter is unavailable"),
    "event-map": (str, None, "event map file overriding the shipped one"),
    "alloc-trace": (bool, False, "count allocator bytes (slows the run)"),
    "repeat": (int, 1, "number of repetitions"),
    "format": (str, "table", "stdout format: csv, json or table"),
    "no-pin": (bool, False, "do not pin the process to one CPU"),
}
_BOOL_TEXT = {"1": True, "true": True, "yes": True, "on": True,
              "0": False, "false": False, "no": False, "off": False}


def _add_run_options(p: argparse.ArgumentParser, skip: Sequence[str] = ()) -> None:
    p.add_argument("--config", help="key = value file mirroring these flags; flags override it")
    for flag, (kind, _, text) in RUN_OPTIONS.items():
        if flag in skip:
            continue
        if kind is bool:
            p.add_argument(f"--{flag}", action="store_const", const=True, default=None, help=text)
        else:
            p.add_argument(f"--{flag}", type=kind, default=None, help=text)


def read_config_file(path: str) -> Dict[str, object]:
    """Flag values from a ``key = value`` file (no section header needed)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}") from None
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[flags]\n" + text)
    except configparser.Error as exc:
        raise UsageError(f"bad config file {path}: {exc}") from None
    out: Dict[str, object] = {}
    for key, raw in parser["flags"].items():
        flag = key.strip().lstrip("-").replace("_", "-")
        if flag not in RUN_OPTIONS:
            raise UsageError(f"unknown key {key!r} in config file")
        kind = RUN_OPTIONS[flag][0]
        raw = raw.strip()
        if kind is bool:
            if raw.lower() not in _BOOL_TEXT:
                raise UsageError(f"{key} must be true or false, got {raw!r}")
            out[flag] = _BOOL_TEXT[raw.lower()]
        elif kind is int:
            try:
                out[flag] = int(raw, 0)
            except ValueError:
                raise UsageError(f"{key} must be an integer, got {raw!r}") from None
        else:
            out[flag] = raw
    return out


def _merged(ns: argparse.Namespace) -> Dict[str, object]:
    opts = read_config_file(ns.config) if getattr(ns, "config", None) else {}
    for flag in RUN_OPTIONS:
        value = getattr(ns, flag.replace("-", "_"), None)
        if value is not None:
            opts[flag] = value
    for flag, (_, default, _) in RUN_OPTIONS.items():
        opts.setdefault(flag, default)
    return opts


def parse_mix(text: str) -> MixSpec:
    if "," in text:
        parts = text.split(",")
        if len(parts) != 4:
            raise UsageError("mix needs four percentages: read,update,insert,delete")
        try:
            values = [float(p) for p in parts]
        except ValueError:
            raise UsageError(f"mix percentages must be numbers, got {text!r}") from None
        try:
            return MixSpec(*values)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    try:
        return builtin_mix(text)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None


def _bounds(text: str, name: str):
    try:
        return parse_bounds(text)
    except ValueError as exc:
        raise UsageError(f"--{name}: {exc}") from None


def _check_count(opts: Dict[str, object], flag: str) -> int:
    value = opts[flag]
    if value is None:
        raise UsageError(f"--{flag} is required")
    if value < 0:
        raise UsageError(f"--{flag} must be non-negative")
    return value


def workload_from_options(opts: Dict[str, object]) -> WorkloadConfig:
    populate = _check_count(opts, "populate")
    requests = _check_count(opts, "requests")
    if opts["mix"] is None:
        raise UsageError("--mix is required")
    mix = parse_mix(opts["mix"])
    try:
        pattern = Pattern(str(opts["pattern"]).lower())
    except ValueError:
        raise UsageError("--pattern must be consecutive or random") from None
    if opts["read-bounds"] is not None:
        read_bounds = _bounds(opts["read-bounds"], "read-bounds")
    else:
        span = populate if pattern is Pattern.CONSECUTIVE else 2 * populate
        read_bounds = (0, max(1, span))
    if opts["insert-bounds"] is not None:
        insert_bounds = _bounds(opts["insert-bounds"], "insert-bounds")
    elif pattern is Pattern.CONSECUTIVE:
        insert_bounds = (read_bounds[0] + populate, KEY_MAX + 1)
    else:
        insert_bounds = read_bounds
    seed = opts["seed"]
    if seed is None:
        seed = secrets.randbits(64)
        print(f"seed: {seed}", file=sys.stderr)
    if seed < 0:
        raise UsageError("--seed must be non-negative")
    try:
        return WorkloadConfig(populate, requests, mix, read_bounds, insert_bounds, pattern, seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def load_tunables(path: Optional[str]) -> Dict[str, Dict[str, object]]:
    """Per-index tunables from an ini file, values typed as int, float or
    bool where they parse as such."""
    if path is None:
        return {}
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(Path(path).read_text())
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read tunables: {exc}") from None
    out: Dict[str, Dict[str, object]] = {}
    for section in parser.sections():
        if section not in ("alex", "btree"):
            raise UsageError(f"tunables section [{section}] is not one of [alex], [btree]")
        values: Dict[str, object] = {}
        for key, raw in parser[section].items():
            values[key.replace("-", "_")] = _typed(raw)
        try:
            make_index(section, values)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad [{section}] tunables: {exc}") from None
        out[section] = values
    return out


def _typed(raw: str) -> object:
    text = raw.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _levels(opts: Dict[str, object]) -> int:
    levels = opts["levels"]
    if not 1 <= levels <= MAX_LEVEL:
        raise UsageError(f"--levels must be in 1..{MAX_LEVEL}")
    if opts["require-counters"] and not opts["profile"]:
        raise UsageError("--require-counters needs --profile")
    return levels


def config_from_options(opts: Dict[str, object]) -> ExperimentConfig:
    index = opts["index"]
    if index is None:
        raise UsageError("--index is required")
    if index not in INDEX_KINDS:
        raise UsageError(f"--index must be one of {', '.join(INDEX_KINDS)}")
    workload = workload_from_options(opts)
    tunables = load_tunables(opts["tunables"]).get(index, {})
    if opts["format"] not in FORMATS:
        raise UsageError(f"--format must be one of {', '.join(FORMATS)}")
    if opts["repeat"] < 1:
        raise UsageError("--repeat must be at least 1")
    if opts["warmup"] < 0:
        raise UsageError("--warmup must be non-negative")
    return ExperimentConfig(
        index_kind=index,
        workload=workload,
        tunables=tunables,
        profile=bool(opts["profile"]),
        levels=_levels(opts),
        require_counters=bool(opts["require-counters"]),
        event_map_path=opts["event-map"],
        warmup_count=opts["warmup"],
        alloc_trace=bool(opts["alloc-trace"]),
        pin_cpu=not opts["no-pin"],
        output_dir=Path(opts["output"]) if opts["output"] else None,
    )


def _run_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="indexbench run", description="Run one experiment.")
    _add_run_options(p)
    return p


def parse_cli(args: Sequence[str]) -> ExperimentConfig:
    """Flags of ``indexbench run`` -> experiment configuration.  Raises
    ``UsageError`` on missing or contradictory arguments."""
    args = list(args)
    if args[:1] == ["run"]:
        args = args[1:]
    return config_from_options(_merged(_run_parser().parse_args(args)))


def _cmd_run(ns: argparse.Namespace) -> int:
    opts = _merged(ns)
    config = config_from_options(opts)
    reports = [run_experiment(config, repeat=i) for i in range(opts["repeat"])]
    if config.output_dir is not None:
        with open(config.output_dir / f"{config.label}.csv", "w", newline="") as fh:
            write_csv([ReportRow.from_report(r) for r in reports], fh)
    emit_report(reports, opts["format"], sys.stdout)
    for r in reports:
        if r.dispatch_overhead is not None and r.dispatch_overhead > 0.05:
            print(f"warning: dispatch overhead {r.dispatch_overhead:.1%} of run time", file=sys.stderr)
    return EXIT_OK


def _cmd_matrix(ns: argparse.Namespace) -> int:
    if ns.format not in FORMATS:
        raise UsageError(f"--format must be one of {', '.join(FORMATS)}")
    try:
        preset = load_preset(ns.preset)
    except (ValueError, KeyError, configparser.Error) as exc:
        raise UsageError(str(exc)) from None
    opts = {"levels": ns.levels, "require-counters": ns.require_counters, "profile": ns.profile}
    levels = _levels(opts)
    if ns.warmup is not None:
        if ns.warmup < 0:
            raise UsageError("--warmup must be non-negative")
        preset.warmup = ns.warmup
    out = Path(ns.output) if ns.output else Path("results") / preset.scale
    result = run_matrix(
        preset, out,
        only_sets=_csv_arg(ns.sets), only_mixes=_csv_arg(ns.mixes), only_indexes=_csv_arg(ns.indexes),
        charts=not ns.no_charts,
        progress=lambda msg: print(msg, file=sys.stderr, flush=True),
        tunables=load_tunables(ns.tunables), profile=ns.profile, levels=levels,
        require_counters=ns.require_counters, event_map_path=ns.event_map,
        alloc_trace=ns.alloc_trace,
    )
    if result.reports:
        emit_report(result.reports, ns.format, sys.stdout)
    print(f"manifest: {result.manifest_path}", file=sys.stderr)
    for problem in result.problems:
        print(f"validation: {problem}", file=sys.stderr)
    if result.environment_error:
        print(f"environment: {result.environment_error}", file=sys.stderr)
        return EXIT_ENVIRONMENT
    if result.failures:
        for f in result.failures:
            print(f"failed: {f['cell']}: {f['error']}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _csv_arg(text: Optional[str]) -> Optional[List[str]]:
    return None if text is None else [t.strip() for t in text.split(",") if t.strip()]


def _load_rows(paths: Sequence[str]):
    rows: List[ReportRow] = []
    reports = []
    for name in paths:
        path = Path(name)
        try:
            if path.suffix == ".csv":
                rows.extend(read_csv(path))
            else:
                loaded = load_reports(path)
                reports.extend(loaded)
                rows.extend(ReportRow.from_report(r) for r in loaded)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"cannot load {name}: {exc}") from None
    return rows, reports


def _cmd_report(ns: argparse.Namespace) -> int:
    rows, reports = _load_rows(ns.inputs)
    if not rows:
        raise UsageError("no report rows in the inputs")
    if ns.format == "json":
        payload = [r.to_dict() for r in reports] if len(reports) == len(rows) else rows_as_dicts(rows)
        text = json.dumps(payload[0] if len(payload) == 1 else payload, indent=2, sort_keys=True) + "\n"
    elif ns.format == "csv":
        buf = io.StringIO()
        write_csv(rows, buf)
        text = buf.getvalue()
    elif ns.format == "table":
        text = format_table(rows)
    else:
        raise UsageError(f"--format must be one of {', '.join(FORMATS)}")
    if ns.output:
        try:
            Path(ns.output).write_text(text)
        except OSError as exc:
            raise UsageError(f"cannot write {ns.output}: {exc}") from None
    else:
        sys.stdout.write(text)
    if ns.charts:
        first = min(r.repeat for r in rows)
        chosen = [r for r in rows if r.repeat == first]
        if ns.kind:
            if ns.kind not in CHART_KINDS:
                raise UsageError(f"--kind must be one of {', '.join(CHART_KINDS)}")
            try:
                render_breakdown_chart(chosen, ns.kind, Path(ns.charts) / f"{ns.kind}.svg")
            except ChartError as exc:
                raise UsageError(str(exc)) from None
        else:
            failures: List[dict] = []
            written = render_set_charts(chosen, Path(ns.charts), failures)
            for f in failures:
                print(f"chart skipped: {f['error']}", file=sys.stderr)
            for w in written:
                print(f"chart: {w}", file=sys.stderr)
    return EXIT_OK


def _cmd_calibrate(ns: argparse.Namespace) -> int:
    from .calibration import run_calibration
    try:
        event_map = load_event_map(ns.event_map)
    except (OSError, ValueError) as exc:
        raise UsageError(f"bad event map: {exc}") from None
    result = run_calibration(event_map, scale=ns.scale)
    for m in result.measurements:
        cpi = "n/a" if m.cpi is None else f"{m.cpi:.3f}"
        print(f"{m.name:18s} {m.seconds * 1e3:9.2f} ms  CPI {cpi}")
    for g in result.gates:
        status = {True: "PASS", False: "FAIL", None: "N/A "}[g.passed]
        print(f"{status} {g.name}: {g.detail}")
    if ns.output:
        payload = {"event_map": result.event_map, "llc_bytes": result.llc_bytes,
                   "measurements": [asdict(m) | {"tmam": m.tmam.to_dict()} for m in result.measurements],
                   "gates": [asdict(g) for g in result.gates]}
        Path(ns.output).write_text(json.dumps(payload, indent=2, default=str) + "\n")
    if all(g.passed is None for g in result.gates):
        print("no hardware counters available on this host", file=sys.stderr)
        return EXIT_ENVIRONMENT
    return EXIT_OK if all(g.passed is not False for g in result.gates) else EXIT_PARTIAL


def _cmd_dump(ns: argparse.Namespace) -> int:
    opts = _merged(ns)
    workload = workload_from_options(opts)
    stream = generate_requests(workload, generate_population(workload))
    try:
        stream.dump(ns.out)
    except OSError as exc:
        raise UsageError(f"cannot write {ns.out}: {exc}") from None
    print(json.dumps({"path": ns.out, "seed": workload.seed, "requests": len(stream), **stream.counts()}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="indexbench", description="Key-value index micro-architectural benchmark.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment")
    _add_run_options(p)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("matrix", help="run a preset grid of experiments")
    p.add_argument("--preset", default="desk-small", help=f"{' or '.join(PRESETS)}, or a preset file")
    p.add_argument("--output", help="results directory (default results/<scale>)")
    p.add_argument("--sets", help="comma-separated experiment sets to run")
    p.add_argument("--mixes", help="comma-separated mixes to run")
    p.add_argument("--indexes", help="comma-separated indexes to run")
    p.add_argument("--tunables", help="ini file with [alex] and [btree] sections")
    p.add_argument("--warmup", type=int, help="override the preset warm-up count")
    p.add_argument("--profile", action="store_true")
    p.add_argument("--levels", type=int, default=MAX_LEVEL)
    p.add_argument("--require-counters", action="store_true")
    p.add_argument("--event-map")
    p.add_argument("--alloc-trace", action="store_true")
    p.add_argument("--format", default="table")
    p.add_argument("--no-charts", action="store_true")
    p.set_defaults(func=_cmd_matrix)

    p = sub.add_parser("report", help="re-emit saved reports and draw charts")
    p.add_argument("inputs", nargs="+", help="reports.csv or JSON report files")
    p.add_argument("--format", default="table")
    p.add_argument("--output", help="write the rendered report here instead of stdout")
    p.add_argument("--charts", help="directory for chart files")
    p.add_argument("--kind", help=f"one chart kind ({', '.join(CHART_KINDS)}); default all")
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("calibrate", help="check counters against known microbenchmarks")
    p.add_argument("--event-map")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("dump-requests", help="write a request stream as packed binary records")
    _add_run_options(p, skip=("index", "tunables", "output", "profile", "levels", "require-counters",
                              "event-map", "alloc-trace", "repeat", "format", "no-pin", "warmup"))
    p.add_argument("--out", required=True, help="destination file")
    p.set_defaults(func=_cmd_dump)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("a subcommand is required")
        return ns.func(ns)
    except UsageError as exc:
        print(f"indexbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PermissionDenied, EnvironmentProblem) as exc:
        print(f"indexbench: environment: {exc}", file=sys.stderr)
        return EXIT_ENVIRONMENT


if __name__ == "__main__":
    sys.exit(main())
