import io
import json

import pytest

from indexbench.core import KEY_MAX
from indexbench.report import (
    CSV_COLUMNS,
    ReportRow,
    emit_report,
    format_table,
    load_reports,
    read_csv,
    validate_rows,
    write_csv,
)
from indexbench.runner import ExperimentConfig, RunReport, run_experiment
from indexbench.workload import Pattern, WorkloadConfig, builtin_mix


@pytest.fixture(scope="module")
def reports():
    out = []
    for index in ("alex", "art"):
        wl = WorkloadConfig(2000, 2000, builtin_mix("read-heavy"), (0, 2000), (2000, KEY_MAX + 1),
                            Pattern.CONSECUTIVE, 11)
        cfg = ExperimentConfig(index_kind=index, workload=wl, warmup_count=100, pin_cpu=False,
                               rss_sidecar=False, check_overhead=False)
        out.append(run_experiment(cfg))
    return out


def test_csv_header_is_documented_order():
    assert CSV_COLUMNS[:9] == ["index_kind", "experiment", "pattern", "scale", "mix",
                               "population_count", "request_count", "seed", "repeat"]
    assert CSV_COLUMNS[-5:] == ["l1_bound", "l2_bound", "l3_bound", "dram_bound", "store_bound"]


def test_one_report_one_row(reports):
    lines = emit_report(reports[:1], "csv").splitlines()
    assert len(lines) == 2
    assert lines[0].split(",") == CSV_COLUMNS


def test_csv_round_trip(reports):
    text = emit_report(reports, "csv")
    rows = read_csv(io.StringIO(text))
    assert rows == [ReportRow.from_report(r) for r in reports]


def test_unavailable_metrics_are_empty_cells(reports):
    row = emit_report(reports[:1], "csv").splitlines()[1].split(",")
    cell = dict(zip(CSV_COLUMNS, row))
    assert cell["cpi"] == "" and cell["retiring"] == ""
    assert float(cell["avg_exec_time_us"]) > 0


def test_json_is_the_report_verbatim(reports, tmp_path):
    path = tmp_path / "one.json"
    emit_report(reports[:1], "json", path)
    assert load_reports(path) == reports[:1]
    emit_report(reports, "json", path)
    assert load_reports(path) == reports
    assert json.loads(path.read_text())[0] == reports[0].to_dict()


def test_table_is_readable(reports):
    text = emit_report(reports, "table")
    lines = text.splitlines()
    assert lines[0].split()[:3] == ["index", "experiment", "mix"]
    assert len(lines) == 2 + len(reports)
    assert "n/a" in lines[2]


def test_no_reports_rejected():
    with pytest.raises(ValueError):
        emit_report([], "csv")
    with pytest.raises(ValueError):
        emit_report([RunReport.__new__(RunReport)], "xml")


def test_unwritable_output(reports, tmp_path):
    with pytest.raises(OSError):
        emit_report(reports, "csv", tmp_path / "missing" / "r.csv")


def test_foreign_csv_rejected():
    with pytest.raises(ValueError):
        read_csv(io.StringIO("timestamp_ms,rss_bytes\n1,2\n"))


def _row(**kw):
    base = dict(index_kind="alex", experiment="e", pattern="consecutive", scale="s", mix="read-only",
                population_count=1, request_count=1, seed=1, repeat=0, avg_exec_time_us=1.0,
                instr_per_request=None, cpi=None, footprint_bytes=None, net_footprint_bytes=None,
                alloc_bytes=None, net_alloc_bytes=None)
    base.update(kw)
    return ReportRow(**base)


def test_level_sum_validation():
    good = _row(retiring=0.3, bad_speculation=0.05, frontend_bound=0.15, backend_bound=0.51,
                core_bound=0.2, memory_bound=0.31)
    bad = _row(retiring=0.3, bad_speculation=0.05, frontend_bound=0.15, backend_bound=0.4)
    split = _row(backend_bound=0.5, core_bound=0.1, memory_bound=0.1)
    assert validate_rows([good, _row()]) == []
    problems = validate_rows([bad, split, _row(cpi=-1.0)])
    assert len(problems) == 3
    assert "sums to 0.9000" in problems[0]


def test_table_scales_bytes_to_mib():
    text = format_table([_row(footprint_bytes=3 << 20)])
    assert "3.0" in text.splitlines()[2]


def test_write_csv_float_precision():
    buf = io.StringIO()
    write_csv([_row(avg_exec_time_us=0.1 + 0.2)], buf)
    assert read_csv(io.StringIO(buf.getvalue()))[0].avg_exec_time_us == 0.1 + 0.2
