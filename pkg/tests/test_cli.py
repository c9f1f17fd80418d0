import json
import subprocess
import sys

import pytest

from indexbench import cli
from indexbench.cli import EXIT_ENVIRONMENT, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, UsageError, main, parse_cli
from indexbench.core import KEY_MAX
from indexbench.profiler import PermissionDenied
from indexbench.report import CSV_COLUMNS, read_csv
from indexbench.runner import EnvironmentProblem
from indexbench.workload import MixSpec, Pattern, RequestStream

SMALL = ["--populate", "500", "--requests", "500", "--warmup", "50", "--no-pin"]


def test_example_arguments():
    cfg = parse_cli("--index alex --mix write-heavy --pattern consecutive --populate 1600000 "
                    "--requests 1600000 --seed 7".split())
    wl = cfg.workload
    assert cfg.index_kind == "alex"
    assert wl.mix == MixSpec(40, 30, 20, 10)
    assert wl.pattern is Pattern.CONSECUTIVE
    assert (wl.population_count, wl.request_count, wl.seed) == (1600000, 1600000, 7)
    assert wl.read_bounds == (0, 1600000) and wl.insert_bounds == (1600000, KEY_MAX + 1)


def test_leading_run_word_accepted():
    assert parse_cli(["run", "--index", "art", "--mix", "read-only", "--populate", "10",
                      "--requests", "1", "--seed", "1"]).index_kind == "art"


def test_percentage_mix():
    cfg = parse_cli(["--index", "btree", "--mix", "25,25,25,25", "--populate", "10", "--requests", "5",
                     "--seed", "1"])
    assert cfg.workload.mix == MixSpec(25, 25, 25, 25)


@pytest.mark.parametrize("args", [
    ["--mix", "10,10,10,10"],
    ["--mix", "50,50"],
    ["--mix", "a,b,c,d"],
    ["--mix", "scan-heavy"],
    ["--mix", "read-only", "--index", "skiplist"],
    ["--mix", "read-only", "--pattern", "zipf"],
    ["--mix", "read-only", "--read-bounds", "9:3"],
    ["--mix", "read-only", "--require-counters"],
    ["--mix", "read-only", "--levels", "5"],
    ["--mix", "read-only", "--format", "xml"],
    ["--mix", "read-only", "--repeat", "0"],
    ["--mix", "read-only", "--populate", "-1"],
    ["--mix", "read-only", "--bogus"],
    ["--pattern", "random"],
])
def test_usage_errors(args, capsys):
    base = {"--index": "alex", "--populate": "10", "--requests": "5", "--seed": "1"}
    full = list(args)
    for flag, value in base.items():
        if flag not in full:
            full += [flag, value]
    with pytest.raises(UsageError):
        parse_cli(full)
    assert main(["run"] + full) == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_no_subcommand_is_usage_error():
    assert main([]) == EXIT_USAGE
    assert main(["frobnicate"]) == EXIT_USAGE


def test_omitted_seed_is_echoed(capsys):
    code = main(["run", "--index", "art", "--mix", "read-only", "--format", "json"] + SMALL)
    assert code == EXIT_OK
    out = capsys.readouterr()
    report = json.loads(out.out)
    seed = int(out.err.split("seed: ")[1].split()[0])
    assert report["seed"] == seed == report["config"]["seed"]


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("index = btree\nmix = read-heavy\npopulate = 300\nrequests = 40\nseed = 5\n"
                    "pattern = random\nalloc_trace = yes\n")
    cfg = parse_cli(["--config", str(conf), "--requests", "70"])
    assert cfg.index_kind == "btree" and cfg.alloc_trace
    assert cfg.workload.request_count == 70
    assert cfg.workload.population_count == 300
    assert cfg.workload.read_bounds == (0, 600) and cfg.workload.insert_bounds == (0, 600)


@pytest.mark.parametrize("text", ["colour = red\n", "seed = many\n", "profile = maybe\n"])
def test_bad_config_file(tmp_path, text):
    conf = tmp_path / "bad.conf"
    conf.write_text(text)
    with pytest.raises(UsageError):
        parse_cli(["--config", str(conf), "--index", "alex", "--mix", "read-only"])


def test_tunables_file(tmp_path):
    t = tmp_path / "t.ini"
    t.write_text("[alex]\ndensity-upper = 0.7\nappend_window = 16\n[btree]\nfanout = 8\n")
    cfg = parse_cli(["--index", "alex", "--mix", "read-only", "--populate", "10", "--requests", "1",
                     "--seed", "1", "--tunables", str(t)])
    assert cfg.tunables == {"density_upper": 0.7, "append_window": 16}
    t.write_text("[btree]\nfanout = 7\n")
    with pytest.raises(UsageError):
        parse_cli(["--index", "btree", "--mix", "read-only", "--populate", "10", "--requests", "1",
                   "--seed", "1", "--tunables", str(t)])
    t.write_text("[art]\nfanout = 8\n")
    with pytest.raises(UsageError):
        cli.load_tunables(str(t))


def test_run_writes_outputs(tmp_path, capsys):
    code = main(["run", "--index", "alex", "--mix", "write-heavy", "--seed", "3", "--format", "csv",
                 "--repeat", "2", "--output", str(tmp_path)] + SMALL)
    assert code == EXIT_OK
    stdout = capsys.readouterr().out
    assert stdout.splitlines()[0].split(",") == CSV_COLUMNS
    rows = read_csv(tmp_path / "custom_write-heavy_alex.csv")
    assert [r.repeat for r in rows] == [0, 1]
    assert (tmp_path / "custom_write-heavy_alex_r1.json").exists()
    assert (tmp_path / "custom_write-heavy_alex_r0_rss.csv").exists()


def test_dump_requests(tmp_path, capsys):
    out = tmp_path / "reqs.bin"
    code = main(["dump-requests", "--mix", "write-heavy", "--populate", "100", "--requests", "1000",
                 "--seed", "2", "--out", str(out)])
    assert code == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    stream = RequestStream.load(out)
    assert len(stream) == summary["requests"] == 1000
    assert summary["read"] + summary["update"] + summary["insert"] + summary["delete"] == 1000


def test_report_subcommand_draws_charts(tmp_path, capsys):
    for index in ("alex", "art", "btree"):
        assert main(["run", "--index", index, "--mix", "read-only", "--seed", "4",
                     "--output", str(tmp_path)] + SMALL) == EXIT_OK
    capsys.readouterr()
    inputs = sorted(str(p) for p in tmp_path.glob("*_r0.json"))
    charts = tmp_path / "charts"
    assert main(["report", *inputs, "--format", "csv", "--charts", str(charts)]) == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()) == 4
    assert len(list(charts.glob("*.svg"))) == 7
    assert main(["report", *inputs, "--charts", str(charts), "--kind", "pie"]) == EXIT_USAGE
    assert main(["report", str(tmp_path / "custom_read-only_alex_r0_rss.csv")]) == EXIT_USAGE


def test_tiny_matrix_from_preset_file(tmp_path, capsys):
    preset = tmp_path / "tiny.ini"
    preset.write_text("[matrix]\nscale = tiny\nseed = 9\nwarmup = 20\nmixes = read-only, insert-only\n"
                      "indexes = alex, btree\n\n[c]\npattern = consecutive\npopulate = 300\nrequests = 200\n"
                      "read-bounds = 0:300\ninsert-bounds = 300:18446744073709551616\n")
    out = tmp_path / "out"
    code = main(["matrix", "--preset", str(preset), "--output", str(out), "--format", "csv"])
    assert code == EXIT_OK
    assert len(capsys.readouterr().out.splitlines()) == 5
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["cells_completed"] == manifest["cells_planned"] == 4
    assert manifest["failures"] == []
    assert len(list((out / "charts").glob("*.svg"))) == 7


def test_matrix_unknown_preset():
    assert main(["matrix", "--preset", "desk-huge"]) == EXIT_USAGE


@pytest.mark.parametrize("exc", [PermissionDenied("perf_event_paranoid"), EnvironmentProblem("no counters")])
def test_environment_failures_exit_3(monkeypatch, exc, capsys):
    def boom(*a, **k):
        raise exc
    monkeypatch.setattr(cli, "run_experiment", boom)
    code = main(["run", "--index", "alex", "--mix", "read-only", "--seed", "1"] + SMALL)
    assert code == EXIT_ENVIRONMENT
    assert "environment" in capsys.readouterr().err


def test_matrix_environment_error_stops_the_grid(monkeypatch, tmp_path):
    import indexbench.matrix as matrix

    def boom(*a, **k):
        raise EnvironmentProblem("counters unavailable")
    monkeypatch.setattr(matrix, "run_experiment", boom)
    preset = tmp_path / "p.ini"
    preset.write_text("[matrix]\nscale = t\nindexes = art\nmixes = read-only\n[c]\npattern = consecutive\n"
                      "populate = 10\nrequests = 10\nread-bounds = 0:10\ninsert-bounds = 10:100\n")
    assert main(["matrix", "--preset", str(preset), "--output", str(tmp_path / "o")]) == EXIT_ENVIRONMENT


def test_matrix_partial_failure_exit_2(monkeypatch, tmp_path):
    import indexbench.matrix as matrix
    real = matrix.run_experiment

    def flaky(cfg, *a, **k):
        if cfg.index_kind == "art":
            raise RuntimeError("simulated crash")
        return real(cfg, *a, **k)
    monkeypatch.setattr(matrix, "run_experiment", flaky)
    preset = tmp_path / "p.ini"
    preset.write_text("[matrix]\nscale = t\nwarmup = 5\nindexes = art, btree\nmixes = read-only\n[c]\n"
                      "pattern = consecutive\npopulate = 10\nrequests = 10\nread-bounds = 0:10\n"
                      "insert-bounds = 10:100\n")
    out = tmp_path / "o"
    assert main(["matrix", "--preset", str(preset), "--output", str(out), "--no-charts"]) == EXIT_PARTIAL
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["cells_completed"] == 1
    assert "simulated crash" in manifest["failures"][0]["error"]


def test_require_counters_without_pmu():
    code = main(["run", "--index", "art", "--mix", "read-only", "--seed", "1", "--profile",
                 "--require-counters"] + SMALL)
    assert code in (EXIT_OK, EXIT_ENVIRONMENT)


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "indexbench.cli", "run", "--mix", "10,10,10,10"],
                          capture_output=True, text=True)
    assert proc.returncode == EXIT_USAGE
    assert "100" in proc.stderr or "required" in proc.stderr
