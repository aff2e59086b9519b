import json

import pytest

from spimon import data_path

from cli_matrix import MATRIX, monitor_s1, run, simulate_s1, simulate_zero, validate_lagging_only


@pytest.mark.parametrize("command,condition,case,expected", MATRIX,
                         ids=[f"{c}-{d}" for c, d, _, _ in MATRIX])
def test_exit_code_matrix(tmp_path, command, condition, case, expected):
    code, _, _ = case(tmp_path)
    assert code == expected


def test_validate_prints_c4(tmp_path):
    _, out, _ = validate_lagging_only(tmp_path)
    checks = [f["check_id"] for f in json.loads(out)["coverage_findings"]]
    assert "C4_not_lagging_only" in checks


def test_validate_underannotated_text():
    code, out, _ = run(["validate", data_path("paper_case_underannotated.json"), "--format", "text"])
    assert code == 0
    assert "C2_leading_predictive" in out and "G1.3" in out


def test_monitor_s1_reports_one_uspi1(tmp_path):
    _, out, _ = monitor_s1(tmp_path)
    alerts = json.loads(out)["meta_alerts"]
    assert [(a["detector"], a["subject"]) for a in alerts] == [("uSPI1", "G0")]


def test_monitor_empty_report(tmp_path):
    log = tmp_path / "empty.ndjson"
    log.write_text("")
    code, out, _ = run(["monitor", data_path("demo_av_case.json"), log])
    doc = json.loads(out)
    assert code == 0
    assert doc["meta_alerts"] == [] and doc["overdue"] == [] and doc["coverage_findings"] == []
    assert doc["claim_flags"] == {"at_risk": [], "violated_by_spi": {}}
    assert doc["params_echo"]["lookback_window"] == 7 * 24 * 3600 * 1000


def test_simulate_summary(tmp_path):
    code, out, _ = simulate_s1(tmp_path)
    assert code == 0
    assert any(line.split() == ["loss", "events", "1"] for line in out.splitlines())
    assert (tmp_path / "sim_s1" / "truth.json").exists()


def test_simulate_zero_writes_empty_log(tmp_path):
    assert simulate_zero(tmp_path)[0] == 0
    assert (tmp_path / "sim_zero" / "log.ndjson").read_text() == ""


def test_monitor_bytes_identical_and_workers(tmp_path):
    _, _, _ = simulate_s1(tmp_path)
    log = tmp_path / "sim_s1" / "log.ndjson"
    outs = []
    for i, workers in enumerate([1, 1, 4, 8]):
        target = tmp_path / f"r{i}.json"
        run(["monitor", data_path("demo_av_case.json"), log, "--out", target,
             "--workers", workers, "--truth", tmp_path / "sim_s1" / "truth.json"])
        outs.append(target.read_bytes())
    assert len(set(outs)) == 1
    score = json.loads(outs[0])["detection_score"]
    assert (score["true_positives"], score["false_positives"], score["misses"]) == (1, 0, 0)


def test_report_formats(tmp_path):
    simulate_s1(tmp_path)
    report = tmp_path / "rep.json"
    run(["monitor", data_path("demo_av_case.json"), tmp_path / "sim_s1" / "log.ndjson",
         "--out", report])
    code, text, _ = run(["report", report])
    assert code == 0 and "uSPI1" in text and "meta alerts (1)" in text
    code, machine, _ = run(["report", report, "--format", "machine"])
    assert code == 0 and machine == report.read_text()


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["monitor", "only-case"],
    ["validate", "missing.json"],
    ["monitor", "c", "l", "--workers", "0"],
])
def test_usage_errors_exit_2(argv):
    assert run(argv)[0] == 2


def test_report_rejects_non_report(tmp_path):
    bad = tmp_path / "x.json"
    bad.write_text("[1, 2]")
    assert run(["report", bad])[0] == 2
    bad.write_text('{"meta_alerts": [{"nope": 1}]}')
    assert run(["report", bad])[0] == 2


def test_bad_params_exit_2(tmp_path):
    params = tmp_path / "p.json"
    params.write_text('{"lookback": "1d"}')
    log = tmp_path / "empty.ndjson"
    log.write_text("")
    assert run(["monitor", data_path("demo_av_case.json"), log, "--params", params])[0] == 2
