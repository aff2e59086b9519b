"""The nine (command, condition) pairs of the CLI exit-code contract.

Each entry builds its inputs under a scratch directory, runs ``main``
in-process and returns ``(exit code, stdout)``.
"""

from __future__ import annotations

import contextlib
import io
import json
from pathlib import Path

from spimon import data_path
from spimon.cli import main

from generators import tree_document


def run(argv) -> tuple[int, str, str]:
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = main([str(a) for a in argv])
    return code, out.getvalue(), err.getvalue()


def _scenario(tmp: Path, name: str, **over) -> Path:
    doc = {"id": name, "seed": 1, "duration": "1d", "fleet_size": 1, "exposure_per_vehicle": 8,
           "metric_models": [{"metric_id": "hard_braking", "baseline": {"constant": 0},
                              "sample_period": "6h"}]}
    doc.update(over)
    path = tmp / f"{name}.json"
    path.write_text(json.dumps(doc))
    return path


def _s1_log(tmp: Path) -> Path:
    out = tmp / "s1"
    code, _, _ = run(["simulate", data_path("demo_av_case.json"),
                      data_path("scenarios/s1_uncovered_loss.json"), "--out", out])
    assert code == 0
    return out / "log.ndjson"


def validate_covered(tmp):
    return run(["validate", data_path("paper_case.json")])


def validate_lagging_only(tmp):
    doc = tree_document([0, 1], spi_on=[(0, "lagging", "at_most"), (2, "lagging", "at_most")],
                        item_level={0})
    path = tmp / "lagging.json"
    path.write_text(json.dumps(doc))
    return run(["validate", path])


def validate_malformed(tmp):
    path = tmp / "broken.json"
    path.write_text('{"id": "x", "goals": [')
    return run(["validate", path])


def monitor_empty(tmp):
    log = tmp / "empty.ndjson"
    log.write_text("")
    return run(["monitor", data_path("demo_av_case.json"), log])


def monitor_s1(tmp):
    return run(["monitor", data_path("demo_av_case.json"), _s1_log(tmp),
                "--params", data_path("scenario_params.json")])


def monitor_unresolved(tmp):
    log = tmp / "bad.ndjson"
    log.write_text('{"seq":1,"ts_ms":0,"kind":"spi_violation","violation_id":"x",'
                   '"spi_id":"NOPE","vehicle_id":"v001","observed_value":2.0}\n')
    return run(["monitor", data_path("demo_av_case.json"), log])


def simulate_s1(tmp):
    return run(["simulate", data_path("demo_av_case.json"),
                data_path("scenarios/s1_uncovered_loss.json"), "--out", tmp / "sim_s1"])


def simulate_zero(tmp):
    return run(["simulate", data_path("demo_av_case.json"), _scenario(tmp, "zero", duration=0),
                "--out", tmp / "sim_zero"])


def simulate_bad_claim(tmp):
    fault = {"start": 0, "end": "1h", "metric_id": "hard_braking", "offset": 1.0,
             "linked_claim_id": "G404", "visible_to_spi": True}
    return run(["simulate", data_path("demo_av_case.json"),
                _scenario(tmp, "badref", injected_faults=[fault]), "--out", tmp / "sim_bad"])


MATRIX = [
    ("validate", "covered case", validate_covered, 0),
    ("validate", "lagging-only case", validate_lagging_only, 1),
    ("validate", "malformed file", validate_malformed, 2),
    ("monitor", "empty log", monitor_empty, 0),
    ("monitor", "S1 log", monitor_s1, 1),
    ("monitor", "unresolved spi_id", monitor_unresolved, 2),
    ("simulate", "S1", simulate_s1, 0),
    ("simulate", "zero duration", simulate_zero, 0),
    ("simulate", "bad claim ref", simulate_bad_claim, 2),
]
