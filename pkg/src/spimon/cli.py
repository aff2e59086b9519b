"""Command-line front end.

Exit status: 0 success, 1 findings (error-severity coverage findings for
``validate``, a critical meta alert for ``monitor``), 2 bad input.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import Counter
from pathlib import Path
from typing import Sequence

from spimon import __version__
from spimon.coverage import has_errors, run_coverage_checks
from spimon.errors import ParamsError, SpimonError
from spimon.fleet_sim import GroundTruth, generate_log, load_scenario
from spimon.lifecycle import ClaimViolationObserved, dumps_log, read_log
from spimon.model import load_safety_case
from spimon.reporting import RunParams, dumps_machine, load_params, monitor, render_text

EXIT_OK = 0
EXIT_FINDINGS = 1
EXIT_INPUT = 2


def _fail(message: str) -> int:
    print(f"spimon: error: {message}", file=sys.stderr)
    return EXIT_INPUT


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_validate(args: argparse.Namespace) -> int:
    case = load_safety_case(args.case)
    findings = run_coverage_checks(case, args.min_leg_ratio)
    doc = {
        "case_id": case.id,
        "case_version": case.version,
        "coverage_findings": [f.to_dict() for f in findings],
    }
    _emit(render_text(doc) if args.format == "text" else dumps_machine(doc), None)
    return EXIT_FINDINGS if has_errors(findings) else EXIT_OK


def cmd_monitor(args: argparse.Namespace) -> int:
    case = load_safety_case(args.case)
    events = read_log(args.log)
    params = load_params(args.params)
    truth = None
    if args.truth is not None:
        truth = GroundTruth.from_dict(_read_json(args.truth))
    report = monitor(case, events, params, truth=truth, workers=args.workers)
    _emit(dumps_machine(report.to_dict()), args.out)
    return EXIT_FINDINGS if report.has_critical else EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    case = load_safety_case(args.case)
    scenario = load_scenario(args.scenario)
    events, truth = generate_log(scenario, case)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "log.ndjson").write_text(dumps_log(events), encoding="utf-8")
    (out / "truth.json").write_text(dumps_machine(truth.to_dict()), encoding="utf-8")
    counts = Counter(e.kind for e in events)
    losses = sum(1 for e in events
                 if isinstance(e.payload, ClaimViolationObserved) and e.payload.is_loss)
    print(f"scenario {scenario.id}: {len(events)} events")
    for kind in sorted(counts):
        print(f"  {kind:<26}{counts[kind]}")
    print(f"  {'loss events':<26}{losses}")
    print(f"  {'expected alerts':<26}{len(truth.expected_alerts)}")
    return EXIT_OK


def _read_json(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise SpimonError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SpimonError(f"{path} is not valid JSON: {exc}") from None


def cmd_report(args: argparse.Namespace) -> int:
    doc = _read_json(args.report)
    if not isinstance(doc, dict):
        raise SpimonError(f"{args.report} is not a report document")
    if args.format == "machine":
        sys.stdout.write(dumps_machine(doc))
    else:
        try:
            sys.stdout.write(render_text(doc))
        except (KeyError, TypeError, IndexError) as exc:
            raise SpimonError(f"{args.report} is not a report document ({exc})") from None
    return EXIT_OK


def _ratio(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spimon", description="SPI coverage checks and meta monitoring")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse a safety case and run the coverage checks")
    p.add_argument("case")
    p.add_argument("--format", choices=("text", "machine"), default="machine")
    p.add_argument("--min-leg-ratio", type=_ratio, default=RunParams().min_leg_ratio)
    p.set_defaults(run=cmd_validate)

    p = sub.add_parser("monitor", help="replay an event log and run the meta detectors")
    p.add_argument("case")
    p.add_argument("log")
    p.add_argument("--params")
    p.add_argument("--out")
    p.add_argument("--truth", help="ground-truth file; adds a detection score to the report")
    p.add_argument("--workers", type=_positive, default=1,
                   help="detector threads (output does not depend on it)")
    p.set_defaults(run=cmd_monitor)

    p = sub.add_parser("simulate", help="generate a log and ground truth from a scenario")
    p.add_argument("case")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.set_defaults(run=cmd_simulate)

    p = sub.add_parser("report", help="render a report file")
    p.add_argument("report")
    p.add_argument("--format", choices=("text", "machine"), default="text")
    p.set_defaults(run=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.run(args)
    except (SpimonError, ParamsError) as exc:
        return _fail(str(exc))
    except OSError as exc:
        return _fail(f"{exc.filename}: {exc.strerror}")
