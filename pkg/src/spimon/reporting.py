"""Run parameters, the monitoring pipeline and report rendering.

The machine format is canonical JSON (sorted keys, two-space indent,
trailing newline); the text format is a best-effort aligned summary.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

from spimon.coverage import DEFAULT_MIN_LEG_RATIO, CoverageFinding, run_coverage_checks
from spimon.errors import ParamsError
from spimon.fleet_sim import DetectionScore, GroundTruth, score_detection
from spimon.lifecycle import Event, SpiSetUpdated, overdue_analyses, replay
from spimon.meta_monitors import DetectorParams, MetaAlert, run_all_detectors
from spimon.model import SafetyCase
from spimon.spi_eval import Debouncer, MetricSample, SpiViolation, flag_claims
from spimon.units import format_duration, parse_duration

_DURATION_FIELDS = {
    "lookback_window", "response_grace", "response_horizon",
    "analysis_base_deadline", "min_deadline", "debounce_window",
}


@dataclass(frozen=True)
class RunParams:
    """Every tunable of a monitoring run; durations in ms."""

    detectors: DetectorParams = field(default_factory=DetectorParams)
    debounce_k: int = 1
    debounce_window: int = 1
    min_leg_ratio: float = DEFAULT_MIN_LEG_RATIO

    def __post_init__(self) -> None:
        if self.debounce_k < 1 or self.debounce_window <= 0:
            raise ParamsError("debounce_k must be >= 1 and debounce_window positive")
        if not 0.0 <= self.min_leg_ratio <= 1.0:
            raise ParamsError("min_leg_ratio must lie in [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self.detectors)
        out.update(debounce_k=self.debounce_k, debounce_window=self.debounce_window,
                   min_leg_ratio=self.min_leg_ratio)
        return dict(sorted(out.items()))

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> RunParams:
        if not isinstance(obj, Mapping):
            raise ParamsError("params document must be an object")
        detector_names = {f.name for f in fields(DetectorParams)}
        allowed = detector_names | {"debounce_k", "debounce_window", "min_leg_ratio"}
        unknown = set(obj) - allowed
        if unknown:
            raise ParamsError(f"unknown parameter(s) {', '.join(sorted(unknown))}")
        values: dict[str, Any] = {}
        for key, raw in obj.items():
            if key in _DURATION_FIELDS:
                try:
                    values[key] = parse_duration(raw)
                except ValueError as exc:
                    raise ParamsError(str(exc), key) from None
            elif isinstance(raw, bool) or not isinstance(raw, (int, float)):
                raise ParamsError(f"{key} must be a number", key)
            else:
                values[key] = raw
        for key in ("recurrence_k", "debounce_k"):
            if key in values and not isinstance(values[key], int):
                raise ParamsError(f"{key} must be an integer", key)
        try:
            detectors = DetectorParams(**{k: v for k, v in values.items() if k in detector_names})
        except ValueError as exc:
            raise ParamsError(str(exc)) from None
        return cls(
            detectors=detectors,
            debounce_k=values.get("debounce_k", 1),
            debounce_window=values.get("debounce_window", 1),
            min_leg_ratio=float(values.get("min_leg_ratio", DEFAULT_MIN_LEG_RATIO)),
        )


def load_params(path: str | Path | None) -> RunParams:
    if path is None:
        return RunParams()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ParamsError(f"cannot read {path}: {exc.strerror}") from None
    try:
        return RunParams.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ParamsError(f"params file is not valid JSON: {exc}") from None


@dataclass(frozen=True)
class Report:
    case_id: str
    case_version: int
    coverage_findings: tuple[CoverageFinding, ...] = ()
    claim_flags: Mapping[str, Any] = field(default_factory=dict)
    overdue: tuple[str, ...] = ()
    meta_alerts: tuple[MetaAlert, ...] = ()
    detection_score: DetectionScore | None = None
    params_echo: Mapping[str, Any] = field(default_factory=dict)
    unlogged_violations: tuple[Mapping[str, Any], ...] = ()

    @property
    def has_critical(self) -> bool:
        return any(a.severity.value == "critical" for a in self.meta_alerts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case_id,
            "case_version": self.case_version,
            "coverage_findings": [f.to_dict() for f in self.coverage_findings],
            "claim_flags": dict(self.claim_flags),
            "overdue": list(self.overdue),
            "meta_alerts": [a.to_dict() for a in self.meta_alerts],
            "detection_score": None if self.detection_score is None else self.detection_score.to_dict(),
            "params_echo": dict(self.params_echo),
            "unlogged_violations": [dict(v) for v in self.unlogged_violations],
        }


def dumps_machine(doc: Mapping[str, Any]) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _derive(case: SafetyCase, events: Sequence[Event], params: RunParams) -> list[SpiViolation]:
    # SPIs introduced by a later set update are dormant until it; removed ones go dormant
    added_later = {s for e in events if isinstance(e.payload, SpiSetUpdated) for s in e.payload.added}
    active = set(case.spi_index) - added_later
    debouncers: dict[str, Debouncer] = {}
    by_metric: dict[str, list[str]] = {}
    for spi_id in sorted(case.spi_index):
        by_metric.setdefault(case.spi_index[spi_id].metric_id, []).append(spi_id)
    out = []
    for event in events:
        p = event.payload
        if isinstance(p, SpiSetUpdated):
            active.update(p.added)
            active.difference_update(p.removed)
            for spi_id in (*p.added, *p.removed):
                debouncers.pop(spi_id, None)
        elif isinstance(p, MetricSample):
            for spi_id in by_metric.get(p.metric_id, []):
                if spi_id not in active:
                    continue
                if spi_id not in debouncers:
                    debouncers[spi_id] = Debouncer(case.spi_index[spi_id], params.debounce_k,
                                                   params.debounce_window)
                violation = debouncers[spi_id].feed(p)
                if violation is not None:
                    out.append(violation)
    return out


def monitor(
    case: SafetyCase,
    events: Sequence[Event],
    params: RunParams | None = None,
    truth: GroundTruth | None = None,
    workers: int = 1,
) -> Report:
    """Fold the log, re-derive violations from its samples, flag claims,
    list overdue analyses and run every detector.

    Logged violations drive the lifecycle and the detectors. Violations
    the samples imply but the log lacks are listed separately and still
    count for claim flags.

    Raises:
        LogError: the log does not replay against ``case``.
    """
    params = params or RunParams()
    dp = params.detectors
    state = replay(case, events, exposure=dp.exposure)
    logged = [e.payload for e in events if isinstance(e.payload, SpiViolation)]
    seen = {(v.spi_id, v.vehicle_id, v.timestamp) for v in logged}
    derived = _derive(case, events, params)
    unlogged = [v for v in derived if (v.spi_id, v.vehicle_id, v.timestamp) not in seen]
    flags = flag_claims(case, [*logged, *unlogged])
    overdue = overdue_analyses(state, state.last_timestamp, dp.analysis_base_deadline,
                               dp.reference_exposure, dp.min_deadline)
    alerts = run_all_detectors(case, events, dp, workers=workers)
    score = None
    if truth is not None:
        score = score_detection(alerts, truth, case, events, dp.lookback_window)
    return Report(
        case_id=case.id,
        case_version=case.version,
        coverage_findings=tuple(run_coverage_checks(case, params.min_leg_ratio)),
        claim_flags=flags.to_dict(),
        overdue=tuple(overdue),
        meta_alerts=tuple(alerts),
        detection_score=score,
        params_echo=params.to_dict(),
        unlogged_violations=tuple(
            {"spi_id": v.spi_id, "vehicle_id": v.vehicle_id, "timestamp": v.timestamp,
             "observed_value": v.observed_value}
            for v in unlogged
        ),
    )


# -- text rendering -------------------------------------------------------

def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> list[str]:
    widths = [len(h) for h in headers]
    for row in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*headers).rstrip(), fmt.format(*("-" * w for w in widths))]
    lines += [fmt.format(*row).rstrip() for row in rows]
    return lines


def render_findings_text(findings: Sequence[Mapping[str, Any]]) -> str:
    if not findings:
        return "no coverage findings\n"
    rows = [(f["check_id"], f["severity"], f["subject"], f["message"]) for f in findings]
    return "\n".join(_table(("check", "severity", "subject", "message"), rows)) + "\n"


def _span(window: Sequence[int]) -> str:
    return f"{format_duration(window[0])}..{format_duration(window[1])}"


def render_text(doc: Mapping[str, Any]) -> str:
    """Render a machine-format document (monitor or validate) as text."""
    out: list[str] = []
    if "case_id" in doc:
        out.append(f"case {doc['case_id']} v{doc.get('case_version', '?')}")
        out.append("")
    if "coverage_findings" in doc:
        out.append("coverage findings")
        out.append(render_findings_text(doc["coverage_findings"]))
    if "meta_alerts" in doc:
        alerts = doc["meta_alerts"]
        out.append(f"meta alerts ({len(alerts)})")
        if alerts:
            rows = [
                (a["detector"], a["severity"], a["subject"], _span(a["window"]),
                 ",".join(map(str, a["evidence"])), a["recommendation"])
                for a in alerts
            ]
            out.extend(_table(("detector", "severity", "subject", "window", "evidence",
                               "recommendation"), rows))
        out.append("")
    flags = doc.get("claim_flags")
    if flags:
        out.append("claim flags")
        rows = [(c, "violated_by_spi", ",".join(s)) for c, s in flags["violated_by_spi"].items()]
        rows += [(c, "at_risk", "") for c in flags["at_risk"]]
        out.extend(_table(("claim", "status", "spis"), rows) if rows else ["none"])
        out.append("")
    if "overdue" in doc:
        out.append(f"overdue analyses: {', '.join(doc['overdue']) or 'none'}")
    if doc.get("unlogged_violations"):
        out.append(f"violations implied by samples but not logged: {len(doc['unlogged_violations'])}")
    score = doc.get("detection_score")
    if score:
        lead = score["mean_lead_time"]
        out.append(
            f"detection: tp={score['true_positives']} fp={score['false_positives']} "
            f"misses={score['misses']} mean_lead_time="
            + ("n/a" if lead is None else format_duration(int(round(lead))))
        )
    if doc.get("params_echo"):
        out.append("")
        out.append("parameters")
        out.extend(f"  {k} = {v}" for k, v in sorted(doc["params_echo"].items()))
    return "\n".join(out).rstrip("\n") + "\n"
