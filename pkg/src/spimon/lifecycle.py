"""Event log and the violation -> analysis -> response state machine.

The log is newline-delimited JSON, one event per line::

    {"seq": 7, "ts_ms": 3600000, "kind": "analysis_started",
     "analysis_id": "A1", "violation_id": "spi.brake@v001@3600000"}

Events are ordered by ``(ts_ms, seq)`` and ``seq`` strictly increases
down the file, so logs concatenate as long as the later one continues
the sequence. The log is append-only: corrections are new events.

Folding a log with :func:`replay` also validates it: references must
point backwards, analyses are one-per-violation and recorded violations
must really breach their SPI.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import IO, Any, Iterable, Iterator, Mapping, Union

from spimon.errors import (
    DuplicateAnalysisError,
    LogError,
    OutOfOrderError,
    UnknownAnalysisError,
)
from spimon.model import SafetyCase
from spimon.spi_eval import MetricSample, SpiViolation
from spimon.units import HOUR

MAX_RESTRICTION_LEVEL = 3


class ResponseKind(str, Enum):
    SAFETY_FRAMEWORK_UPDATE = "safety_framework_update"
    OPERATION_RESTRICTION = "operation_restriction"
    MAINTENANCE_UPDATE = "maintenance_update"
    SYSTEM_UPDATE = "system_update"


@dataclass(frozen=True)
class ClaimViolationObserved:
    claim_id: str
    is_loss: bool


@dataclass(frozen=True)
class AnalysisStarted:
    analysis_id: str
    violation_id: str


@dataclass(frozen=True)
class AnalysisCompleted:
    """``root_cause`` is the identified cause, or None when inconclusive."""

    analysis_id: str
    root_cause: str | None
    risk_delta: float = 0.0
    correlation_insight: bool = False
    system_change_detected: bool = False

    @property
    def inconclusive(self) -> bool:
        return self.root_cause is None

    @property
    def insightless(self) -> bool:
        return not (self.correlation_insight or self.system_change_detected)


@dataclass(frozen=True)
class ResponseDeployed:
    response_id: str
    kind: ResponseKind
    target_spi_ids: tuple[str, ...]
    analysis_id: str
    restriction_level: int | None = None


@dataclass(frozen=True)
class SpiSetUpdated:
    added: tuple[str, ...] = ()
    removed: tuple[str, ...] = ()
    modified: tuple[str, ...] = ()


Payload = Union[
    MetricSample, SpiViolation, ClaimViolationObserved, AnalysisStarted,
    AnalysisCompleted, ResponseDeployed, SpiSetUpdated,
]

KIND_NAMES: dict[type, str] = {
    MetricSample: "metric_sample",
    SpiViolation: "spi_violation",
    ClaimViolationObserved: "claim_violation_observed",
    AnalysisStarted: "analysis_started",
    AnalysisCompleted: "analysis_completed",
    ResponseDeployed: "response_deployed",
    SpiSetUpdated: "spi_set_updated",
}


@dataclass(frozen=True)
class Event:
    seq: int
    timestamp: int
    payload: Payload

    @property
    def kind(self) -> str:
        return KIND_NAMES[type(self.payload)]


# -- wire format --------------------------------------------------------------

_PAYLOAD_KEYS: dict[str, tuple[set[str], set[str]]] = {
    # kind: (required, optional)
    "metric_sample": ({"metric_id", "vehicle_id", "value"}, {"config_item_version"}),
    "spi_violation": ({"violation_id", "spi_id", "vehicle_id", "observed_value"}, set()),
    "claim_violation_observed": ({"claim_id", "is_loss"}, set()),
    "analysis_started": ({"analysis_id", "violation_id"}, set()),
    "analysis_completed": (
        {"analysis_id", "root_cause", "risk_delta", "correlation_insight",
         "system_change_detected"},
        set(),
    ),
    "response_deployed": (
        {"response_id", "response_kind", "target_spi_ids", "analysis_id"},
        {"restriction_level"},
    ),
    "spi_set_updated": (set(), {"added", "removed", "modified"}),
}


def payload_to_dict(payload: Payload) -> dict[str, Any]:
    if isinstance(payload, MetricSample):
        return {
            "metric_id": payload.metric_id,
            "vehicle_id": payload.vehicle_id,
            "value": payload.value,
            "config_item_version": payload.config_item_version,
        }
    if isinstance(payload, SpiViolation):
        return {
            "violation_id": payload.violation_id,
            "spi_id": payload.spi_id,
            "vehicle_id": payload.vehicle_id,
            "observed_value": payload.observed_value,
        }
    if isinstance(payload, ClaimViolationObserved):
        return {"claim_id": payload.claim_id, "is_loss": payload.is_loss}
    if isinstance(payload, AnalysisStarted):
        return {"analysis_id": payload.analysis_id, "violation_id": payload.violation_id}
    if isinstance(payload, AnalysisCompleted):
        root: Any = "inconclusive" if payload.inconclusive else {"identified": payload.root_cause}
        return {
            "analysis_id": payload.analysis_id,
            "root_cause": root,
            "risk_delta": payload.risk_delta,
            "correlation_insight": payload.correlation_insight,
            "system_change_detected": payload.system_change_detected,
        }
    if isinstance(payload, ResponseDeployed):
        out: dict[str, Any] = {
            "response_id": payload.response_id,
            "response_kind": payload.kind.value,
            "target_spi_ids": list(payload.target_spi_ids),
            "analysis_id": payload.analysis_id,
        }
        if payload.restriction_level is not None:
            out["restriction_level"] = payload.restriction_level
        return out
    if isinstance(payload, SpiSetUpdated):
        return {
            "added": list(payload.added),
            "removed": list(payload.removed),
            "modified": list(payload.modified),
        }
    raise TypeError(f"not an event payload: {payload!r}")


def event_to_dict(event: Event) -> dict[str, Any]:
    return {"seq": event.seq, "ts_ms": event.timestamp, "kind": event.kind,
            **payload_to_dict(event.payload)}


def event_to_line(event: Event) -> str:
    return json.dumps(event_to_dict(event), separators=(",", ":"), allow_nan=False)


def _field(obj: Mapping[str, Any], key: str, types: type | tuple[type, ...], where: str) -> Any:
    value = obj[key]
    accepted = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in accepted:
        raise LogError(f"{key} must not be a boolean", where)
    if not isinstance(value, accepted):
        raise LogError(f"{key} has wrong type {type(value).__name__}", where)
    return value


def _id_list(obj: Mapping[str, Any], key: str, where: str) -> tuple[str, ...]:
    value = obj.get(key, [])
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise LogError(f"{key} must be a list of strings", where)
    return tuple(value)


def event_from_dict(obj: Any, where: str = "") -> Event:
    if not isinstance(obj, dict):
        raise LogError("event is not an object", where)
    for key in ("seq", "ts_ms", "kind"):
        if key not in obj:
            raise LogError(f"missing field {key}", where)
    seq = _field(obj, "seq", int, where)
    ts = _field(obj, "ts_ms", int, where)
    if ts < 0:
        raise LogError("negative ts_ms", where)
    kind = obj["kind"]
    if kind not in _PAYLOAD_KEYS:
        raise LogError(f"unknown event kind {kind!r}", where)
    required, optional = _PAYLOAD_KEYS[kind]
    keys = set(obj) - {"seq", "ts_ms", "kind"}
    if required - keys:
        raise LogError(f"{kind} is missing {', '.join(sorted(required - keys))}", where)
    if keys - required - optional:
        raise LogError(f"{kind} has unknown key(s) {', '.join(sorted(keys - required - optional))}",
                       where)

    number = (int, float)
    payload: Payload
    if kind == "metric_sample":
        value = float(_field(obj, "value", number, where))
        if not math.isfinite(value):
            raise LogError("sample value is not finite", where)
        version = obj.get("config_item_version", "")
        if not isinstance(version, str):
            raise LogError("config_item_version must be a string", where)
        payload = MetricSample(
            metric_id=_field(obj, "metric_id", str, where),
            vehicle_id=_field(obj, "vehicle_id", str, where),
            timestamp=ts,
            value=value,
            config_item_version=version,
        )
    elif kind == "spi_violation":
        payload = SpiViolation(
            violation_id=_field(obj, "violation_id", str, where),
            spi_id=_field(obj, "spi_id", str, where),
            timestamp=ts,
            vehicle_id=_field(obj, "vehicle_id", str, where),
            observed_value=float(_field(obj, "observed_value", number, where)),
        )
    elif kind == "claim_violation_observed":
        payload = ClaimViolationObserved(
            claim_id=_field(obj, "claim_id", str, where),
            is_loss=_field(obj, "is_loss", bool, where),
        )
    elif kind == "analysis_started":
        payload = AnalysisStarted(
            analysis_id=_field(obj, "analysis_id", str, where),
            violation_id=_field(obj, "violation_id", str, where),
        )
    elif kind == "analysis_completed":
        root = obj["root_cause"]
        if root == "inconclusive":
            cause = None
        elif (isinstance(root, dict) and set(root) == {"identified"}
              and isinstance(root["identified"], str)):
            cause = root["identified"]
        else:
            raise LogError('root_cause must be "inconclusive" or {"identified": text}', where)
        delta = float(_field(obj, "risk_delta", number, where))
        if not math.isfinite(delta):
            raise LogError("risk_delta is not finite", where)
        payload = AnalysisCompleted(
            analysis_id=_field(obj, "analysis_id", str, where),
            root_cause=cause,
            risk_delta=delta,
            correlation_insight=_field(obj, "correlation_insight", bool, where),
            system_change_detected=_field(obj, "system_change_detected", bool, where),
        )
    elif kind == "response_deployed":
        try:
            response_kind = ResponseKind(obj["response_kind"])
        except (ValueError, TypeError):
            raise LogError(f"unknown response_kind {obj['response_kind']!r}", where) from None
        level = obj.get("restriction_level")
        if level is not None:
            level = _field(obj, "restriction_level", int, where)
            if not 0 <= level <= MAX_RESTRICTION_LEVEL:
                raise LogError(f"restriction_level must be 0..{MAX_RESTRICTION_LEVEL}", where)
        payload = ResponseDeployed(
            response_id=_field(obj, "response_id", str, where),
            kind=response_kind,
            target_spi_ids=_id_list(obj, "target_spi_ids", where),
            analysis_id=_field(obj, "analysis_id", str, where),
            restriction_level=level,
        )
    else:
        payload = SpiSetUpdated(
            added=_id_list(obj, "added", where),
            removed=_id_list(obj, "removed", where),
            modified=_id_list(obj, "modified", where),
        )
    return Event(seq=seq, timestamp=ts, payload=payload)


def parse_log_lines(lines: Iterable[str], source: str = "log") -> list[Event]:
    events = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        where = f"{source}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise LogError(f"invalid JSON ({exc.msg})", where) from None
        events.append(event_from_dict(obj, where))
    return events


def read_log(path: str | Path) -> list[Event]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_log_lines(fh, str(path))
    except OSError as exc:
        raise LogError(f"cannot read {path}: {exc.strerror}") from None


def write_log(events: Iterable[Event], fh: IO[str]) -> None:
    for event in events:
        fh.write(event_to_line(event))
        fh.write("\n")


def dumps_log(events: Iterable[Event]) -> str:
    return "".join(event_to_line(e) + "\n" for e in events)


# -- state machine ----------------------------------------------------------

def _frozen(d: dict) -> Mapping:
    return MappingProxyType(d)


@dataclass(frozen=True)
class LifecycleState:
    """Immutable fold state. Build the empty state with :meth:`initial`."""

    case: SafetyCase = field(repr=False)
    exposure: float = 1.0
    last_seq: int | None = None
    last_timestamp: int = 0
    violations: Mapping[str, Event] = field(default_factory=lambda: _frozen({}))
    open_analyses: Mapping[str, AnalysisStarted] = field(default_factory=lambda: _frozen({}))
    analysis_violation: Mapping[str, str] = field(default_factory=lambda: _frozen({}))
    violation_analysis: Mapping[str, str] = field(default_factory=lambda: _frozen({}))
    completed: Mapping[str, AnalysisCompleted] = field(default_factory=lambda: _frozen({}))
    responses: tuple[ResponseDeployed, ...] = ()
    risk_score: Mapping[str, float] = field(default_factory=lambda: _frozen({}))

    @classmethod
    def initial(cls, case: SafetyCase, exposure: float = 1.0) -> LifecycleState:
        if not (exposure >= 0 and math.isfinite(exposure)):
            raise ValueError("exposure must be a finite non-negative number")
        risk = {s.claim_id: 0.0 for s in case.spi_index.values()}
        return cls(case=case, exposure=float(exposure), risk_score=_frozen(dict(sorted(risk.items()))))

    def to_dict(self) -> dict[str, Any]:
        return {
            "case_id": self.case.id,
            "exposure": self.exposure,
            "last_seq": self.last_seq,
            "violations": sorted(self.violations),
            "open_analyses": {v: a.analysis_id for v, a in sorted(self.open_analyses.items())},
            "completed": {
                a: payload_to_dict(c) for a, c in sorted(self.completed.items())
            },
            "responses": [payload_to_dict(r) for r in self.responses],
            "risk_score": dict(sorted(self.risk_score.items())),
        }


def _with(mapping: Mapping, key: str, value: Any) -> Mapping:
    d = dict(mapping)
    d[key] = value
    return _frozen(d)


def _without(mapping: Mapping, key: str) -> Mapping:
    d = dict(mapping)
    del d[key]
    return _frozen(d)


def ingest_event(state: LifecycleState, event: Event) -> LifecycleState:
    """Fold one event into ``state`` and return the new state.

    Raises:
        OutOfOrderError: seq not increasing, or timestamp going backwards.
        UnknownAnalysisError: completion/response for an analysis never started.
        DuplicateAnalysisError: analysis id reused, or a second analysis
            for the same violation.
        LogError: any other dangling reference.
    """
    where = f"seq {event.seq}"
    if state.last_seq is not None:
        if event.seq <= state.last_seq:
            raise OutOfOrderError(f"seq {event.seq} does not follow {state.last_seq}", where)
        if event.timestamp < state.last_timestamp:
            raise OutOfOrderError(
                f"ts_ms {event.timestamp} precedes previous {state.last_timestamp}", where
            )
    case = state.case
    p = event.payload
    state = replace(state, last_seq=event.seq, last_timestamp=event.timestamp)

    if isinstance(p, SpiViolation):
        spi = case.spi_index.get(p.spi_id)
        if spi is None:
            raise LogError(f"violation of unknown SPI {p.spi_id!r}", where)
        if p.violation_id in state.violations:
            raise LogError(f"duplicate violation id {p.violation_id!r}", where)
        if not spi.breached_by(p.observed_value):
            raise LogError(
                f"observed value {p.observed_value} does not breach SPI {spi.id!r}", where
            )
        return replace(state, violations=_with(state.violations, p.violation_id, event))

    if isinstance(p, ClaimViolationObserved):
        if p.claim_id not in case or not case.node(p.claim_id).is_goal:
            raise LogError(f"unknown claim {p.claim_id!r}", where)
        return state

    if isinstance(p, AnalysisStarted):
        if p.analysis_id in state.analysis_violation:
            raise DuplicateAnalysisError(f"analysis {p.analysis_id!r} already started", where)
        if p.violation_id not in state.violations:
            raise LogError(f"analysis of unknown violation {p.violation_id!r}", where)
        if p.violation_id in state.violation_analysis:
            raise DuplicateAnalysisError(
                f"violation {p.violation_id!r} already has analysis "
                f"{state.violation_analysis[p.violation_id]!r}",
                where,
            )
        return replace(
            state,
            open_analyses=_with(state.open_analyses, p.violation_id, p),
            analysis_violation=_with(state.analysis_violation, p.analysis_id, p.violation_id),
            violation_analysis=_with(state.violation_analysis, p.violation_id, p.analysis_id),
        )

    if isinstance(p, AnalysisCompleted):
        violation_id = state.analysis_violation.get(p.analysis_id)
        if violation_id is None:
            raise UnknownAnalysisError(f"completion of unknown analysis {p.analysis_id!r}", where)
        if p.analysis_id in state.completed:
            raise DuplicateAnalysisError(f"analysis {p.analysis_id!r} already completed", where)
        spi_id = state.violations[violation_id].payload.spi_id
        claim = case.claim_of(spi_id)
        return replace(
            state,
            open_analyses=_without(state.open_analyses, violation_id),
            completed=_with(state.completed, p.analysis_id, p),
            risk_score=_with(state.risk_score, claim,
                             state.risk_score.get(claim, 0.0) + p.risk_delta),
        )

    if isinstance(p, ResponseDeployed):
        if p.analysis_id not in state.analysis_violation:
            raise UnknownAnalysisError(f"response to unknown analysis {p.analysis_id!r}", where)
        if any(r.response_id == p.response_id for r in state.responses):
            raise LogError(f"duplicate response id {p.response_id!r}", where)
        for spi_id in p.target_spi_ids:
            if spi_id not in case.spi_index:
                raise LogError(f"response targets unknown SPI {spi_id!r}", where)
        return replace(state, responses=state.responses + (p,))

    if isinstance(p, SpiSetUpdated):
        for spi_id in (*p.added, *p.removed, *p.modified):
            if spi_id not in case.spi_index:
                raise LogError(f"SPI set update names unknown SPI {spi_id!r}", where)
        return state

    return state


def replay(case: SafetyCase, events: Iterable[Event], exposure: float = 1.0) -> LifecycleState:
    state = LifecycleState.initial(case, exposure)
    for event in events:
        state = ingest_event(state, event)
    return state


def validate_log(case: SafetyCase, events: Iterable[Event]) -> None:
    """Raise :class:`LogError` unless ``events`` form a valid log for ``case``."""
    replay(case, events)


def analysis_deadline(
    base_deadline: float,
    exposure: float,
    reference_exposure: float,
    minimum: float = HOUR,
) -> float:
    """Exposure-scaled analysis deadline in ms.

    ``base_deadline * reference_exposure / exposure``: a fleet driving
    twice the reference exposure gets half the time. Never below
    ``minimum``.
    """
    if base_deadline <= 0 or exposure <= 0 or reference_exposure <= 0:
        raise ValueError("base_deadline, exposure and reference_exposure must be positive")
    return max(base_deadline * reference_exposure / exposure, minimum)


def overdue_analyses(
    state: LifecycleState,
    now: int,
    base_deadline: float,
    reference_exposure: float,
    minimum: float = HOUR,
) -> list[str]:
    """Violations without a completed analysis whose deadline passed before ``now``.

    A fleet with zero exposure accrues no risk, so nothing becomes overdue.
    """
    if state.exposure == 0:
        return []
    deadline = analysis_deadline(base_deadline, state.exposure, reference_exposure, minimum)
    overdue = []
    for violation_id, event in state.violations.items():
        analysis = state.violation_analysis.get(violation_id)
        if analysis is not None and analysis in state.completed:
            continue
        if event.timestamp + deadline < now:
            overdue.append((event.timestamp, event.seq, violation_id))
    return [v for _, _, v in sorted(overdue)]


def iter_payloads(events: Iterable[Event], kind: type) -> Iterator[tuple[Event, Any]]:
    for event in events:
        if isinstance(event.payload, kind):
            yield event, event.payload
