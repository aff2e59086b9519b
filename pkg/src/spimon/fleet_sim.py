"""Scenario-driven fleet log generator with ground truth.

A scenario declares a fleet, metric generators, injected faults and a
timed script of lifecycle events. :func:`generate_log` turns it into an
event log plus a :class:`GroundTruth`; the ground truth is computed from
the scenario alone and never consults the detectors.

Randomness comes from SplitMix64 (Steele, Lea & Flood 2014), seeded with
the scenario seed. Each ``uniform`` sample consumes exactly one 64-bit
draw and maps it to ``lo + (hi - lo) * (x >> 11) / 2**53``; draws happen
in log order. Other implementations reproduce a log by following the
same recipe.

Scenario document (durations are ms integers or strings like ``"36h"``)::

    {"id": "S1", "seed": 1, "duration": "10d", "fleet_size": 2,
     "exposure_per_vehicle": 8.0,
     "debounce": {"k": 2, "window": "6h"},
     "metric_models": [{"metric_id": "m", "baseline": {"uniform": [0, 1]},
                        "sample_period": "1h"}],
     "injected_faults": [{"start": "1d", "end": "2d", "metric_id": "m",
                          "offset": 5.0, "linked_claim_id": "G1",
                          "visible_to_spi": true, "vehicles": ["v001"]}],
     "scripted_lifecycle": [{"at": "30h", "kind": "analysis_started",
                             "analysis_id": "A1",
                             "violation": {"spi_id": "s", "occurrence": 0}}],
     "expected_alerts": [{"detector": "uSPI3", "subject": "s",
                          "window": ["1d", "2d"]}]}

Baselines are ``{"constant": c}``, ``{"uniform": [lo, hi]}`` or
``{"drift": [start, slope_per_hour]}``. Response script entries take an
``effectiveness`` of ``"removes_fault"``, ``{"reduces_offset": f}`` or
``"none"``; it applies to faults on the metrics of the targeted SPIs from
the deployment time on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from spimon.errors import ScenarioError
from spimon.lifecycle import (
    MAX_RESTRICTION_LEVEL,
    AnalysisCompleted,
    AnalysisStarted,
    ClaimViolationObserved,
    Event,
    ResponseDeployed,
    ResponseKind,
    SpiSetUpdated,
)
from spimon.meta_monitors import Detector, MetaAlert
from spimon.model import SafetyCase, SpiKind, claims_below
from spimon.spi_eval import Debouncer, MetricSample, SpiViolation
from spimon.units import DAY, HOUR, parse_duration

_MASK64 = (1 << 64) - 1


class SplitMix64:
    """SplitMix64 generator; state and outputs are unsigned 64-bit."""

    def __init__(self, seed: int) -> None:
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()


# -- scenario model -------------------------------------------------------

@dataclass(frozen=True)
class Baseline:
    kind: str                       # constant | uniform | drift
    params: tuple[float, ...]

    def value(self, t: int, rng: SplitMix64) -> float:
        if self.kind == "constant":
            return self.params[0]
        if self.kind == "uniform":
            return rng.uniform(*self.params)
        start, slope = self.params
        return start + slope * (t / HOUR)


@dataclass(frozen=True)
class MetricModel:
    metric_id: str
    baseline: Baseline
    sample_period: int


@dataclass(frozen=True)
class Fault:
    start: int
    end: int
    metric_id: str
    offset: float
    linked_claim_id: str
    visible_to_spi: bool
    vehicles: tuple[str, ...] | None = None

    def hits(self, vehicle_id: str, t: int) -> bool:
        if not self.start <= t < self.end:
            return False
        return self.vehicles is None or vehicle_id in self.vehicles


@dataclass(frozen=True)
class ScriptItem:
    at: int
    kind: str
    fields: Mapping[str, Any]


@dataclass(frozen=True)
class ExpectedAlert:
    detector: Detector
    subject: str
    window: tuple[int, int]

    def to_dict(self) -> dict[str, Any]:
        return {"detector": self.detector.value, "subject": self.subject,
                "window": list(self.window)}


@dataclass(frozen=True)
class Scenario:
    id: str
    seed: int
    duration: int
    fleet_size: int
    exposure_per_vehicle: float
    metric_models: tuple[MetricModel, ...] = ()
    injected_faults: tuple[Fault, ...] = ()
    scripted_lifecycle: tuple[ScriptItem, ...] = ()
    expected_alerts: tuple[ExpectedAlert, ...] = ()
    debounce_k: int = 1
    debounce_window: int = 1
    description: str = ""

    @property
    def vehicle_ids(self) -> tuple[str, ...]:
        width = max(3, len(str(self.fleet_size)))
        return tuple(f"v{i:0{width}d}" for i in range(1, self.fleet_size + 1))

    @property
    def fleet_exposure(self) -> float:
        """Fleet-hours per day."""
        return self.fleet_size * self.exposure_per_vehicle


@dataclass(frozen=True)
class GroundTruth:
    claim_violation_intervals: Mapping[str, tuple[tuple[int, int], ...]]
    expected_alerts: tuple[ExpectedAlert, ...]

    def to_dict(self) -> dict[str, Any]:
        return {
            "claim_violation_intervals": {
                c: [list(i) for i in iv] for c, iv in sorted(self.claim_violation_intervals.items())
            },
            "expected_alerts": [a.to_dict() for a in self.expected_alerts],
        }

    @classmethod
    def from_dict(cls, obj: Mapping[str, Any]) -> GroundTruth:
        try:
            intervals = {
                c: tuple((int(a), int(b)) for a, b in iv)
                for c, iv in obj["claim_violation_intervals"].items()
            }
            expected = tuple(
                ExpectedAlert(Detector(a["detector"]), a["subject"],
                              (int(a["window"][0]), int(a["window"][1])))
                for a in obj["expected_alerts"]
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"malformed ground truth: {exc}") from None
        return cls(intervals, expected)


# -- parsing --------------------------------------------------------------

_SCENARIO_KEYS = {
    "id", "seed", "duration", "fleet_size", "exposure_per_vehicle", "metric_models",
    "injected_faults", "scripted_lifecycle", "expected_alerts", "debounce", "description",
}
_SCENARIO_REQUIRED = {"id", "seed", "duration", "fleet_size", "exposure_per_vehicle"}

_SCRIPT_FIELDS: dict[str, tuple[set[str], set[str]]] = {
    "claim_violation_observed": ({"claim_id", "is_loss"}, set()),
    "analysis_started": ({"analysis_id", "violation"}, set()),
    "analysis_completed": (
        {"analysis_id", "root_cause"},
        {"risk_delta", "correlation_insight", "system_change_detected"},
    ),
    "response_deployed": (
        {"response_id", "response_kind", "target_spi_ids", "analysis_id"},
        {"restriction_level", "effectiveness"},
    ),
    "spi_set_updated": (set(), {"added", "removed", "modified"}),
}


def _keys(obj: Any, required: set[str], allowed: set[str], path: str) -> None:
    if not isinstance(obj, dict):
        raise ScenarioError("expected an object", path)
    missing = required - obj.keys()
    if missing:
        raise ScenarioError(f"missing {', '.join(sorted(missing))}", path)
    unknown = obj.keys() - allowed
    if unknown:
        raise ScenarioError(f"unknown key(s) {', '.join(sorted(unknown))}", path)


def _duration(value: Any, path: str) -> int:
    try:
        return parse_duration(value)
    except ValueError as exc:
        raise ScenarioError(str(exc), path) from None


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ScenarioError(f"expected a finite number, got {value!r}", path)
    return float(value)


def _int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"expected an integer, got {value!r}", path)
    return value


def _str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ScenarioError(f"expected a string, got {value!r}", path)
    return value


def _baseline(obj: Any, path: str) -> Baseline:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise ScenarioError("baseline must be one of constant/uniform/drift", path)
    (kind, raw), = obj.items()
    if kind == "constant":
        return Baseline("constant", (_number(raw, path),))
    if kind in ("uniform", "drift"):
        if not isinstance(raw, list) or len(raw) != 2:
            raise ScenarioError(f"{kind} takes two numbers", path)
        params = (_number(raw[0], path), _number(raw[1], path))
        if kind == "uniform" and params[0] > params[1]:
            raise ScenarioError("uniform lower bound exceeds upper bound", path)
        return Baseline(kind, params)
    raise ScenarioError(f"unknown baseline {kind!r}", path)


def parse_scenario(document: str | bytes | Mapping[str, Any]) -> Scenario:
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"not valid JSON: {exc}") from None
    _keys(document, _SCENARIO_REQUIRED, _SCENARIO_KEYS, "$")
    doc = document

    models = []
    for i, m in enumerate(doc.get("metric_models", [])):
        path = f"$.metric_models[{i}]"
        _keys(m, {"metric_id", "baseline", "sample_period"},
              {"metric_id", "baseline", "sample_period"}, path)
        period = _duration(m["sample_period"], path)
        if period <= 0:
            raise ScenarioError("sample_period must be positive", path)
        models.append(MetricModel(_str(m["metric_id"], path), _baseline(m["baseline"], path), period))

    fault_keys = {"start", "end", "metric_id", "offset", "linked_claim_id", "visible_to_spi"}
    faults = []
    for i, f in enumerate(doc.get("injected_faults", [])):
        path = f"$.injected_faults[{i}]"
        _keys(f, fault_keys, fault_keys | {"vehicles"}, path)
        if not isinstance(f["visible_to_spi"], bool):
            raise ScenarioError("visible_to_spi must be a boolean", path)
        vehicles = f.get("vehicles")
        if vehicles is not None:
            if not isinstance(vehicles, list) or not all(isinstance(v, str) for v in vehicles):
                raise ScenarioError("vehicles must be a list of vehicle ids", path)
            vehicles = tuple(vehicles)
        faults.append(Fault(
            start=_duration(f["start"], path),
            end=_duration(f["end"], path),
            metric_id=_str(f["metric_id"], path),
            offset=_number(f["offset"], path),
            linked_claim_id=_str(f["linked_claim_id"], path),
            visible_to_spi=f["visible_to_spi"],
            vehicles=vehicles,
        ))

    script = []
    for i, item in enumerate(doc.get("scripted_lifecycle", [])):
        path = f"$.scripted_lifecycle[{i}]"
        if not isinstance(item, dict) or item.get("kind") not in _SCRIPT_FIELDS:
            raise ScenarioError("unknown script kind", path)
        required, optional = _SCRIPT_FIELDS[item["kind"]]
        _keys(item, required | {"at", "kind"}, required | optional | {"at", "kind"}, path)
        fields = {k: v for k, v in item.items() if k not in ("at", "kind")}
        script.append(ScriptItem(_duration(item["at"], path), item["kind"], fields))

    expected = []
    for i, a in enumerate(doc.get("expected_alerts", [])):
        path = f"$.expected_alerts[{i}]"
        _keys(a, {"detector", "subject", "window"}, {"detector", "subject", "window"}, path)
        try:
            detector = Detector(a["detector"])
        except ValueError:
            raise ScenarioError(f"unknown detector {a['detector']!r}", path) from None
        w = a["window"]
        if not isinstance(w, list) or len(w) != 2:
            raise ScenarioError("window must be [start, end]", path)
        expected.append(ExpectedAlert(detector, _str(a["subject"], path),
                                      (_signed_duration(w[0], path), _duration(w[1], path))))

    debounce = doc.get("debounce", {"k": 1, "window": 1})
    _keys(debounce, {"k", "window"}, {"k", "window"}, "$.debounce")
    k = _int(debounce["k"], "$.debounce.k")
    window = _duration(debounce["window"], "$.debounce.window")
    if k < 1 or window <= 0:
        raise ScenarioError("debounce needs k >= 1 and a positive window", "$.debounce")

    fleet_size = _int(doc["fleet_size"], "$.fleet_size")
    if fleet_size < 1:
        raise ScenarioError("fleet_size must be at least 1", "$.fleet_size")
    exposure = _number(doc["exposure_per_vehicle"], "$.exposure_per_vehicle")
    if exposure < 0:
        raise ScenarioError("exposure_per_vehicle must be non-negative", "$.exposure_per_vehicle")

    return Scenario(
        id=_str(doc["id"], "$.id"),
        seed=_int(doc["seed"], "$.seed"),
        duration=_duration(doc["duration"], "$.duration"),
        fleet_size=fleet_size,
        exposure_per_vehicle=exposure,
        metric_models=tuple(models),
        injected_faults=tuple(faults),
        scripted_lifecycle=tuple(script),
        expected_alerts=tuple(expected),
        debounce_k=k,
        debounce_window=window,
        description=_str(doc.get("description", ""), "$.description"),
    )


def _signed_duration(value: Any, path: str) -> int:
    # expected windows may start before t=0 (lookback windows near the start)
    if isinstance(value, str) and value.strip().startswith("-"):
        return -_duration(value.strip()[1:], path)
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    return _duration(value, path)


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}") from None
    return parse_scenario(text)


def validate_scenario(scenario: Scenario, case: SafetyCase) -> None:
    """Check every reference of ``scenario`` against ``case``."""
    metrics = {m.metric_id for m in scenario.metric_models}
    vehicles = set(scenario.vehicle_ids)
    for i, f in enumerate(scenario.injected_faults):
        path = f"injected_faults[{i}]"
        if not 0 <= f.start < f.end <= scenario.duration:
            raise ScenarioError("fault interval outside the scenario duration", path)
        if f.metric_id not in metrics:
            raise ScenarioError(f"fault on unmodelled metric {f.metric_id!r}", path)
        if f.linked_claim_id not in case or not case.node(f.linked_claim_id).is_goal:
            raise ScenarioError(f"unknown claim {f.linked_claim_id!r}", path)
        if f.vehicles is not None and not set(f.vehicles) <= vehicles:
            raise ScenarioError("fault names vehicles outside the fleet", path)
    for i, item in enumerate(scenario.scripted_lifecycle):
        path = f"scripted_lifecycle[{i}]"
        if not 0 <= item.at <= scenario.duration:
            raise ScenarioError("script entry outside the scenario duration", path)
        spi_refs: list[Any] = []
        if item.kind == "claim_violation_observed":
            claim = item.fields["claim_id"]
            if claim not in case or not case.node(claim).is_goal:
                raise ScenarioError(f"unknown claim {claim!r}", path)
        elif item.kind == "analysis_started":
            ref = item.fields["violation"]
            if not isinstance(ref, dict) or set(ref) != {"spi_id", "occurrence"}:
                raise ScenarioError("violation must be {spi_id, occurrence}", path)
            spi_refs.append(ref["spi_id"])
        elif item.kind == "response_deployed":
            spi_refs.extend(item.fields["target_spi_ids"])
        elif item.kind == "spi_set_updated":
            for key in ("added", "removed", "modified"):
                spi_refs.extend(item.fields.get(key, []))
        for spi_id in spi_refs:
            if spi_id not in case.spi_index:
                raise ScenarioError(f"unknown SPI {spi_id!r}", path)
    for i, a in enumerate(scenario.expected_alerts):
        if a.subject not in case and a.subject not in case.spi_index:
            raise ScenarioError(f"unknown alert subject {a.subject!r}", f"expected_alerts[{i}]")


# -- generation -----------------------------------------------------------

def _effect(item: ScriptItem, path: str) -> tuple[str, float]:
    raw = item.fields.get("effectiveness", "none")
    if raw == "removes_fault":
        return "removes_fault", 0.0
    if raw == "none":
        return "none", 1.0
    if isinstance(raw, dict) and set(raw) == {"reduces_offset"}:
        factor = _number(raw["reduces_offset"], path)
        if not 0 <= factor <= 1:
            raise ScenarioError("reduces_offset factor must lie in [0, 1]", path)
        return "reduces_offset", factor
    raise ScenarioError(f"unknown effectiveness {raw!r}", path)


def ground_truth(scenario: Scenario, case: SafetyCase) -> GroundTruth:
    """Claim violation intervals and expected alerts, from the scenario alone.

    A fault's interval ends early when a ``removes_fault`` response on one
    of its metric's SPIs is deployed inside it.
    """
    removals: dict[str, list[int]] = {}
    for i, item in enumerate(scenario.scripted_lifecycle):
        if item.kind != "response_deployed":
            continue
        if _effect(item, f"scripted_lifecycle[{i}]")[0] != "removes_fault":
            continue
        for spi_id in item.fields["target_spi_ids"]:
            removals.setdefault(case.spi_index[spi_id].metric_id, []).append(item.at)
    intervals: dict[str, list[tuple[int, int]]] = {}
    for f in scenario.injected_faults:
        end = f.end
        for t in removals.get(f.metric_id, []):
            if f.start <= t < end:
                end = t
        intervals.setdefault(f.linked_claim_id, []).append((f.start, end))
    return GroundTruth(
        claim_violation_intervals={c: tuple(sorted(v)) for c, v in sorted(intervals.items())},
        expected_alerts=tuple(scenario.expected_alerts),
    )


@dataclass
class _Sim:
    scenario: Scenario
    case: SafetyCase
    events: list[Event] = field(default_factory=list)
    seq: int = 0
    factors: dict[int, float] = field(default_factory=dict)   # fault index -> offset factor
    revision: int = 0

    def emit(self, t: int, payload: Any) -> Event:
        self.seq += 1
        event = Event(seq=self.seq, timestamp=t, payload=payload)
        self.events.append(event)
        return event


def generate_log(scenario: Scenario, case: SafetyCase) -> tuple[list[Event], GroundTruth]:
    """Simulate ``scenario`` against ``case``.

    Raises:
        ScenarioError: unresolved references, or a script that refers to
            a violation, analysis or response that does not exist yet.
    """
    validate_scenario(scenario, case)
    truth = ground_truth(scenario, case)
    sim = _Sim(scenario, case)
    rng = SplitMix64(scenario.seed)
    vehicles = scenario.vehicle_ids

    activated_later = {
        spi_id
        for item in scenario.scripted_lifecycle if item.kind == "spi_set_updated"
        for spi_id in item.fields.get("added", [])
    }
    active = set(case.spi_index) - activated_later
    spis_by_metric: dict[str, list[str]] = {}
    for spi in case.spi_index.values():
        spis_by_metric.setdefault(spi.metric_id, []).append(spi.id)
    debouncers: dict[str, Debouncer] = {}

    def debouncer(spi_id: str) -> Debouncer:
        if spi_id not in debouncers:
            debouncers[spi_id] = Debouncer(case.spi_index[spi_id], scenario.debounce_k,
                                           scenario.debounce_window)
        return debouncers[spi_id]

    # timeline entries: (t, 0, vehicle, model index) for samples, (t, 1, script index) for script
    timeline: list[tuple] = []
    for mi, model in enumerate(scenario.metric_models):
        for t in range(0, scenario.duration, model.sample_period):
            for vehicle in vehicles:
                timeline.append((t, 0, vehicle, mi))
    for si, item in enumerate(scenario.scripted_lifecycle):
        timeline.append((item.at, 1, "", si))
    timeline.sort()

    violations_by_spi: dict[str, list[SpiViolation]] = {}
    started: dict[str, str] = {}     # analysis_id -> violation_id
    completed: set[str] = set()

    for entry in timeline:
        t = entry[0]
        if entry[1] == 0:
            vehicle, model = entry[2], scenario.metric_models[entry[3]]
            value = model.baseline.value(t, rng)
            for fi, fault in enumerate(scenario.injected_faults):
                if fault.visible_to_spi and fault.metric_id == model.metric_id and fault.hits(vehicle, t):
                    value += fault.offset * sim.factors.get(fi, 1.0)
            sample = MetricSample(model.metric_id, vehicle, t, value, f"rev{sim.revision}")
            sim.emit(t, sample)
            for spi_id in sorted(spis_by_metric.get(model.metric_id, [])):
                if spi_id not in active:
                    continue
                violation = debouncer(spi_id).feed(sample)
                if violation is not None:
                    sim.emit(t, violation)
                    violations_by_spi.setdefault(spi_id, []).append(violation)
            continue

        index = entry[3]
        item = scenario.scripted_lifecycle[index]
        path = f"scripted_lifecycle[{index}]"
        f = item.fields
        if item.kind == "claim_violation_observed":
            if not isinstance(f["is_loss"], bool):
                raise ScenarioError("is_loss must be a boolean", path)
            sim.emit(t, ClaimViolationObserved(f["claim_id"], f["is_loss"]))
        elif item.kind == "analysis_started":
            spi_id, n = f["violation"]["spi_id"], f["violation"]["occurrence"]
            seen = violations_by_spi.get(spi_id, [])
            if isinstance(n, bool) or not isinstance(n, int) or not 0 <= n < len(seen):
                raise ScenarioError(
                    f"analysis starts before violation #{n} of {spi_id!r} has occurred", path
                )
            analysis_id = _str(f["analysis_id"], path)
            if analysis_id in started or seen[n].violation_id in started.values():
                raise ScenarioError(f"duplicate analysis for {seen[n].violation_id!r}", path)
            started[analysis_id] = seen[n].violation_id
            sim.emit(t, AnalysisStarted(analysis_id, seen[n].violation_id))
        elif item.kind == "analysis_completed":
            analysis_id = f["analysis_id"]
            if analysis_id not in started or analysis_id in completed:
                raise ScenarioError(f"completion of analysis {analysis_id!r} not started", path)
            completed.add(analysis_id)
            root = f["root_cause"]
            if root == "inconclusive":
                cause = None
            elif isinstance(root, dict) and set(root) == {"identified"}:
                cause = _str(root["identified"], path)
            else:
                raise ScenarioError("root_cause must be inconclusive or {identified}", path)
            for flag in ("correlation_insight", "system_change_detected"):
                if not isinstance(f.get(flag, False), bool):
                    raise ScenarioError(f"{flag} must be a boolean", path)
            sim.emit(t, AnalysisCompleted(
                analysis_id, cause, _number(f.get("risk_delta", 0.0), path),
                f.get("correlation_insight", False), f.get("system_change_detected", False),
            ))
        elif item.kind == "response_deployed":
            if f["analysis_id"] not in started:
                raise ScenarioError(
                    f"response {f['response_id']!r} precedes its analysis {f['analysis_id']!r}", path
                )
            try:
                kind = ResponseKind(f["response_kind"])
            except ValueError:
                raise ScenarioError(f"unknown response_kind {f['response_kind']!r}", path) from None
            level = f.get("restriction_level")
            if level is not None and (isinstance(level, bool) or not isinstance(level, int)
                                      or not 0 <= level <= MAX_RESTRICTION_LEVEL):
                raise ScenarioError("restriction_level must be 0..3", path)
            effect, factor = _effect(item, path)
            metrics = {case.spi_index[s].metric_id for s in f["target_spi_ids"]}
            if effect != "none":
                for fi, fault in enumerate(scenario.injected_faults):
                    if fault.metric_id in metrics:
                        sim.factors[fi] = sim.factors.get(fi, 1.0) * factor
            if kind is ResponseKind.SYSTEM_UPDATE:
                sim.revision += 1
            sim.emit(t, ResponseDeployed(
                _str(f["response_id"], path), kind, tuple(f["target_spi_ids"]),
                f["analysis_id"], level,
            ))
        elif item.kind == "spi_set_updated":
            added = tuple(f.get("added", []))
            removed = tuple(f.get("removed", []))
            active.update(added)
            active.difference_update(removed)
            for spi_id in (*added, *removed):
                debouncers.pop(spi_id, None)
            sim.emit(t, SpiSetUpdated(added, removed, tuple(f.get("modified", []))))

    return sim.events, truth


# -- scoring --------------------------------------------------------------

@dataclass(frozen=True)
class DetectionScore:
    true_positives: int
    false_positives: int
    misses: int
    mean_lead_time: float | None

    def to_dict(self) -> dict[str, Any]:
        return {
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "misses": self.misses,
            "mean_lead_time": self.mean_lead_time,
        }


def _overlaps(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def lead_times(case: SafetyCase, events: Sequence[Event], lookback: int = 7 * DAY) -> list[int]:
    """For each loss preceded by a leading-SPI violation on the lost claim or
    below it (within ``lookback``), the time from the earliest such
    violation to the loss."""
    out = []
    violations = [e for e in events if isinstance(e.payload, SpiViolation)]
    for loss in events:
        p = loss.payload
        if not (isinstance(p, ClaimViolationObserved) and p.is_loss):
            continue
        scope = claims_below(case, p.claim_id) | {p.claim_id}
        earliest = None
        for v in violations:
            if v.seq >= loss.seq:
                break
            spi = case.spi_index[v.payload.spi_id]
            if (spi.kind is SpiKind.LEADING and spi.claim_id in scope
                    and v.timestamp >= loss.timestamp - lookback):
                earliest = v.timestamp
                break
        if earliest is not None:
            out.append(loss.timestamp - earliest)
    return out


def score_detection(
    alerts: Sequence[MetaAlert],
    truth: GroundTruth,
    case: SafetyCase | None = None,
    events: Sequence[Event] | None = None,
    lookback: int = 7 * DAY,
) -> DetectionScore:
    """Match reported alerts to expected ones (same detector and subject,
    overlapping windows; each alert matches at most once)."""
    unmatched = list(alerts)
    tp = 0
    for expected in truth.expected_alerts:
        for i, alert in enumerate(unmatched):
            if (alert.detector == expected.detector and alert.subject == expected.subject
                    and _overlaps(alert.window, expected.window)):
                del unmatched[i]
                tp += 1
                break
    misses = len(truth.expected_alerts) - tp
    mean = None
    if case is not None and events is not None:
        leads = lead_times(case, events, lookback)
        if leads:
            mean = sum(leads) / len(leads)
    return DetectionScore(tp, len(unmatched), misses, mean)
