"""Meta-SPI detectors: monitors over the SPI framework itself.

Each detector inspects a safety case together with a validated event log
and reports :class:`MetaAlert` records. Every alert cites the log events
(by ``seq``) that satisfy the detector's predicate, and the challenge
claims the detector probes.

Time-window conventions, shared by all detectors: "within the lookback
before event e" means *earlier in the log than e* and with
``ts >= e.ts - lookback``. Response windows are ``(t + grace, t + horizon]``
for uSPI6 and ``(t, t + horizon]`` (after the response in log order) for
uSPI8.

uSPI7 reuses the uSPI2 predicate and additionally requires that an SPI
set update touching the lower-level SPIs happened earlier. Its notion of
"the update did not improve prediction" is therefore structural: the
higher-level SPI still trips with the lower-level ones silent.
"""

from __future__ import annotations

import bisect
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Any, Callable, Sequence

from spimon.lifecycle import (
    MAX_RESTRICTION_LEVEL,
    AnalysisCompleted,
    AnalysisStarted,
    ClaimViolationObserved,
    Event,
    ResponseDeployed,
    ResponseKind,
    SpiSetUpdated,
    analysis_deadline,
    validate_log,
)
from spimon.model import ITEM_LEVEL, SafetyCase, claims_below
from spimon.spi_eval import SpiViolation
from spimon.units import DAY, HOUR


class Detector(str, Enum):
    USPI1 = "uSPI1"
    USPI2 = "uSPI2"
    USPI3 = "uSPI3"
    USPI4 = "uSPI4"
    USPI5 = "uSPI5"
    USPI6 = "uSPI6"
    USPI7 = "uSPI7"
    USPI8 = "uSPI8"


CHALLENGE_CLAIMS: dict[Detector, tuple[str, ...]] = {
    Detector.USPI1: ("CC1",),
    Detector.USPI2: ("CC2", "CC3", "CC4"),
    Detector.USPI3: ("CC5",),
    Detector.USPI4: ("CC6",),
    Detector.USPI5: ("CC7", "CC8"),
    Detector.USPI6: ("CC9",),
    Detector.USPI7: ("CC10",),
    Detector.USPI8: ("CC11",),
}


class AlertSeverity(str, Enum):
    ADVISORY = "advisory"
    CRITICAL = "critical"


@dataclass(frozen=True)
class MetaAlert:
    detector: Detector
    window: tuple[int, int]
    evidence: tuple[int, ...]
    subject: str
    severity: AlertSeverity
    recommendation: str
    challenge_claims: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.evidence:
            raise ValueError("a meta alert needs at least one evidence event")
        if not self.challenge_claims:
            object.__setattr__(self, "challenge_claims", CHALLENGE_CLAIMS[self.detector])
        elif self.challenge_claims != CHALLENGE_CLAIMS[self.detector]:
            raise ValueError(f"{self.detector.value} probes {CHALLENGE_CLAIMS[self.detector]}")

    @property
    def sort_key(self) -> tuple:
        return (self.window[1], self.detector.value, self.subject, self.evidence)

    def to_dict(self) -> dict[str, Any]:
        return {
            "detector": self.detector.value,
            "challenge_claims": list(self.challenge_claims),
            "window": list(self.window),
            "evidence": list(self.evidence),
            "subject": self.subject,
            "severity": self.severity.value,
            "recommendation": self.recommendation,
        }

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> MetaAlert:
        return cls(
            detector=Detector(obj["detector"]),
            challenge_claims=tuple(obj["challenge_claims"]),
            window=(int(obj["window"][0]), int(obj["window"][1])),
            evidence=tuple(int(s) for s in obj["evidence"]),
            subject=obj["subject"],
            severity=AlertSeverity(obj["severity"]),
            recommendation=obj["recommendation"],
        )


@dataclass(frozen=True)
class DetectorParams:
    """Detector windows and counts, all durations in ms.

    The defaults are calibration starting points, not recommendations.
    The timeliness fields decide when a never-started analysis stops
    counting as pending for uSPI3.
    """

    lookback_window: int = 7 * DAY
    recurrence_k: int = 2
    response_grace: int = 24 * HOUR
    response_horizon: int = 30 * DAY
    analysis_base_deadline: int = 48 * HOUR
    exposure: float = 1.0
    reference_exposure: float = 1.0
    min_deadline: int = HOUR

    def __post_init__(self) -> None:
        for name in ("lookback_window", "response_grace", "response_horizon",
                     "analysis_base_deadline", "min_deadline"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.recurrence_k < 2:
            raise ValueError("recurrence_k must be at least 2")
        if self.response_grace >= self.response_horizon:
            raise ValueError("response_grace must be shorter than response_horizon")
        for name in ("exposure", "reference_exposure"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be a positive finite number")

    @property
    def analysis_deadline(self) -> float:
        return analysis_deadline(self.analysis_base_deadline, self.exposure,
                                 self.reference_exposure, self.min_deadline)


@dataclass
class _SpiTrack:
    seqs: list[int] = field(default_factory=list)
    stamps: list[int] = field(default_factory=list)
    events: list[Event] = field(default_factory=list)


class LogIndex:
    """Lookup structures over one (case, log) pair, shared by all detectors."""

    def __init__(self, case: SafetyCase, events: Sequence[Event]) -> None:
        self.case = case
        self.events = tuple(events)
        self.by_seq: dict[int, Event] = {}
        self.violations: dict[str, Event] = {}
        self.by_spi: dict[str, _SpiTrack] = defaultdict(_SpiTrack)
        self.started: dict[str, Event] = {}            # analysis_id -> event
        self.completed: dict[str, Event] = {}          # analysis_id -> event
        self.analysis_of_violation: dict[str, str] = {}
        self.losses: list[Event] = []
        self.responses: list[Event] = []
        self.updates: list[Event] = []
        for event in self.events:
            self.by_seq[event.seq] = event
            p = event.payload
            if isinstance(p, SpiViolation):
                self.violations[p.violation_id] = event
                track = self.by_spi[p.spi_id]
                track.seqs.append(event.seq)
                track.stamps.append(event.timestamp)
                track.events.append(event)
            elif isinstance(p, AnalysisStarted):
                self.started[p.analysis_id] = event
                self.analysis_of_violation[p.violation_id] = p.analysis_id
            elif isinstance(p, AnalysisCompleted):
                self.completed[p.analysis_id] = event
            elif isinstance(p, ClaimViolationObserved):
                if p.is_loss:
                    self.losses.append(event)
            elif isinstance(p, ResponseDeployed):
                self.responses.append(event)
            elif isinstance(p, SpiSetUpdated):
                self.updates.append(event)
        self._lower_cache: dict[str, frozenset[str]] = {}
        self._update_cache: dict[str, list[int]] = {}

    def lower_spis(self, claim: str) -> frozenset[str]:
        """SPIs conditioning a goal strictly below ``claim``."""
        cached = self._lower_cache.get(claim)
        if cached is None:
            below = claims_below(self.case, claim)
            cached = frozenset(s.id for s in self.case.spi_index.values() if s.claim_id in below)
            self._lower_cache[claim] = cached
        return cached

    @cached_property
    def higher_spis(self) -> dict[str, frozenset[str]]:
        """For every SPI, the SPIs conditioning a proper goal ancestor of its claim."""
        out = {}
        for spi in self.case.spi_index.values():
            above = set(self.case.goal_ancestors(spi.claim_id))
            out[spi.id] = frozenset(
                s.id for s in self.case.spi_index.values() if s.claim_id in above
            )
        return out

    def updates_touching(self, claim: str) -> list[int]:
        """Seqs of SPI set updates that added or modified an SPI below ``claim``."""
        cached = self._update_cache.get(claim)
        if cached is None:
            lower = self.lower_spis(claim)
            cached = [
                e.seq for e in self.updates
                if lower.intersection(e.payload.added) or lower.intersection(e.payload.modified)
            ]
            self._update_cache[claim] = cached
        return cached

    def recent_violation(self, spi_ids: frozenset[str], before_seq: int, since_ts: int) -> bool:
        """Any violation of ``spi_ids`` earlier than ``before_seq`` with ts >= ``since_ts``."""
        for spi_id in spi_ids:
            track = self.by_spi.get(spi_id)
            if not track:
                continue
            i = bisect.bisect_left(track.seqs, before_seq) - 1
            # timestamps are non-decreasing, the latest earlier violation is the best candidate
            if i >= 0 and track.stamps[i] >= since_ts:
                return True
        return False

    def completion_of(self, violation_id: str) -> Event | None:
        analysis = self.analysis_of_violation.get(violation_id)
        return None if analysis is None else self.completed.get(analysis)

    def violation_of_analysis(self, analysis_id: str) -> Event:
        return self.violations[self.started[analysis_id].payload.violation_id]


def _index(case: SafetyCase, log: Sequence[Event] | LogIndex) -> LogIndex:
    return log if isinstance(log, LogIndex) else LogIndex(case, log)


# -- detectors ------------------------------------------------------------


def detect_uncovered_loss(case, log, params: DetectorParams) -> list[MetaAlert]:
    """uSPI1: a loss on an item-level (or top) claim with no recent lower-level SPI violation."""
    idx = _index(case, log)
    lookback = params.lookback_window
    alerts = []
    for event in idx.losses:
        claim = event.payload.claim_id
        node = case.goal(claim)
        if ITEM_LEVEL not in node.tags and claim != case.top_goal.id:
            continue
        if idx.recent_violation(idx.lower_spis(claim), event.seq, event.timestamp - lookback):
            continue
        alerts.append(MetaAlert(
            detector=Detector.USPI1,
            window=(event.timestamp - lookback, event.timestamp),
            evidence=(event.seq,),
            subject=claim,
            severity=AlertSeverity.CRITICAL,
            recommendation=f"define lower-level SPIs able to warn before losses on {claim}",
        ))
    return alerts


def detect_prediction_gap(case, log, params: DetectorParams,
                          post_update_only: bool = False) -> list[MetaAlert]:
    """uSPI2 (``post_update_only=False``) and uSPI7 (``True``).

    Fires on an SPI violation whose claim has SPIs below it, none of which
    tripped within the lookback. Claims with nothing below are left to
    the static C2 check.
    """
    idx = _index(case, log)
    lookback = params.lookback_window
    alerts = []
    for spi_id, track in sorted(idx.by_spi.items()):
        claim = case.claim_of(spi_id)
        lower = idx.lower_spis(claim)
        if not lower:
            continue
        update_seqs = idx.updates_touching(claim) if post_update_only else []
        for event in track.events:
            if post_update_only:
                i = bisect.bisect_left(update_seqs, event.seq) - 1
                if i < 0:
                    continue
            if idx.recent_violation(lower, event.seq, event.timestamp - lookback):
                continue
            window = (event.timestamp - lookback, event.timestamp)
            if post_update_only:
                alerts.append(MetaAlert(
                    detector=Detector.USPI7,
                    window=window,
                    evidence=(update_seqs[i], event.seq),
                    subject=spi_id,
                    severity=AlertSeverity.ADVISORY,
                    recommendation=f"updated SPIs below {claim} still miss violations; revise them",
                ))
            else:
                alerts.append(MetaAlert(
                    detector=Detector.USPI2,
                    window=window,
                    evidence=(event.seq,),
                    subject=spi_id,
                    severity=AlertSeverity.ADVISORY,
                    recommendation=f"add lower-level SPIs with prediction power for {claim}",
                ))
    return alerts


def detect_analysis_saturation(case, log, params: DetectorParams) -> list[MetaAlert]:
    """uSPI3: an SPI trips again while an earlier violation of it is still pending.

    Pending means: analysis started and not completed, or not started yet
    and still within the analysis deadline.
    """
    idx = _index(case, log)
    deadline = params.analysis_deadline
    pending: dict[str, dict[str, Event]] = defaultdict(dict)   # spi -> violation_id -> event
    started: set[str] = set()
    alerts = []
    for event in idx.events:
        p = event.payload
        if isinstance(p, AnalysisStarted):
            started.add(p.violation_id)
        elif isinstance(p, AnalysisCompleted):
            v = idx.started[p.analysis_id].payload.violation_id
            pending[idx.violations[v].payload.spi_id].pop(v, None)
        elif isinstance(p, SpiViolation):
            priors = pending[p.spi_id]
            open_priors = [
                prior for vid, prior in priors.items()
                if vid in started or event.timestamp <= prior.timestamp + deadline
            ]
            if open_priors:
                first = min(e.timestamp for e in open_priors)
                alerts.append(MetaAlert(
                    detector=Detector.USPI3,
                    window=(first, event.timestamp),
                    evidence=tuple(sorted([e.seq for e in open_priors] + [event.seq])),
                    subject=p.spi_id,
                    severity=AlertSeverity.CRITICAL,
                    recommendation="analysis backlog saturated; deploy immediate contingency actions",
                ))
            priors[p.violation_id] = event
    return alerts


def detect_inconclusive_analysis(case, log, params: DetectorParams) -> list[MetaAlert]:
    """uSPI4: one alert per inconclusive analysis."""
    idx = _index(case, log)
    alerts = []
    for analysis_id, completion in idx.completed.items():
        if not completion.payload.inconclusive:
            continue
        violation = idx.violation_of_analysis(analysis_id)
        alerts.append(MetaAlert(
            detector=Detector.USPI4,
            window=(violation.timestamp, completion.timestamp),
            evidence=(violation.seq, completion.seq),
            subject=violation.payload.spi_id,
            severity=AlertSeverity.ADVISORY,
            recommendation="increase diagnostics capabilities",
        ))
    return alerts


def detect_insightless_recurrence(case, log, params: DetectorParams) -> list[MetaAlert]:
    """uSPI5: recurring violations of one SPI whose analyses bring no insight.

    Evaluated at every analysis completion C of a violation v of SPI s:
    take the violations of s earlier than C within the lookback of C
    (v must be among them). With at least ``recurrence_k`` of them, and
    every analysis among them completed by C reporting neither a
    correlation insight nor a detected system change, alert.
    """
    idx = _index(case, log)
    lookback = params.lookback_window
    alerts = []
    for analysis_id, completion in idx.completed.items():
        if not completion.payload.insightless:
            continue
        violation = idx.violation_of_analysis(analysis_id)
        since = completion.timestamp - lookback
        if violation.timestamp < since:
            continue
        spi_id = violation.payload.spi_id
        track = idx.by_spi[spi_id]
        lo = bisect.bisect_left(track.stamps, since)
        hi = bisect.bisect_left(track.seqs, completion.seq)
        window_violations = track.events[lo:hi]
        if len(window_violations) < params.recurrence_k:
            continue
        done = []
        for v in window_violations:
            c = idx.completion_of(v.payload.violation_id)
            if c is not None and c.seq <= completion.seq:
                done.append(c)
        if not all(c.payload.insightless for c in done):
            continue
        alerts.append(MetaAlert(
            detector=Detector.USPI5,
            window=(since, completion.timestamp),
            evidence=tuple(sorted([v.seq for v in window_violations] + [c.seq for c in done])),
            subject=spi_id,
            severity=AlertSeverity.ADVISORY,
            recommendation="recurring violations give no insight; revisit diagnostics and SPI set",
        ))
    return alerts


def detect_ineffective_response(case, log, params: DetectorParams) -> list[MetaAlert]:
    """uSPI6: a response is followed by further violations of its target SPI.

    ``recurrence_k`` or more recurrences in ``(t + grace, t + horizon]``
    are critical; fewer (but at least one) are advisory.
    """
    idx = _index(case, log)
    alerts = []
    for response in idx.responses:
        t = response.timestamp
        lo_t, hi_t = t + params.response_grace, t + params.response_horizon
        for spi_id in sorted(set(response.payload.target_spi_ids)):
            track = idx.by_spi.get(spi_id)
            if not track:
                continue
            lo = bisect.bisect_right(track.stamps, lo_t)
            hi = bisect.bisect_right(track.stamps, hi_t)
            recurrences = track.events[lo:hi]
            if not recurrences:
                continue
            critical = len(recurrences) >= params.recurrence_k
            alerts.append(MetaAlert(
                detector=Detector.USPI6,
                window=(lo_t, hi_t),
                evidence=tuple(sorted([response.seq] + [v.seq for v in recurrences])),
                subject=spi_id,
                severity=AlertSeverity.CRITICAL if critical else AlertSeverity.ADVISORY,
                recommendation=f"response {response.payload.response_id} did not stop "
                               f"violations of {spi_id}; strengthen the response",
            ))
    return alerts


def detect_failed_restriction(case, log, params: DetectorParams) -> list[MetaAlert]:
    """uSPI8: an operation restriction is followed by a violation of its SPI or of
    an SPI on a higher-level claim; recommends the next restriction level."""
    idx = _index(case, log)
    alerts = []
    for response in idx.responses:
        p = response.payload
        if p.kind is not ResponseKind.OPERATION_RESTRICTION:
            continue
        t_end = response.timestamp + params.response_horizon
        level = p.restriction_level or 0
        recommended = min(level + 1, MAX_RESTRICTION_LEVEL)
        for spi_id in sorted(set(p.target_spi_ids)):
            relevant = {spi_id} | idx.higher_spis[spi_id]
            hits = []
            for other in relevant:
                track = idx.by_spi.get(other)
                if not track:
                    continue
                lo = bisect.bisect_right(track.seqs, response.seq)
                hi = bisect.bisect_right(track.stamps, t_end)
                hits.extend(e.seq for e in track.events[lo:hi])
            if not hits:
                continue
            alerts.append(MetaAlert(
                detector=Detector.USPI8,
                window=(response.timestamp, t_end),
                evidence=tuple(sorted([response.seq] + hits)),
                subject=spi_id,
                severity=AlertSeverity.CRITICAL,
                recommendation=f"tighten operation restriction to level {recommended}",
            ))
    return alerts


_RUNNERS: tuple[Callable[[SafetyCase, LogIndex, DetectorParams], list[MetaAlert]], ...] = (
    detect_uncovered_loss,
    lambda c, i, p: detect_prediction_gap(c, i, p, post_update_only=False),
    detect_analysis_saturation,
    detect_inconclusive_analysis,
    detect_insightless_recurrence,
    detect_ineffective_response,
    lambda c, i, p: detect_prediction_gap(c, i, p, post_update_only=True),
    detect_failed_restriction,
)


def sort_alerts(alerts: list[MetaAlert]) -> list[MetaAlert]:
    return sorted(alerts, key=lambda a: a.sort_key)


def run_all_detectors(
    case: SafetyCase,
    log: Sequence[Event],
    params: DetectorParams | None = None,
    workers: int = 1,
) -> list[MetaAlert]:
    """Validate ``log`` then run every detector; output order is fixed
    by ``(t_end, detector, subject, evidence)`` whatever ``workers`` is.

    Raises:
        LogError: the log does not replay against ``case``.
    """
    params = params or DetectorParams()
    validate_log(case, log)
    idx = LogIndex(case, log)
    idx.higher_spis  # warm shared caches before fanning out
    for claim in case.goal_ids:
        idx.lower_spis(claim)
        idx.updates_touching(claim)
    if workers <= 1:
        results = [run(case, idx, params) for run in _RUNNERS]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda run: run(case, idx, params), _RUNNERS))
    return sort_alerts([a for batch in results for a in batch])
