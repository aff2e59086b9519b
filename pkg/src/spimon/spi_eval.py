"""SPI threshold evaluation, violation triggering and claim flagging.

An SPI is an under-approximation of its claim's negation: a tripped SPI
means the conditioned claim is violated, but a silent SPI proves nothing.
:func:`flag_claims` therefore only ever marks claims, it never clears them.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from spimon.model import SafetyCase, SpiDefinition


@dataclass(frozen=True)
class MetricSample:
    metric_id: str
    vehicle_id: str
    timestamp: int
    value: float
    config_item_version: str = ""

    def __post_init__(self) -> None:
        if not math.isfinite(self.value):
            raise ValueError(f"sample value {self.value!r} is not finite")
        if self.timestamp < 0:
            raise ValueError(f"negative timestamp {self.timestamp}")


@dataclass(frozen=True)
class SpiViolation:
    violation_id: str
    spi_id: str
    timestamp: int
    vehicle_id: str
    observed_value: float


class Status(str, Enum):
    SATISFIED = "satisfied"
    VIOLATED = "violated"


def evaluate_sample(spi: SpiDefinition, sample: MetricSample) -> Status:
    if sample.metric_id != spi.metric_id:
        raise ValueError(
            f"sample of metric {sample.metric_id!r} cannot evaluate SPI {spi.id!r} "
            f"(metric {spi.metric_id!r})"
        )
    return Status.VIOLATED if spi.breached_by(sample.value) else Status.SATISFIED


@dataclass
class _Run:
    breaches: list[int] = field(default_factory=list)
    fired: bool = False


class Debouncer:
    """Incremental k-of-window trigger for one SPI, tracked per vehicle.

    A run of breaching samples fires once, at the k-th breach lying in a
    window of ``window_ms`` (half-open, ``(t - window_ms, t]``). The run
    stays latched until a non-breaching sample resets it. ``k == 1``
    disables debouncing entirely: every breaching sample fires.
    """

    def __init__(self, spi: SpiDefinition, k: int = 1, window_ms: int = 1) -> None:
        if k < 1:
            raise ValueError("debounce count k must be >= 1")
        if window_ms <= 0:
            raise ValueError("debounce window must be positive")
        self.spi = spi
        self.k = k
        self.window_ms = window_ms
        self._runs: dict[str, _Run] = defaultdict(_Run)
        self._issued: dict[str, int] = defaultdict(int)

    def _new_id(self, sample: MetricSample) -> str:
        base = f"{self.spi.id}@{sample.vehicle_id}@{sample.timestamp}"
        self._issued[base] += 1
        n = self._issued[base]
        return base if n == 1 else f"{base}#{n}"

    def feed(self, sample: MetricSample) -> SpiViolation | None:
        if evaluate_sample(self.spi, sample) is Status.SATISFIED:
            self._runs.pop(sample.vehicle_id, None)
            return None
        if self.k > 1:
            run = self._runs[sample.vehicle_id]
            if run.fired:
                return None
            run.breaches.append(sample.timestamp)
            horizon = sample.timestamp - self.window_ms
            run.breaches = [t for t in run.breaches if t > horizon]
            if len(run.breaches) < self.k:
                return None
            run.fired = True
        return SpiViolation(
            violation_id=self._new_id(sample),
            spi_id=self.spi.id,
            timestamp=sample.timestamp,
            vehicle_id=sample.vehicle_id,
            observed_value=sample.value,
        )


def derive_violations(
    spi: SpiDefinition,
    samples: Sequence[MetricSample],
    k: int = 1,
    window_ms: int = 1,
) -> list[SpiViolation]:
    """Run :class:`Debouncer` over ``samples``; other metrics are skipped.

    Raises:
        ValueError: samples not sorted by ``(timestamp, vehicle_id)``.
    """
    debouncer = Debouncer(spi, k, window_ms)
    out: list[SpiViolation] = []
    previous: tuple[int, str] | None = None
    for sample in samples:
        key = (sample.timestamp, sample.vehicle_id)
        if previous is not None and key < previous:
            raise ValueError(f"samples not sorted at timestamp {sample.timestamp}")
        previous = key
        if sample.metric_id != spi.metric_id:
            continue
        violation = debouncer.feed(sample)
        if violation is not None:
            out.append(violation)
    return out


class ClaimStatus(str, Enum):
    VIOLATED_BY_SPI = "violated_by_spi"
    AT_RISK = "at_risk"


@dataclass(frozen=True)
class ClaimFlags:
    """Result of :func:`flag_claims`.

    ``violated`` maps each flagged claim to the SPIs that tripped on it.
    ``at_risk`` holds the goal ancestors of flagged claims that are not
    themselves flagged.
    """

    violated: Mapping[str, tuple[str, ...]]
    at_risk: frozenset[str]

    def status(self, claim_id: str) -> ClaimStatus | None:
        if claim_id in self.violated:
            return ClaimStatus.VIOLATED_BY_SPI
        if claim_id in self.at_risk:
            return ClaimStatus.AT_RISK
        return None

    def as_map(self) -> dict[str, ClaimStatus]:
        out = {c: ClaimStatus.VIOLATED_BY_SPI for c in self.violated}
        out.update({c: ClaimStatus.AT_RISK for c in self.at_risk})
        return dict(sorted(out.items()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "violated_by_spi": {c: list(s) for c, s in sorted(self.violated.items())},
            "at_risk": sorted(self.at_risk),
        }


def flag_claims(case: SafetyCase, violations: Iterable[SpiViolation]) -> ClaimFlags:
    tripped: dict[str, set[str]] = defaultdict(set)
    for violation in violations:
        spi = case.spi(violation.spi_id)
        tripped[spi.claim_id].add(spi.id)
    at_risk: set[str] = set()
    for claim in tripped:
        at_risk.update(case.goal_ancestors(claim))
    at_risk -= tripped.keys()
    return ClaimFlags(
        violated={c: tuple(sorted(s)) for c, s in sorted(tripped.items())},
        at_risk=frozenset(at_risk),
    )
