"""Static SPI coverage checks over a safety case.

=====  ========  ==========================================================
check  severity  fires for
=====  ========  ==========================================================
C1     error     item-level goal without a lagging SPI on it
C2     warning   item-level goal without a leading SPI strictly below it
C3     warning   leg whose annotated-goal ratio is under ``min_leg_ratio``,
                 or ``aspect:``-tagged subtree without any SPI
C4     error     case has SPIs but none of them is leading
C5     error     SPI without a configuration item
=====  ========  ==========================================================
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any

from spimon.errors import UnknownNodeError
from spimon.model import ASPECT_PREFIX, ITEM_LEVEL, SafetyCase, SpiKind

DEFAULT_MIN_LEG_RATIO = 0.2


class CheckId(str, Enum):
    C1_LAGGING_ITEM_LEVEL = "C1_lagging_item_level"
    C2_LEADING_PREDICTIVE = "C2_leading_predictive"
    C3_LEG_RATIO = "C3_leg_ratio"
    C4_NOT_LAGGING_ONLY = "C4_not_lagging_only"
    C5_CONFIG_ITEM = "C5_config_item"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"


@dataclass(frozen=True, order=True)
class CoverageFinding:
    check_id: CheckId
    subject: str
    severity: Severity
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "check_id": self.check_id.value,
            "severity": self.severity.value,
            "subject": self.subject,
            "message": self.message,
        }


def _annotated(case: SafetyCase, goal_id: str) -> bool:
    return bool(case.node(goal_id).spi_ids)


def coverage_ratio(case: SafetyCase, leg: str) -> float:
    """Fraction of goals in the leg (leg root included) carrying at least one SPI."""
    if leg not in case.legs:
        raise UnknownNodeError(f"{leg!r} is not a top-level argument leg", leg)
    goals = [leg] + [n for n in case.descendants(leg) if case.node(n).is_goal]
    if not goals:
        return 0.0
    return sum(1 for g in goals if _annotated(case, g)) / len(goals)


def run_coverage_checks(
    case: SafetyCase, min_leg_ratio: float = DEFAULT_MIN_LEG_RATIO
) -> list[CoverageFinding]:
    if not 0.0 <= min_leg_ratio <= 1.0:
        raise ValueError(f"min_leg_ratio must lie in [0, 1], got {min_leg_ratio}")
    findings: list[CoverageFinding] = []

    leading_claims = {s.claim_id for s in case.spi_index.values() if s.kind is SpiKind.LEADING}

    for goal_id in case.goal_ids:
        node = case.node(goal_id)
        if ITEM_LEVEL in node.tags:
            if not any(s.kind is SpiKind.LAGGING for s in case.spis_on(goal_id)):
                findings.append(CoverageFinding(
                    CheckId.C1_LAGGING_ITEM_LEVEL, goal_id, Severity.ERROR,
                    f"item-level goal {goal_id} has no lagging SPI",
                ))
            below = set(case.descendants(goal_id))
            if not below & leading_claims:
                findings.append(CoverageFinding(
                    CheckId.C2_LEADING_PREDICTIVE, goal_id, Severity.WARNING,
                    f"no leading SPI below item-level goal {goal_id} to predict its violations",
                ))
        aspects = sorted(t for t in node.tags if t.startswith(ASPECT_PREFIX))
        if aspects:
            subtree = [goal_id, *case.descendants(goal_id)]
            if not any(case.node(n).spi_ids for n in subtree):
                findings.append(CoverageFinding(
                    CheckId.C3_LEG_RATIO, goal_id, Severity.WARNING,
                    f"aspect {', '.join(aspects)} under {goal_id} is not covered by any SPI",
                ))

    for leg in case.legs:
        ratio = coverage_ratio(case, leg)
        if ratio < min_leg_ratio:
            findings.append(CoverageFinding(
                CheckId.C3_LEG_RATIO, leg, Severity.WARNING,
                f"leg {leg} coverage {ratio:.3f} below minimum {min_leg_ratio:.3f}",
            ))

    if case.spi_index and not leading_claims:
        findings.append(CoverageFinding(
            CheckId.C4_NOT_LAGGING_ONLY, case.top_goal.id, Severity.ERROR,
            "all SPIs are lagging; at least one leading SPI is required",
        ))

    for spi in case.spi_index.values():
        if not spi.config_item.strip():
            findings.append(CoverageFinding(
                CheckId.C5_CONFIG_ITEM, spi.id, Severity.ERROR,
                f"SPI {spi.id} is not linked to a configuration item",
            ))

    return sorted(findings)


def has_errors(findings: list[CoverageFinding]) -> bool:
    return any(f.severity is Severity.ERROR for f in findings)
