"""Tiny helper for hand-written event logs in tests."""

from spimon.lifecycle import (
    AnalysisCompleted,
    AnalysisStarted,
    ClaimViolationObserved,
    Event,
    ResponseDeployed,
    ResponseKind,
    SpiSetUpdated,
)
from spimon.spi_eval import SpiViolation


class LogBuilder:
    def __init__(self, case):
        self.case = case
        self.events: list[Event] = []

    def _add(self, t, payload) -> int:
        seq = len(self.events) + 1
        self.events.append(Event(seq, t, payload))
        return seq

    def violation(self, t, spi_id, vehicle="v001") -> str:
        spi = self.case.spi_index[spi_id]
        value = spi.threshold + 1 if spi.comparator.value == "at_most" else spi.threshold - 1
        vid = f"{spi_id}#{len(self.events) + 1}"
        self._add(t, SpiViolation(vid, spi_id, t, vehicle, value))
        return vid

    def loss(self, t, claim, is_loss=True) -> int:
        return self._add(t, ClaimViolationObserved(claim, is_loss))

    def start(self, t, violation_id, analysis_id=None) -> str:
        aid = analysis_id or f"A-{violation_id}"
        self._add(t, AnalysisStarted(aid, violation_id))
        return aid

    def done(self, t, analysis_id, cause="cause", insight=False, change=False, risk=0.0) -> int:
        return self._add(t, AnalysisCompleted(analysis_id, cause, risk, insight, change))

    def respond(self, t, analysis_id, targets, kind="system_update", level=None) -> int:
        rid = f"R{len(self.events) + 1}"
        return self._add(t, ResponseDeployed(rid, ResponseKind(kind), tuple(targets), analysis_id, level))

    def update(self, t, added=(), removed=(), modified=()) -> int:
        return self._add(t, SpiSetUpdated(tuple(added), tuple(removed), tuple(modified)))

    def seq_of(self, violation_id) -> int:
        return next(e.seq for e in self.events
                    if isinstance(e.payload, SpiViolation) and e.payload.violation_id == violation_id)
