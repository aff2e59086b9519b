"""Exception hierarchy.

Every input-format problem (case document, event log, scenario, params
file) derives from :class:`SpimonError`; the CLI maps all of them to
exit status 2.
"""

from __future__ import annotations


class SpimonError(ValueError):
    """Base class. ``path`` locates the offending element, when known."""

    def __init__(self, message: str, path: str = "") -> None:
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class CaseError(SpimonError):
    pass


class SchemaError(CaseError):
    pass


class DanglingReferenceError(CaseError):
    pass


class DuplicateIdError(CaseError):
    pass


class CycleError(CaseError):
    pass


class UnknownNodeError(CaseError, LookupError):
    pass


class LogError(SpimonError):
    pass


class OutOfOrderError(LogError):
    pass


class UnknownAnalysisError(LogError):
    pass


class DuplicateAnalysisError(LogError):
    pass


class ScenarioError(SpimonError):
    pass


class ParamsError(SpimonError):
    pass
