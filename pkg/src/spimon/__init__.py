"""Safety Performance Indicator tooling: static coverage checks, lifecycle
replay and meta-SPI detectors over an SPI-annotated safety case."""

from pathlib import Path

from spimon.errors import (
    CaseError,
    LogError,
    ParamsError,
    ScenarioError,
    SpimonError,
)
from spimon.model import Level, SafetyCase, SpiDefinition, parse_safety_case

__version__ = "0.1.0"

DATA_DIR = Path(__file__).parent / "data"


def data_path(name: str) -> Path:
    """Path of a bundled fixture, e.g. ``data_path("scenarios/s1_uncovered_loss.json")``."""
    return DATA_DIR / name

__all__ = [
    "DATA_DIR",
    "CaseError",
    "Level",
    "LogError",
    "ParamsError",
    "SafetyCase",
    "ScenarioError",
    "SpiDefinition",
    "SpimonError",
    "data_path",
    "parse_safety_case",
]
