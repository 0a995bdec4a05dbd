"""Exception hierarchy. Each class carries a module tag and a CLI exit code."""

from __future__ import annotations


class PoleCalibError(Exception):
    module = "polecalib"
    exit_code = 1

    def __init__(self, message: str, hint: str = ""):
        super().__init__(message)
        self.hint = hint

    def __str__(self) -> str:
        msg = f"[{self.module}] {self.args[0]}"
        if self.hint:
            msg += f" (hint: {self.hint})"
        return msg


class GeometryError(PoleCalibError):
    module = "core-geometry"
    exit_code = 10


class DegenerateGeometryError(PoleCalibError):
    module = "scene-sim"
    exit_code = 11


class NoVisibleArcError(DegenerateGeometryError):
    exit_code = 12


class ExtractionError(PoleCalibError):
    module = "pole-extract"
    exit_code = 20


class NoReflectiveReturnsError(ExtractionError):
    exit_code = 21


class TooFewClustersError(ExtractionError):
    exit_code = 22


class ParallelPolesError(ExtractionError):
    exit_code = 23


class RankDeficientError(ExtractionError):
    exit_code = 24


class SolverError(PoleCalibError):
    module = "calib-solver"
    exit_code = 30


class DisambiguationError(PoleCalibError):
    module = "disambiguate"
    exit_code = 40


class NoCorrespondencesError(DisambiguationError):
    exit_code = 41


class MetricError(PoleCalibError):
    module = "metrics"
    exit_code = 50


class FormatError(PoleCalibError):
    """A file that does not parse. ``kind`` names the failure, ``line`` is 1-based."""

    module = "io-cli"
    exit_code = 60

    def __init__(self, message: str, hint: str = "", kind: str = "malformed", line: int = 0, path: str = ""):
        super().__init__(message, hint)
        self.kind = kind
        self.line = line
        self.path = path

    def __str__(self) -> str:
        where = f"{self.path}:{self.line}" if self.path else f"line {self.line}"
        msg = f"[{self.module}] {self.kind} at {where}: {self.args[0]}"
        if self.hint:
            msg += f" (hint: {self.hint})"
        return msg


class ConfigError(PoleCalibError):
    module = "io-cli"
    exit_code = 61
