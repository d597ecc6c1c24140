"""Exception hierarchy shared by every stage of the line-calling pipeline.

Library code raises these; only the CLI turns them into exit codes.
"""


class ElcError(Exception):
    """Base class for all line-calling errors."""


# --- bad input (CLI exit 2) ---

class InputError(ElcError):
    pass


class MissingDirectory(InputError):
    pass


class MissingFrames(InputError):
    pass


class MixedDimensions(InputError):
    pass


class UndecodableFrame(InputError):
    def __init__(self, filename):
        super().__init__(f"Could not decode frame: {filename}")
        self.filename = filename


class DimensionMismatch(InputError):
    pass


class DegenerateLine(InputError):
    pass


class MissingGroundTruth(InputError):
    pass


class EmptyInput(InputError):
    pass


class ConfigError(InputError):
    pass


class NeverLands(InputError):
    pass


class FrameExtractionError(InputError):
    pass


# --- fitting / geometry ---

class AnalysisError(ElcError):
    pass


class TooShort(AnalysisError):
    pass


class PhaseStarved(AnalysisError):
    pass


class Degenerate(AnalysisError):
    pass


class NoIntersection(AnalysisError):
    pass


class IdenticalCurves(AnalysisError):
    pass


class NoFeasibleAssignment(AnalysisError):
    pass


# --- stage-labelled pipeline failures (CLI exit 1) ---

class StageFailure(ElcError):
    stage = "pipeline"

    def __init__(self, reason):
        super().__init__(f"{self.stage} failed: {reason}")
        self.reason = reason


class DetectorFailed(StageFailure):
    stage = "detect"


class AnalysisFailed(StageFailure):
    stage = "analyze"
