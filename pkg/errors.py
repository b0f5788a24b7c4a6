"""
MoodCam Errors
==============

Every failure the pipeline can raise. Validation errors subclass ValueError so
callers that only care about bad values can catch them generically.
"""


class MoodCamError(Exception):
    """Base class for all pipeline errors"""


# =========================
# Input validation
# =========================
class MissingChannel(MoodCamError, ValueError):
    pass


class OutOfRange(MoodCamError, ValueError):
    pass


class NonMonotonicTime(MoodCamError, ValueError):
    pass


# =========================
# Feature extraction
# =========================
class DegenerateEye(MoodCamError, ValueError):
    pass


class DegenerateVector(MoodCamError, ValueError):
    def __init__(self, message, pair_index=None):
        super().__init__(message)
        self.pair_index = pair_index


class InsufficientData(MoodCamError, ValueError):
    pass


class DimensionMismatch(MoodCamError, ValueError):
    pass


class TooFewFrames(MoodCamError, ValueError):
    pass


class ZeroDt(MoodCamError, ValueError):
    pass


class EmptySession(MoodCamError, ValueError):
    pass


# =========================
# Dataset construction
# =========================
class SchemaMismatch(MoodCamError, ValueError):
    pass


class EmptyDay(MoodCamError, ValueError):
    pass


# =========================
# Learning
# =========================
class EmptyNode(MoodCamError, ValueError):
    pass


class EmptyTraining(MoodCamError, ValueError):
    pass


class SingleClass(MoodCamError, ValueError):
    pass


class TooFewMinority(MoodCamError, ValueError):
    pass


class LengthMismatch(MoodCamError, ValueError):
    pass


class TooFewGroups(MoodCamError, ValueError):
    pass


class SingleClassTraining(MoodCamError, ValueError):
    pass


class TooFewParticipants(MoodCamError, ValueError):
    pass


class EmptySchema(MoodCamError, ValueError):
    pass


# =========================
# Configuration and I/O
# =========================
class InvalidConfig(MoodCamError, ValueError):
    pass


class ConfigError(MoodCamError, ValueError):
    pass


class DataError(MoodCamError):
    """Malformed input file content, located by file and 1-based line"""

    def __init__(self, message, path=None, line=None):
        location = ""
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")
        self.path = str(path) if path is not None else None
        self.line = line


class IoError(MoodCamError):
    """A file could not be read or written"""


class EmptyReport(MoodCamError):
    """Every cell of a requested table failed to produce a metric"""
