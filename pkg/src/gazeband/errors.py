"""Exception hierarchy.

Three families map onto the CLI exit codes: configuration problems (2),
data problems (3) and numeric failures (4).  Precondition violations on
arguments also derive from :class:`ValueError`.
"""


class GazebandError(Exception):
    exit_code = 1


class ConfigError(GazebandError):
    exit_code = 2


class DataError(GazebandError):
    exit_code = 3


class NumericError(GazebandError):
    exit_code = 4


# ingest
class MissingColumn(DataError):
    pass


class EmptyRecording(DataError):
    pass


class MalformedRow(DataError):
    def __init__(self, line, msg=""):
        self.line = line
        super().__init__(f"line {line}: {msg}" if msg else f"line {line}")


class InvalidBounds(ConfigError, ValueError):
    pass


# synth
class InvalidDuration(ConfigError, ValueError):
    pass


# dsp
class InvalidTapCount(ConfigError, ValueError):
    pass


class CutoffOutOfRange(ConfigError, ValueError):
    pass


class CalibrationFailed(NumericError):
    pass


class WrongKind(ValueError, GazebandError):
    pass


class FreqOutOfRange(ValueError, GazebandError):
    pass


class AllNaNChannel(DataError):
    pass


class RecordingTooShort(DataError):
    pass


# features
class InvalidWindow(ConfigError, ValueError):
    pass


class InvalidOrder(ConfigError, ValueError):
    pass


class DegenerateChannel(NumericError):
    pass


# embedder / trainer
class ShapeMismatch(ValueError, GazebandError):
    pass


class TooFewSubjects(DataError):
    pass


class HeldOutSubjectInTraining(DataError):
    pass


class SingleClassBatch(NumericError):
    pass


class EmptyTrainingSet(DataError):
    pass


class HashMismatch(DataError):
    pass


# evaluation
class InsufficientDuration(DataError):
    def __init__(self, subject, msg=""):
        self.subject = subject
        super().__init__(f"subject {subject}: {msg}" if msg else f"subject {subject}")


class MissingSession(DataError):
    def __init__(self, subject, msg=""):
        self.subject = subject
        super().__init__(f"subject {subject}: {msg}" if msg else f"subject {subject}")


class DegenerateDistributions(NumericError):
    pass


class EmptyScores(DataError):
    pass


# cli
class InvalidRange(ValueError, GazebandError):
    pass


class StageError(GazebandError):
    """Wraps a failure inside a pipeline stage with its name and artifact path."""

    def __init__(self, stage, path, cause):
        self.stage = stage
        self.path = path
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"stage {stage!r} failed at {path}: {cause}")
