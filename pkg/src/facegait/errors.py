"""Exception hierarchy shared by every stage of the pipeline."""


class FaceGaitError(Exception):
    """Base class for all pipeline errors."""


# dataset ingest
class MissingFile(FaceGaitError):
    pass


class SchemaViolation(FaceGaitError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class DanglingFramePath(FaceGaitError):
    pass


class GroupSizeMismatch(FaceGaitError):
    pass


class EmptyImage(FaceGaitError):
    pass


# gait cycle
class SignalTooShort(FaceGaitError):
    pass


class NoCycleFound(FaceGaitError):
    pass


# face roi
class NoPersonFound(FaceGaitError):
    pass


class FaceNotVisible(FaceGaitError):
    pass


class NoFaceInClip(FaceGaitError):
    pass


# networks / fusion
class InvalidConfig(FaceGaitError):
    pass


class ShapeMismatch(FaceGaitError):
    pass


class DimensionMismatch(ShapeMismatch):
    pass


class BothZero(FaceGaitError):
    pass


# training
class DataPreparationFailure(FaceGaitError):
    """Raised when one or more sequences could not be turned into clips.

    ``failures`` maps a sequence key to the underlying exception.
    """

    def __init__(self, failures):
        self.failures = dict(failures)
        lines = [f"{key}: {type(err).__name__}: {err}" for key, err in self.failures.items()]
        super().__init__(f"{len(self.failures)} sequence(s) failed:\n" + "\n".join(lines))


class DivergenceDetected(FaceGaitError):
    pass


class EmptySpace(FaceGaitError):
    pass


# evaluation
class EmptyRecordSet(FaceGaitError):
    pass


class IdOutOfRange(FaceGaitError):
    pass


class UnwritableOutput(FaceGaitError):
    pass
