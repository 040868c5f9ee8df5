"""Error hierarchy. Every pipeline failure is a PoseLoadError."""


class PoseLoadError(ValueError):
    def __init__(self, message: str = "", frame: int | None = None):
        self.frame = frame
        super().__init__(message)


# --- ingest ---

class MalformedRecord(PoseLoadError):
    pass


class DuplicateFrame(PoseLoadError):
    pass


class NonMonotonicIndex(PoseLoadError):
    pass


# --- preprocess / align ---

class SegmentTooShort(PoseLoadError):
    pass


class NoValidSamples(PoseLoadError):
    pass


class DegenerateConfiguration(PoseLoadError):
    pass


# --- features / dynamics ---

class SeriesTooShort(PoseLoadError):
    pass


class EmptyTrajectory(PoseLoadError):
    pass


# --- taskperf ---

class MalformedRow(PoseLoadError):
    pass


class UnknownSubtask(PoseLoadError):
    pass


# --- ml ---

class AllFeaturesDropped(PoseLoadError):
    pass


class SingleClassTraining(PoseLoadError):
    pass


class ClassMissingInSplit(PoseLoadError):
    pass


class SingleParticipant(PoseLoadError):
    pass


class InsufficientWindows(PoseLoadError):
    pass


class EmptyInput(PoseLoadError):
    pass


# --- synth ---

class InvalidParams(PoseLoadError):
    pass


class TooLarge(PoseLoadError):
    pass


class StageError(PoseLoadError):
    """A stage failed; carries where it failed."""

    def __init__(self, stage: str, message: str, path: str | None = None, frame: int | None = None):
        self.stage = stage
        self.path = path
        where = f" in {path}" if path else ""
        at = f" at frame {frame}" if frame is not None else ""
        super().__init__(f"[{stage}]{where}{at}: {message}", frame=frame)
