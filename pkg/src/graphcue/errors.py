"""Exception hierarchy shared across the pipeline."""


class GraphCueError(Exception):
    """Base class for every domain error raised by the package."""


class MalformedCase(GraphCueError):
    pass


class DanglingReference(GraphCueError):
    pass


class DuplicateName(GraphCueError):
    pass


class EmptyCase(GraphCueError):
    pass


class InvalidSpec(GraphCueError):
    pass


class UnsupportedTopology(GraphCueError):
    pass


class DegenerateEmbedding(GraphCueError):
    def __init__(self, message, case_id=None):
        super().__init__(message if case_id is None else f"{message} (case {case_id})")
        self.case_id = case_id


class ShapeMismatch(GraphCueError):
    pass


class BatchTooSmall(GraphCueError):
    pass


class CorpusTooSmall(GraphCueError):
    pass


class ModelNotFrozen(GraphCueError):
    pass


class EmptyIndex(GraphCueError):
    pass


class FingerprintMismatch(GraphCueError):
    pass


class MalformedReference(GraphCueError):
    pass


class ReportCaseMismatch(GraphCueError):
    pass


class GeneratorError(GraphCueError):
    """Any failure to obtain a candidate from a backend."""


class RemoteTimeout(GeneratorError):
    pass


class RemoteProtocolError(GeneratorError):
    pass


class EmptyCompletion(GeneratorError):
    pass


class MalformedPrompt(GeneratorError):
    pass


class ConfigSyntaxError(GraphCueError):
    def __init__(self, message, lineno):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DuplicateDevice(GraphCueError):
    pass


class ResourceLimitExceeded(GraphCueError):
    pass


class StorageError(GraphCueError):
    pass


class IterationExists(StorageError):
    pass


class MissingModel(GraphCueError):
    pass


class MissingIndex(GraphCueError):
    pass
