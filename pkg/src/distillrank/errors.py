"""Exception hierarchy shared by all distillrank modules."""


class DistillRankError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(DistillRankError):
    """A file could not be parsed; carries path and line number."""

    def __init__(self, path, line_no, message):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


class ValidationError(DistillRankError):
    """An invariant on user-supplied or loaded data does not hold."""


class StaleIndexError(DistillRankError):
    """Index fingerprint does not match the model used for retrieval."""


class TeacherError(DistillRankError):
    """A teacher could not produce a score."""


class TransportError(TeacherError):
    """Retryable failure while talking to an LLM client."""


class DegenerateResponseError(TeacherError):
    """LLM response assigns zero mass to both option tokens."""


class TrainingDivergedError(DistillRankError):
    """Non-finite loss encountered; carries a diagnostic batch dump."""

    def __init__(self, message, dump=None):
        super().__init__(message)
        self.dump = dump


class EvaluationError(DistillRankError):
    """A metric or rate is undefined for the given input."""
