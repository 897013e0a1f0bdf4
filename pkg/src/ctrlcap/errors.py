"""Exception hierarchy shared across the toolkit."""


class CtrlCapError(Exception):
    """Base class for all toolkit errors."""


# --- text / tokenization ---

class TokenizerFailure(CtrlCapError):
    pass


# --- embeddings / relevance ---

class EmptyCaption(CtrlCapError):
    pass


class DegenerateEmbedding(CtrlCapError):
    """A zero-norm embedding row; indicates a broken provider."""


# --- controllers ---

class SeparatorCollision(CtrlCapError):
    """A highlight text contains the prefix separator literal."""


class BudgetExceeded(CtrlCapError):
    pass


class ShapeMismatch(CtrlCapError):
    pass


class ModelFailure(CtrlCapError):
    pass


# --- modeling ---

class DimensionMismatch(CtrlCapError):
    pass


class DataFormatError(CtrlCapError):
    pass


class DivergenceDetected(CtrlCapError):
    """Training loss became NaN or infinite."""


# --- datasets ---

class MalformedRecord(CtrlCapError):
    pass


class SchemaViolation(CtrlCapError):
    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        self.line = line
        self.field = field
        super().__init__(message)


# --- metrics ---

class EmptyHighlights(CtrlCapError):
    pass


class GroupSizeError(CtrlCapError):
    pass


class DegenerateInput(CtrlCapError):
    pass


class NoHighlightedSentence(CtrlCapError):
    pass


# --- evaluator ---

class JudgeUnavailable(CtrlCapError):
    pass


class UnparseableResponse(CtrlCapError):
    def __init__(self, message: str, raw: str = ""):
        self.raw = raw
        super().__init__(message)


class MissingSection(CtrlCapError):
    pass


class OutOfRangeScore(CtrlCapError):
    pass


class NonPositiveRatio(CtrlCapError):
    pass
