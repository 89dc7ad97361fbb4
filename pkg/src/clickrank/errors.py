"""Exception types shared across the package."""


class ClickrankError(Exception):
    """Base class for errors raised by this package."""


class ClickLogParseError(ClickrankError):
    """A click-log line could not be parsed.

    Carries the 1-based line number of the offending line.
    """

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DuplicateDocumentError(ClickrankError):
    """Two documents with the same id were submitted for indexing."""


class UnknownDocumentError(ClickrankError, KeyError):
    """A doc_id was requested that the index does not contain."""


class DegenerateTrainingError(ClickrankError):
    """Training data contains no usable signal (e.g. no preference pairs)."""


class ModelFormatError(ClickrankError):
    """A persisted artifact has the wrong kind tag, version, or shape."""


class NotFittedError(ClickrankError):
    """An estimator method requiring a fitted model was called before fit."""
