"""Exception hierarchy shared by all nudgelab modules."""


class NudgeLabError(Exception):
    """Base class for every error raised by nudgelab."""


class ConfigurationError(NudgeLabError, ValueError):
    """Invalid configuration value or distribution parameter."""


class UsageError(NudgeLabError, ValueError):
    """An operation was called with inputs violating its preconditions."""


class ParseError(NudgeLabError, ValueError):
    """A file could not be parsed.

    ``location`` is a line number for CSV input or a path into the document
    for structured reports.
    """

    def __init__(self, message, location=None):
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)
        self.location = location


class TrainingError(NudgeLabError, RuntimeError):
    pass


class UnsupportedOperationError(NudgeLabError, TypeError):
    pass


class PreregistrationError(NudgeLabError):
    """Config hash does not match the frozen manifest."""


class StageError(NudgeLabError):
    """Wraps a failure inside the experiment pipeline with its stage and round."""

    def __init__(self, stage, round_, cause):
        super().__init__(f"stage '{stage}' failed at round {round_}: {cause}")
        self.stage = stage
        self.round = round_
        self.cause = cause
