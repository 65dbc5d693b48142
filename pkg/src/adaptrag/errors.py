"""Exception hierarchy.

Each family maps onto one CLI exit code: configuration problems exit 1,
bad input data exits 2, LLM / remote backend failures exit 3.
"""

from __future__ import annotations


class AdaptragError(Exception):
    exit_code = 1


class ConfigError(AdaptragError):
    exit_code = 1


class MissingBinding(ConfigError):
    def __init__(self, placeholder: str) -> None:
        super().__init__(f"no binding for placeholder {{{placeholder}}}")
        self.placeholder = placeholder


class DataError(AdaptragError):
    exit_code = 2


class EmptyInput(DataError):
    pass


class EmptyLabels(DataError):
    pass


class EmptyCorpus(DataError):
    pass


class EmptyQuery(DataError):
    pass


class DegenerateCorpus(DataError):
    pass


class SchemaMismatch(DataError):
    pass


class IoFailure(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class TooFewUnits(DataError):
    pass


class SegmentationFailure(DataError):
    pass


class EmptyTerminology(DataError):
    pass


class BackendError(AdaptragError):
    exit_code = 3


class LlmTimeout(BackendError):
    pass


class HttpStatusError(BackendError):
    def __init__(self, code: int, detail: str = "") -> None:
        msg = f"HTTP {code}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.code = code


class NoMatchingRule(BackendError):
    pass


class MalformedProviderPayload(BackendError):
    pass


class StageFailure(AdaptragError):
    """A pipeline stage failed; wraps the component error with the stage name."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
