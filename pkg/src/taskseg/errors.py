"""Exception types shared across the pipeline."""


class ContractViolation(ValueError):
    """An argument broke a documented precondition (shape, range, presence)."""


class DegenerateFeatureError(ContractViolation):
    """A feature vector had (near-)zero norm where a direction was required."""


class KeywordParseError(ValueError):
    """A free-form answer contained no usable keyword after cleanup."""


class BackendError(RuntimeError):
    """A model backend failed to produce an answer.

    ``retryable`` distinguishes transient failures (timeouts, rate limits)
    from permanent ones (missing fixture entries, bad configuration).
    """

    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class FixtureError(BackendError):
    """A mock backend had no entry for the requested image or template."""

    def __init__(self, message: str):
        super().__init__(message, retryable=False)


class DatasetError(RuntimeError):
    """Dataset discovery or pairing failed."""
