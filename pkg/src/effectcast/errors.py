"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, DataError -> 2,
UpstreamError -> 3.
"""

from __future__ import annotations


class EffectcastError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(EffectcastError):
    """Invalid configuration or invalid call arguments."""


class DataError(EffectcastError):
    """Input data violates the ingest or corpus contracts."""


class UpstreamError(EffectcastError):
    """A remote service (LLM endpoint, regressor endpoint) failed."""

    def __init__(self, message: str, *, status: int | None = None, retries: int = 0):
        super().__init__(message)
        self.status = status
        self.retries = retries


class EndpointContractError(UpstreamError):
    """The remote endpoint answered, but the payload breaks its wire contract."""


class ResponseFormatError(EffectcastError):
    """A model response could not be parsed into the expected structure.

    ``retryable`` distinguishes format violations (malformed payload, wrong
    entry count, unknown codes: worth re-asking the model) from content
    violations (well-formed but semantically unacceptable output, which a
    re-roll should not be allowed to paper over).
    """

    def __init__(self, message: str, *, retryable: bool = True, raw: str | None = None):
        super().__init__(message)
        self.retryable = retryable
        self.raw = raw


class PredictionError(EffectcastError):
    """A predictor failed to produce a usable effect triple for one input."""

    def __init__(self, message: str, *, query_id: str | None = None, raw: str | None = None):
        super().__init__(message)
        self.query_id = query_id
        self.raw = raw
