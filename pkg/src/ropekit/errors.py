"""Typed exceptions shared across the toolkit."""


class RopeKitError(Exception):
    """Base class for all ropekit errors."""


class DegenerateWindowError(RopeKitError, ValueError):
    """Window length too small for the requested period arithmetic (log undefined)."""


class LengthMismatchError(RopeKitError, ValueError):
    """Vector length does not match the head dimension implied by the config."""


class NonPositiveFactorError(RopeKitError, ValueError):
    """A rescaling factor is zero or negative."""


class BaseTooSmallError(RopeKitError, ValueError):
    """A rescaled base value is smaller than the original base."""


class InvalidGroupBoundsError(RopeKitError, ValueError):
    """Group bounds must satisfy 0 < alpha < beta."""


class EmptyRangeError(RopeKitError, ValueError):
    """Candidate critical-dimension range is empty."""


class UnevaluatedCandidateError(RopeKitError, ValueError):
    """Operation requires all candidates to carry a fitness value."""


class EvaluatorFailure(RopeKitError, RuntimeError):
    """The fitness evaluator returned an error or died mid-search.

    ``history`` carries the per-iteration best-fitness values recorded
    before the failure, so a partial search is not lost.
    """

    def __init__(self, message: str, history: list[float] | None = None):
        super().__init__(message)
        self.history: list[float] = list(history) if history else []


class MalformedFrameError(RopeKitError, ValueError):
    """A wire frame could not be decoded. ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DisconnectedError(RopeKitError, ConnectionError):
    """The remote evaluator closed its stream with requests pending."""


class SourceTooShortError(RopeKitError, ValueError):
    """Source text tokenizes to fewer tokens than the target length needs."""


class DocTooLongForBucketError(RopeKitError, ValueError):
    """A document classified as short exceeds the pre-trained window."""
