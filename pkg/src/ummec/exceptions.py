"""Exception and warning types shared across the package."""


class UmmecError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(UmmecError):
    """An argument violates a documented precondition (shape, range, finiteness)."""


class InvalidEpisodeError(UmmecError):
    """An episode is structurally unusable, e.g. a class has no support samples."""


class InvalidStateError(UmmecError):
    """An internal state invariant is violated, e.g. embeddings left the unit sphere."""


class InvalidRequestError(UmmecError):
    """A request cannot be served by the available data, e.g. too few samples per class."""


class DivergedError(UmmecError):
    """Optimization produced a non-finite loss or gradient.

    Carries the step index at which the divergence was detected.
    """

    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class NumericalUnderflowError(UmmecError):
    """The Gibbs kernel underflowed to an all-zero row or column."""


class DegenerateClassError(UmmecError):
    """A class received zero transport mass, so its barycenter is undefined."""


class FeatureFileError(UmmecError):
    """Base class for feature-file parsing failures."""


class UnknownMagicError(FeatureFileError):
    """A binary feature file does not start with the expected magic bytes."""


class MalformedHeaderError(FeatureFileError):
    """A feature-file header (CSV column row or binary preamble) is invalid."""


class DimensionMismatchError(FeatureFileError):
    """A row's value count disagrees with the declared feature dimension."""


class TruncatedPayloadError(FeatureFileError):
    """A binary feature file ends before the declared payload is complete."""


class DegenerateCaseWarning(UserWarning):
    """A computation hit a defined-but-degenerate case (no pairs, zero center, ...)."""
