"""Exception types shared across the package."""


class KwspotError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(KwspotError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class LengthError(KwspotError, ValueError):
    """A sequence is too short (or has the wrong length) for an operation."""


class NumericError(KwspotError, ArithmeticError):
    """A numeric invariant was violated (NaN/Inf gradients, zero power, ...)."""


class VocabularyError(KwspotError, KeyError):
    """A word or phoneme is not present in the active vocabulary."""

    def __str__(self):  # KeyError quotes its message; keep it readable
        return self.args[0] if self.args else ""


class LexiconError(KwspotError, ValueError):
    """Lexicon input could not be parsed into any usable entries."""


class ConfigMismatchError(KwspotError, ValueError):
    """A stored artifact does not match the active run configuration."""


class GenerationError(KwspotError, ValueError):
    """Corpus generation could not satisfy the requested constraints."""


class MetricError(KwspotError, ValueError):
    """A metric is undefined for the given inputs."""


class AlignmentError(KwspotError, ValueError):
    """Two traces that must be aligned have incompatible lengths."""
