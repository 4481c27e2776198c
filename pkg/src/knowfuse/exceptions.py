"""Exception types shared across the package."""


class KnowfuseError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(KnowfuseError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class GraphError(KnowfuseError, ValueError):
    """Misuse of the computation graph, e.g. backward from a non-scalar."""


class NonFiniteError(KnowfuseError, FloatingPointError):
    """An operation produced NaN or Inf."""


class FormatError(KnowfuseError, ValueError):
    """A file does not conform to its declared format."""


class IntegrityError(KnowfuseError, ValueError):
    """Cross-references inside a knowledge base do not resolve."""


class VocabularyError(KnowfuseError, ValueError):
    """A token id lies outside the embedding vocabulary."""


class ConfigError(KnowfuseError, ValueError):
    """Missing or inconsistent run configuration."""


class CompatibilityError(KnowfuseError, ValueError):
    """A checkpoint does not match the current configuration."""
