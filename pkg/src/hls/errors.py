"""Exception hierarchy shared by all modules."""


class HLSError(ValueError):
    """Base class for library errors."""


class ConfigurationError(HLSError):
    """Unsupported manifold, resolution or parameter combination."""


class DomainError(HLSError):
    """A point, radius or scale lies outside the admissible region."""


class ExponentError(HLSError):
    """Lebesgue exponents outside their admissible range."""


class UsageError(HLSError):
    """Inconsistent arguments, e.g. mismatched dimensions or grids."""


class DegenerateInputError(HLSError):
    """Input that makes the requested quantity undefined (e.g. a zero field)."""
