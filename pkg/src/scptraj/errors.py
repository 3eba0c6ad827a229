"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when problem or solver configuration violates a documented precondition."""


class DivergenceError(RuntimeError):
    """Raised when an integration or iteration escapes its admissible region."""
