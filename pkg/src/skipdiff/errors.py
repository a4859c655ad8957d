"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ContractError(ValueError):
    """A call violated an API precondition (bad node, stale tape, ...)."""


class ParameterError(ValueError):
    """A numeric hyperparameter is outside its valid range."""


class TruncationError(ValueError):
    """A sequence does not fit the configured maximum length."""


class JsonlParseError(ValueError):
    """A corpus line could not be parsed; carries the 1-based line number."""

    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class OracleInvalidError(RuntimeError):
    """The finite-difference oracle cannot be trusted (non-deterministic f)."""


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""
