"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Vector or matrix dimensions do not match what an operation requires."""


class ShapeError(DimensionError):
    """Compared masks or arrays have different shapes."""


class EmptyError(ValueError):
    """A metric was evaluated on empty inputs where it is undefined."""


class NonFiniteError(ArithmeticError):
    """An iterate left the finite range (NaN or infinity), e.g. a divergent step size."""


class ConfigError(ValueError):
    """An experiment configuration violates an invariant."""


class ProtocolError(ConfigError):
    """The secure-aggregation protocol was invoked outside its validity domain."""


class SchemeMismatchError(ValueError):
    """Ciphertexts from different schemes or keys were combined."""


class AmbiguityError(ValueError):
    """Label extraction found no unique candidate (e.g. multi-sample gradient)."""


class DecryptError(ValueError):
    """Decryption was attempted with key material that does not match the ciphertext."""


class ParseError(ValueError):
    """A data file could not be parsed; carries the 1-based offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(ValueError):
    """A data file parsed but does not conform to the expected schema."""
