"""Exception types shared across the package."""


class BlockconvError(Exception):
    """Base class for every error this package raises on purpose."""


class StructureError(BlockconvError, ValueError):
    """A shape or structure constraint is violated (lengths, factorizations, caches)."""


class ParameterError(BlockconvError, ValueError):
    """A parameter value lies outside its documented domain."""


class NumericError(BlockconvError, ArithmeticError):
    """Non-finite values appeared where finite ones are required."""


class FormatError(BlockconvError, ValueError):
    """A binary or text input does not match its documented format."""


class ConfigError(BlockconvError, ValueError):
    """A configuration document failed validation.

    Carries the full list of human-readable diagnostics so callers can
    report every problem at once instead of the first one found.
    """

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))
