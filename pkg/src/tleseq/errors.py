"""Exception types shared across the package.

Each maps to a distinct CLI exit code (see cli.EXIT_CODES).
"""


class ConfigError(ValueError):
    """Malformed configuration file, unknown key, or missing input file."""


class BudgetError(RuntimeError):
    """An enumeration would exceed its configured size cap."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


class VerificationError(RuntimeError):
    """A checked inequality was violated beyond tolerance."""


class UnterminatedError(ValueError):
    """An operation required a terminated output sequence."""


class ShapeError(ValueError):
    """Tensor operands have incompatible shapes."""
