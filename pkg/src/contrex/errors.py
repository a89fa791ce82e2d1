"""Exception types shared across the package.

Exit-code mapping used by the CLI: config errors exit 2, numeric errors
exit 3, property-check failures exit 1.
"""


class ContrexError(Exception):
    pass


class InvalidArgumentError(ContrexError, ValueError):
    """A precondition on an operation's arguments was violated."""


class DegenerateInputError(ContrexError, ValueError):
    """Input is structurally valid but numerically degenerate (e.g. zero norm)."""


class NumericError(ContrexError, ArithmeticError):
    """A computation produced non-finite values or failed to factorize."""


class ParseError(ContrexError, ValueError):
    """An external file could not be parsed; message carries location context."""


class ConfigError(ContrexError, ValueError):
    """A run configuration is malformed or outside its documented domain."""
