"""Exception hierarchy shared by every gistnet module.

The CLI maps these onto exit codes: validation/config problems exit 1, I/O and
format problems exit 2, numeric failures exit 3.
"""


class GistNetError(Exception):
    exit_code = 1


class ShapeError(GistNetError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class BoundsError(GistNetError, IndexError):
    """A rectangle or index falls outside the tensor it addresses."""


class ArgumentError(GistNetError, ValueError):
    """A scalar argument is outside its documented domain."""


class ConfigError(GistNetError, ValueError):
    """A model or run configuration violates its invariants."""


class ValidationError(GistNetError, ValueError):
    """Dataset content (manifest, bbox, sample) fails validation."""


class ParseError(ValidationError):
    """A manifest or config document could not be parsed."""


class FormatError(GistNetError):
    """A binary file (checkpoint, image) is malformed."""

    exit_code = 2


class NumericError(GistNetError, ArithmeticError):
    """Non-finite values or a failed gradient check."""

    exit_code = 3
