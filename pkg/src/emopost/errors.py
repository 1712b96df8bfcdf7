"""Exception types shared across the package.

Each error carries a machine-parsable category and the process exit code
the CLI maps it to.
"""


class EmopostError(Exception):
    """Base class for all package errors."""

    category = "internal-error"
    exit_code = 1


class MissingInputError(EmopostError):
    """A required input file or directory does not exist."""

    category = "missing-input"
    exit_code = 3


class ParseError(EmopostError):
    """Malformed input: bad row, bad token, or truncated block."""

    category = "parse-error"
    exit_code = 4


class ValidationError(EmopostError):
    """Well-formed input that violates a domain invariant."""

    category = "validation-error"
    exit_code = 5


class SchemaError(EmopostError):
    """Header, dimension, or version mismatch with the expected layout."""

    category = "schema-error"
    exit_code = 6


class ContractError(EmopostError):
    """Operation invoked outside its precondition."""

    category = "contract-error"
    exit_code = 7


class DivergenceError(EmopostError):
    """Training produced a non-finite loss."""

    category = "divergence-error"
    exit_code = 8
