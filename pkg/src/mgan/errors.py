"""Exception hierarchy. ``exit_code`` is what the CLI returns for each class."""


class MganError(Exception):
    exit_code = 1


class ConfigError(MganError, ValueError):
    exit_code = 2


class InputError(MganError, OSError):
    """Missing, unreadable or unwritable files."""

    exit_code = 3


class ValidationError(MganError, ValueError):
    """Data that parses but violates a domain invariant."""

    exit_code = 3


class ContractError(MganError, ValueError):
    """Shape, channel or mode mismatch at an API boundary."""

    exit_code = 3


class PreconditionError(MganError, ValueError):
    exit_code = 3


class GenerationError(MganError, RuntimeError):
    """Phantom geometry could not be realised."""

    exit_code = 3


class NumericalError(MganError, FloatingPointError):
    """Non-finite loss during training."""

    exit_code = 4
