"""
Error hierarchy shared by every app, and the command-level handler that
turns any error into a CommandError carrying the process exit code.
"""
import logging

from django.core.management.base import CommandError

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class ReMPError(Exception):
    """Base class for every error raised by the ReMP apps."""
    exit_code = EXIT_RUNTIME


class UsageError(ReMPError):
    exit_code = EXIT_USAGE


class ConfigError(UsageError):
    """Unknown key, bad value or unreadable config file."""


class DomainError(ReMPError, ValueError):
    """Input outside an operation's mathematical domain (zero-norm cosine operand)."""


class DimensionError(ReMPError, ValueError):
    pass


class DatasetParseError(ReMPError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SplitViolationError(ReMPError):
    """A class id appears in more than one split."""


class EpisodeShapeError(ReMPError):
    """A split cannot supply the requested N-way K-shot M-query episode."""


class ContractViolationError(ReMPError):
    pass


class NonFiniteError(ReMPError, ArithmeticError):
    def __init__(self, message, tensor=None, episode_seed=None):
        self.tensor = tensor
        self.episode_seed = episode_seed
        details = []
        if tensor is not None:
            details.append(f"tensor={tensor}")
        if episode_seed is not None:
            details.append(f"episode_seed={episode_seed}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class CheckpointError(ReMPError):
    pass


def command_exception_handler(exc):
    """
    Map an exception raised inside a command to a CommandError with the
    exit code the CLI contract asks for: 1 for usage problems, 2 otherwise.
    """
    if isinstance(exc, CommandError):
        return exc

    if isinstance(exc, ReMPError):
        code = exc.exit_code
        message = str(exc)
    elif isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError)):
        code = EXIT_RUNTIME
        message = f"{exc.strerror}: {exc.filename}"
    else:
        # Unexpected errors keep their traceback in the log
        logger.exception("Unhandled error")
        code = EXIT_RUNTIME
        message = f"Internal error: {exc}"

    return CommandError(message, returncode=code)
