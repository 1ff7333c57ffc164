"""Exception hierarchy shared by every subcommand.

The CLI maps :class:`InputError` to exit code 1 and :class:`NumericalError`
to exit code 2.
"""

from __future__ import annotations


class MolPretrainError(Exception):
    """Base class for all errors raised by molpretrain."""


class InputError(MolPretrainError):
    """Bad user input: files, config keys, unparseable rows."""


class ConfigError(InputError):
    pass


class SmilesError(InputError):
    """SMILES that does not follow the supported grammar.

    Parameters
    ----------
    message : str
        What went wrong
    offset : int | None
        Byte offset into the SMILES string where the problem was detected
    """

    def __init__(self, message: str, offset: int | None = None) -> None:
        super().__init__(message if offset is None else f"{message} at offset {offset}")
        self.reason = message
        self.offset = offset


class HypervalenceError(SmilesError):
    pass


class TokenizeError(InputError):
    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


class DataFormatError(InputError):
    """Malformed row or header in a data file."""

    def __init__(self, message: str, line: int | None = None) -> None:
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
        self.line = line


class CheckpointError(InputError):
    """Checkpoint directory is incomplete, corrupt or inconsistent."""


class NumericalError(MolPretrainError):
    pass


class NonFiniteError(NumericalError):
    pass


class ShapeError(MolPretrainError, ValueError):
    pass


class AutogradError(MolPretrainError, RuntimeError):
    pass


class SkipBatch(MolPretrainError):
    """Raised when a batch has nothing to learn from (e.g. no masked tokens)."""
