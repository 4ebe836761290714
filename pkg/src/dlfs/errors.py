"""Exception hierarchy shared by every dlfs layer."""

from __future__ import annotations


class DlfsError(Exception):
    """Base class for operational errors (CLI exit code 1)."""


class NotFound(DlfsError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else "not found"


class RangeError(DlfsError, ValueError):
    pass


class BackendUnavailable(DlfsError):
    pass


class MalformedPath(DlfsError, ValueError):
    pass


class NotADirectory(DlfsError):
    pass


class IsADirectory(DlfsError):
    pass


class StaleHandle(DlfsError):
    """The object behind an open handle changed after it was first read."""


class HandleClosed(DlfsError):
    pass


class CodecError(DlfsError, ValueError):
    pass


class CalibrationError(DlfsError, ValueError):
    pass


class ZoneMismatch(DlfsError, ValueError):
    pass


class OutOfTile(DlfsError, ValueError):
    pass


class DuplicateTask(DlfsError):
    pass


class InvalidTransition(DlfsError):
    pass
