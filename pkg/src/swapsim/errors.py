"""Exception types shared across the package."""

from __future__ import annotations


class InvalidArgument(ValueError):
    """An argument violates an operation's precondition."""


class NoSignalError(RuntimeError):
    """The data carry no usable signal (flat correlation, zero counts)."""


class ConfigError(ValueError):
    """A scenario configuration failed validation.

    ``path`` is the dotted field path of the offending entry, e.g.
    ``detectors.S1.efficiency``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)
