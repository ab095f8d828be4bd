"""
Exception hierarchy for windtraj.

Library functions raise these (or plain ``ValueError`` for argument checks);
the command-line front end maps them to process exit codes.
"""

from typing import Any, Dict, Optional


class WindTrajError(Exception):
    """Base class for all windtraj errors."""

    exit_code = 1


class ConfigError(WindTrajError, ValueError):
    """Invalid configuration file, flag or option value."""

    exit_code = 1


class DataError(WindTrajError, ValueError):
    """Missing, malformed or insufficient input data."""

    exit_code = 2


class NumericalError(WindTrajError, ArithmeticError):
    """A numerical routine failed (non positive-definite matrix, NaN, ...)."""

    exit_code = 3

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
