"""
Error hierarchy.

ConfigError maps to CLI exit code 1, DataError (and subclasses) to exit code 2.
Per-record problems (a malformed BibTeX entry, one failed URL) are never raised;
they are logged and counted in the diagnostics records instead.
"""
from typing import Optional


class CtiprofError(Exception):
    """Base class for all ctiprof errors"""


class ConfigError(CtiprofError):
    """Invalid flags, missing input paths or out-of-range thresholds"""


class DataError(CtiprofError):
    """Input data is broken or inconsistent"""


class BundleParseError(DataError):
    """STIX bundle is not valid JSON (or not a bundle)"""

    def __init__(self, message: str, offset: Optional[int] = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class MalpediaParseError(DataError):
    """Malpedia actor/family dump is not valid JSON"""


class MergeMapError(DataError):
    """An association or report references a group missing from the merge map"""


class InsufficientDataError(DataError):
    """Not enough non-empty profiles to compute a statistic"""


class UndefinedInputError(ValueError):
    """Metric is undefined for the given input (e.g. two empty sets)"""
