"""Shared exception types.

DataError covers malformed or inconsistent input files; NumericError covers
failures of the numeric machinery (non-finite likelihoods and the like).
The CLI maps these onto distinct exit codes.
"""


class DataError(Exception):
    """Input data is malformed or violates a format invariant."""


class NumericError(Exception):
    """A numeric computation produced an unusable result."""
