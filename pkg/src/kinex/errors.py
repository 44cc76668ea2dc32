"""Shared exception types."""


class NumericError(RuntimeError):
    """A numerical procedure failed (non-convergence, runaway clipping, ...).

    Distinct from ValueError so callers can map invalid configuration and
    numeric breakdown to different exit codes.
    """
