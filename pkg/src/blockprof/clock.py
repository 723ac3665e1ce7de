"""Monotonic nanosecond clock.

All timestamps in trace entries and all benchmark timing use this single
source (CLOCK_MONOTONIC on Linux), so entry timestamps and measured
iteration times are directly comparable.
"""

import time
from time import monotonic_ns as now_ns

__all__ = ["now_ns", "resolution_ns"]


def resolution_ns() -> float:
    """Reported resolution of the monotonic clock, in nanoseconds."""
    return time.get_clock_info("monotonic").resolution * 1e9
