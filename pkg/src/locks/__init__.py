"""
Locks package initialization
----------------------------
Exposes the concrete lock implementations.
"""

from .comb_lock import CombLock, comb_lock_run
from .offset_lock import OffsetLock, offset_lock_run, run_offset_locks
from .intensity_lock import IntensityLock, intensity_lock_run

__all__ = [
    "CombLock",
    "comb_lock_run",
    "OffsetLock",
    "offset_lock_run",
    "run_offset_locks",
    "IntensityLock",
    "intensity_lock_run",
]
