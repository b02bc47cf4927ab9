"""
Base package initialization
---------------------------
Exposes the signal primitives, the PI controller and the abstract lock class.
"""

from .lock_base import LockBase, PiController, pi_step
from .sigcore import AdcSpec, DdsChannel, FilterChain, RcStage

__all__ = [
    "LockBase",
    "PiController",
    "pi_step",
    "AdcSpec",
    "DdsChannel",
    "FilterChain",
    "RcStage",
]
