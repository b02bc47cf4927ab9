"""
src package initialization
--------------------------
Defines top-level imports for the trapped-ion control-hardware simulator.
Configures a global logger for consistent output across modules.
"""

from .utils.logging_utils import setup_logging, get_logger
import logging

# Initialize logging
setup_logging(
    level=logging.INFO,
    log_file="logs/iontrap_ctrl.log"
)

# Import base classes
from .base.lock_base import LockBase, PiController
from .base.sigcore import AdcSpec, DdsChannel

# Import concrete locks and hardware models
from .locks.comb_lock import CombLock
from .locks.offset_lock import OffsetLock
from .locks.intensity_lock import IntensityLock
from .hardware.pid_pipeline import PidPipeline
from .hardware.dac_system import run_sequence

__all__ = [
    "LockBase",
    "PiController",
    "AdcSpec",
    "DdsChannel",
    "CombLock",
    "OffsetLock",
    "IntensityLock",
    "PidPipeline",
    "run_sequence",
    "setup_logging",
    "get_logger",
]
