"""
Hardware package initialization
-------------------------------
Exposes the PID pipeline and DAC sequencer models.
"""

from .pid_pipeline import PidPipeline, pipeline_run
from .dac_system import load_program, run_sequence

__all__ = ["PidPipeline", "pipeline_run", "load_program", "run_sequence"]
