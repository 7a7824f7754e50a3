"""Tri-stage cascaded detection of component-level audio manipulation.

A binary mix-consistency head screens original recordings, two dual-branch
fusion heads score the five component classes, and a hard calibration step
combines them. Heads run on precomputed SSL layer stacks (``.lstk`` files).
"""

from .errors import EnvTriCascadeError
from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["EnvTriCascadeError", "KERNEL_BACKEND", "__version__"]
