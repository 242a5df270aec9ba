"""Multimodal temporal point process toolkit (C++ core)."""

from ._mmtpp import *  # noqa: F401,F403
from ._mmtpp import MmtppError, __doc__  # noqa: F401

__version__ = "0.1.0"
