"""Gain-scheduled PI tuning for cross-voltage-level power flow control."""

from ._core import *  # noqa: F401,F403
from ._core import __doc__  # noqa: F401

__version__ = "1.0.0"
