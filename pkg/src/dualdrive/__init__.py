"""Dual-process driving agent with an experience memory, on a small 2D simulator."""

from dualdrive.actions import MetaAction

__version__ = "0.1.0"
