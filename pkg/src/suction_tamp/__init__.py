"""Dual-arm task and motion planning with a hand-held suction-cup tool."""

__version__ = "0.1.0"
