"""Simulator of RIS-aided monostatic sensing and multi-target mapping."""

__version__ = "0.1.0"
