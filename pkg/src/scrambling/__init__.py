"""Exact simulation of information scrambling in quenched spin-1/2 chains."""

__version__ = "0.1.0"
