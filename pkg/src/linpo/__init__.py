"""Optimistic policy optimization for finite linear MDPs."""

__version__ = "0.1.0"
