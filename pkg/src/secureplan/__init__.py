"""Secure multi-robot trajectory planning with co-observations and reachability constraints."""

__version__ = "0.1.0"
