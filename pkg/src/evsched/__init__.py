"""Deterministic grid-traffic microsimulation with cooperative EV scheduling."""

__version__ = "0.1.0"
