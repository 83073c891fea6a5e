"""Numerical gluing of collapsing hyperkaehler structures on the Kummer-type K3."""

__version__ = "0.1.0"
