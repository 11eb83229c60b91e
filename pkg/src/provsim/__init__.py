"""Discrete-event simulator of small private-cloud VM provisioning."""

__version__ = "0.1.0"
