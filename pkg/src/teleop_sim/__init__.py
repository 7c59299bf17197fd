"""Discrete-event simulation of teleoperated truck fleets sharing a pool of remote operators."""

__version__ = "0.1.0"
