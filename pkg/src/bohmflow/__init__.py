"""Pilot-wave trajectories in a two-arm atom interferometer with which-way devices."""

__version__ = "0.1.0"
