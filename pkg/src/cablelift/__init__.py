"""Simulation and event-triggered predictive control stack for cooperative
transport of a cable-suspended rigid payload by a team of quadrotors."""

__version__ = "0.1.0"
