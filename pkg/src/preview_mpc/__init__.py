"""Nominal MPC with disturbance preview: sets, terminal ingredients, simulation."""

__version__ = "0.1.0"
