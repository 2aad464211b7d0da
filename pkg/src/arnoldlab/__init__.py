"""Numerical laboratory for Arnold diffusion in the rotor-pendulum system."""

__all__ = ["__version__"]

__version__ = "0.1.0"
