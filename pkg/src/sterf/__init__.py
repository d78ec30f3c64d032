"""Spatio-temporal effective receptive fields for spiking networks."""

__version__ = "0.1.0"
