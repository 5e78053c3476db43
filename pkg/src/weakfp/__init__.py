"""Drift and diffusion identification for SDEs from unpaired snapshot data."""

__version__ = "0.1.0"
