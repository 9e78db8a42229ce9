"""Post-processed VMS stabilization for POD reduced-order Navier-Stokes models."""

__version__ = "0.1.0"
