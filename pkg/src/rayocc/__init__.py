"""Ray-based occupancy prediction for single-view 3D reconstruction."""

__version__ = "0.1.0"
