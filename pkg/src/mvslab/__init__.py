"""Desk-scale multi-view stereo workbench: plane-sweep inference, a
contrastive-consistency loss stack over depth fields with analytic gradients,
depth fusion, and evaluation on synthetic ray-traced scenes."""

__version__ = "0.1.0"
