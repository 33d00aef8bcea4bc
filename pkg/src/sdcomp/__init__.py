"""Sparse-to-dense depth completion with planar scaffolding and
self-supervised refinement, plus depth and trajectory evaluation."""

__version__ = "0.1.0"
