"""Planar SLAM workbench: classical, first-estimate and reduced EKFs."""

__version__ = "0.1.0"
