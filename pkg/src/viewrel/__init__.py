"""Viewpoint-aware spatial-relation benchmark toolkit for 3D scenes."""

__version__ = "0.1.0"
