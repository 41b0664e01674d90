"""Cameras, volume rendering and image files."""
