"""Rotations, rigid registration and the nearest-neighbor index."""
