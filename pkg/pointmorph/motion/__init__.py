"""Deformation fields, rotation fields and ray bending."""
