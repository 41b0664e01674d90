"""Tests for pointmorph."""
