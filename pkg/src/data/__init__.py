"""Intensity normalization, slice extraction, slice storage and fold planning."""
