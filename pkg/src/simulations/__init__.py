"""Synthetic brain phantom generation."""
