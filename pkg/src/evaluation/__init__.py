"""Dice scoring, region groupings and cross-validation reports."""
