"""Holography to bright-field cross-modality pipeline on synthetic data."""

__version__ = "0.1.0"
