"""Direction-aware adapter training and group-wise merging at desk scale."""

__version__ = "0.1.0"
