"""Multi-hypothesis SE(3) localisation and online topological mapping."""

__version__ = "0.1.0"
