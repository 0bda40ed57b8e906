"""Multi-material topological-derivative topology optimization of a PM machine rotor."""

__version__ = "1.0.0"
