"""Face and gait fusion for person identification from walking video."""

__version__ = "0.1.0"
