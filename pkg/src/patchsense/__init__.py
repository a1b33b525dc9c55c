"""Security-patch detection from repository behavioral event streams."""

__version__ = "0.1.0"
