"""Sound event detection on soft labels with two feature-sharing branches."""

__version__ = "0.1.0"
