"""Two-stage assignment mechanism laboratory."""
__version__ = "0.1.0"
