"""Multi-modal multi-label facial action unit detection."""

__version__ = "0.1.0"
