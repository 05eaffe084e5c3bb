"""Semi-supervised sound-source localization toolkit."""

__version__ = "0.1.0"
