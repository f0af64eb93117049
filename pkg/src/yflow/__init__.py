"""Branched flows trained with a sublinear velocity-power action."""

__version__ = "0.1.0"
