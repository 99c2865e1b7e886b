"""Skin-tone stability auditing for face gender classifiers."""

__version__ = "0.1.0"
