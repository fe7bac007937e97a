"""Finger pose estimation from a capacitive image and a fingerprint patch."""

__version__ = "0.1.0"
