"""Dense per-minutia fingerprint descriptors, matching, and evaluation."""

from .core import (
    Affine2D,
    GrayImage,
    Minutia,
    MinutiaSet,
    SegMask,
    angle_diff,
    normalize_angle,
    transform_minutia,
    transform_minutiae,
)

__all__ = [
    "Affine2D",
    "GrayImage",
    "Minutia",
    "MinutiaSet",
    "SegMask",
    "angle_diff",
    "normalize_angle",
    "transform_minutia",
    "transform_minutiae",
]

__version__ = "0.1.0"
