"""Broken-ray travel-time tomography around a reflecting square obstacle."""

from brokenray.geometry import DomainSpec, InvalidInputError, Obstacle, Point2, Segment

__all__ = ["DomainSpec", "InvalidInputError", "Obstacle", "Point2", "Segment"]
__version__ = "0.1.0"
