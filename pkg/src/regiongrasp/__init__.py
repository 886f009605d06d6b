"""Desk-scale contact-region-conditioned hand grasp generation."""

__version__ = "0.1.0"
