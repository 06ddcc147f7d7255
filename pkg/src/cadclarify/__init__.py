"""Clarify-then-code text-to-CAD harness."""

__version__ = "0.1.0"
