"""Limiting spectral distribution and CLT for linear spectral statistics of S^{-1}T."""

from __future__ import annotations

__version__ = "0.1.0"
