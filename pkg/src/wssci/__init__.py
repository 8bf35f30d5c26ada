"""Symptom-search surveillance: WSSCI per 500 m half grid from search and location logs."""

__version__ = "0.1.0"
