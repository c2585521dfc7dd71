"""Donation and multi-stream party recommendation (SENSOR + D2R + CARS)."""

__version__ = "0.1.0"
