"""Bundled QAPLIB instances (A, B matrices) and best-known values."""
