"""Plotting, formatting, seeding and rounding helpers."""
