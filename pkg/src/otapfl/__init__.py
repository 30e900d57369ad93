"""Simulator for personalized over-the-air federated learning with per-user RIS."""
__version__ = "0.1.0"
