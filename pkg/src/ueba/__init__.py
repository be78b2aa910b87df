"""Behavioural anomaly detection with autoencoder profiles."""

__version__ = "0.1.0"
