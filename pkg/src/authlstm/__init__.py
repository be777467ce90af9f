"""Insider-threat detection in authentication logs with per-user LSTM next-event models."""

__version__ = "0.1.0"
