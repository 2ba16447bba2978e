"""Minimum-latency streaming piano transcription."""

__version__ = "0.1.0"
