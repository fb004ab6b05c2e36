"""Streaming conditional video effect transfer on a toy latent world."""

__version__ = "0.1.0"
