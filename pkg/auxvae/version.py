"""Version information for auxvae."""

__version__ = "0.1.0"
