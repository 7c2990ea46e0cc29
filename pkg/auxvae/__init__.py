"""AuxVAE: hand-load estimation from loaded gait with auxiliary baseline fusion."""

from auxvae.version import __version__

__all__ = ["__version__"]
