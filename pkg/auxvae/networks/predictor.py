"""Predictor heads: carrying-style classifier and style-conditional load regressor."""

from typing import Optional

import torch
from torch import nn

from auxvae.errors import ShapeError
from auxvae.networks.base import SeedStreams
from auxvae.substrate import Dense, gelu, softmax_rows


class StyleClassifier(nn.Module):
    """pi = softmax(Dense(GELU(Dense(z))))."""

    def __init__(self, latent_dim: int, hidden: int, num_styles: int, streams: SeedStreams):
        super().__init__()
        self.hidden = Dense(latent_dim, hidden, streams("classifier.hidden"))
        self.logits = Dense(hidden, num_styles, streams("classifier.logits"))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return softmax_rows(self.logits(gelu(self.hidden(z))))


class LoadRegressor(nn.Module):
    """mu_y from [z || style]; with style_dim 0 it reads z alone.

    The network predicts a standardized load; ``target_mean`` and
    ``target_scale`` map it back to lbs. Training sets them from the
    training fold's loads and checkpoints carry them as buffers.
    """

    def __init__(self, latent_dim: int, style_dim: int, hidden: int, streams: SeedStreams):
        super().__init__()
        self.style_dim = style_dim
        self.hidden = Dense(latent_dim + style_dim, hidden, streams("regressor.hidden"))
        self.output = Dense(hidden, 1, streams("regressor.output"))
        self.register_buffer("target_mean", torch.zeros(()))
        self.register_buffer("target_scale", torch.ones(()))

    def set_target_scale(self, mean: float, scale: float) -> None:
        if not scale > 0:
            raise ValueError(f"target scale must be positive, got {scale}")
        self.target_mean.fill_(mean)
        self.target_scale.fill_(scale)

    def forward(self, z: torch.Tensor, style: Optional[torch.Tensor] = None) -> torch.Tensor:
        if self.style_dim:
            if style is None or style.shape[-1] != self.style_dim:
                got = None if style is None else tuple(style.shape)
                raise ShapeError(f"regressor expects a style vector of length {self.style_dim}, got {got}")
            z = torch.cat([z, style.to(z.dtype)], dim=-1)
        raw = self.output(gelu(self.hidden(z))).squeeze(-1)
        return self.target_mean + self.target_scale * raw
