"""Base encoder class and the types every encoder returns."""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import torch
from torch import nn

from auxvae.config import EncoderConfig
from auxvae.substrate import Dense, clamp_log_sigma, max_pool1d

# Maps a component name to its own seeded generator.
SeedStreams = Callable[[str], torch.Generator]


@dataclass
class EncoderOutput:
    """Parameters of q(z | X, X_aux), one row per sample."""

    mu_z: torch.Tensor  # (B, k)
    sigma_z: torch.Tensor  # (B, k)


@dataclass
class AttentionTrace:
    """Per-head score matrices plus the stream features around the fusion layer."""

    scores: torch.Tensor  # (B, P, T', T'_0), loaded queries over baseline keys
    aux_scores: torch.Tensor  # (B, P, T'_0, T')
    loaded_features: Optional[torch.Tensor] = None  # H
    baseline_features: Optional[torch.Tensor] = None  # H_aux
    fused: Optional[torch.Tensor] = None  # concatenated attended streams


class AbstractEncoder(nn.Module, ABC):
    """Maps (X, X_aux) to the posterior parameters of z.

    Subclasses build their feature extractor and call ``_posterior`` on a
    ``(B, time, feature_dim)`` tensor.
    """

    NAME: str = ""
    USES_AUX: bool = True

    def __init__(self, cfg: EncoderConfig, feature_dim: int, streams: SeedStreams):
        super().__init__()
        self.cfg = cfg
        self.mu_head = Dense(feature_dim, cfg.latent_dim, streams("encoder.mu_head"))
        self.log_sigma_head = Dense(feature_dim, cfg.latent_dim, streams("encoder.log_sigma_head"))

    @abstractmethod
    def forward(
        self, x: torch.Tensor, x_aux: Optional[torch.Tensor] = None
    ) -> Tuple[EncoderOutput, Optional[AttentionTrace]]:
        """Encode a batch of (B, T, S) loaded windows and (B, T_0, S) baselines."""

    def _posterior(self, features: torch.Tensor) -> EncoderOutput:
        pooled = max_pool1d(features, features.shape[-2]).squeeze(-2)
        log_sigma = clamp_log_sigma(self.log_sigma_head(pooled), self.cfg.log_sigma_clamp)
        return EncoderOutput(mu_z=self.mu_head(pooled), sigma_z=torch.exp(log_sigma))
