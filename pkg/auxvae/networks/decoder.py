"""Conditional decoder: latent code plus baseline context back to a gait window."""

from typing import Optional

import torch
from torch import nn

from auxvae.config import EncoderConfig
from auxvae.errors import ShapeError
from auxvae.networks.base import SeedStreams
from auxvae.networks.tcn import TCNStack
from auxvae.substrate import BatchNorm, Dense, TransposedConv1d, gelu, max_pool1d


class UpsampleBlock(nn.Module):
    """Transposed conv -> GELU -> batch norm."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, stride: int, generator: torch.Generator):
        super().__init__()
        self.conv = TransposedConv1d(in_ch, out_ch, kernel_size, stride, generator)
        self.norm = BatchNorm(out_ch)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return self.norm(gelu(self.conv(h)))


class Decoder(nn.Module):
    """Mean of p(X | X_aux, z); the scale is fixed at 1.

    A dense layer maps [z || context] to a (T / pool^U) x C seed map that the
    upsampling blocks stretch back to T steps. Without conditioning the
    context is empty.
    """

    def __init__(self, cfg: EncoderConfig, num_channels: int, conditioned: bool, streams: SeedStreams):
        super().__init__()
        self.cfg = cfg
        self.num_channels = num_channels
        self.conditioned = conditioned
        self.seed_len = cfg.seq_len // cfg.downsample
        self.seed_channels = cfg.tcn_channels[-1]

        context_dim = 0
        if conditioned:
            self.context_tcn = TCNStack(
                num_channels, cfg.tcn_channels, cfg.kernel_size, cfg.pool_window, streams("decoder.context_tcn")
            )
            context_dim = self.context_tcn.out_channels
        self.seed = Dense(cfg.latent_dim + context_dim, self.seed_len * self.seed_channels, streams("decoder.seed"))

        widths = [self.seed_channels, *reversed(cfg.tcn_channels)]
        generator = streams("decoder.blocks")
        self.blocks = nn.ModuleList(
            UpsampleBlock(widths[u], widths[u + 1], cfg.kernel_size, cfg.pool_window, generator)
            for u in range(len(cfg.tcn_channels))
        )
        self.output = Dense(widths[-1], num_channels, streams("decoder.output"))

    def context(self, x_aux: torch.Tensor) -> torch.Tensor:
        summary = self.context_tcn(x_aux)
        return max_pool1d(summary, summary.shape[-2]).squeeze(-2)

    def forward(self, z: torch.Tensor, x_aux: Optional[torch.Tensor] = None) -> torch.Tensor:
        if z.dim() != 2 or z.shape[-1] != self.cfg.latent_dim:
            raise ShapeError(f"z must be (batch, {self.cfg.latent_dim}), got {tuple(z.shape)}")
        if self.conditioned:
            if x_aux is None or x_aux.dim() != 3 or x_aux.shape[-1] != self.num_channels:
                raise ShapeError("conditioned decoder needs a (batch, T_0, S) baseline")
            z = torch.cat([z, self.context(x_aux)], dim=-1)
        h = self.seed(z).reshape(z.shape[0], self.seed_len, self.seed_channels)
        for block in self.blocks:
            h = block(h)
        return self.output(h)
