"""Encoder variants: loaded gait only, channel concatenation, and cross-attention fusion."""

from typing import Optional, Tuple

import torch

from auxvae.config import EncoderConfig
from auxvae.errors import ShapeError
from auxvae.networks.attention import BidirectionalCrossAttention
from auxvae.networks.base import AbstractEncoder, AttentionTrace, EncoderOutput, SeedStreams
from auxvae.networks.tcn import TCNStack
from auxvae.substrate import Dense


def _check_channels(x: torch.Tensor, num_channels: int, label: str) -> None:
    if x.dim() != 3 or x.shape[-1] != num_channels:
        raise ShapeError(f"{label} must be (batch, time, {num_channels}), got {tuple(x.shape)}")


class PlainEncoder(AbstractEncoder):
    """Encodes the loaded gait alone."""

    NAME = "none"
    USES_AUX = False

    def __init__(self, cfg: EncoderConfig, num_channels: int, streams: SeedStreams):
        super().__init__(cfg, cfg.attn_dim, streams)
        self.num_channels = num_channels
        self.loaded_tcn = TCNStack(
            num_channels, cfg.tcn_channels, cfg.kernel_size, cfg.pool_window, streams("encoder.loaded_tcn")
        )
        self.loaded_proj = Dense(self.loaded_tcn.out_channels, cfg.attn_dim, streams("encoder.loaded_proj"))

    def forward(
        self, x: torch.Tensor, x_aux: Optional[torch.Tensor] = None
    ) -> Tuple[EncoderOutput, Optional[AttentionTrace]]:
        _check_channels(x, self.num_channels, "loaded gait")
        return self._posterior(self.loaded_proj(self.loaded_tcn(x))), None


class ConcatEncoder(AbstractEncoder):
    """Stacks loaded and baseline gait along channels into one stream."""

    NAME = "concat"

    def __init__(self, cfg: EncoderConfig, num_channels: int, streams: SeedStreams):
        super().__init__(cfg, cfg.attn_dim, streams)
        if cfg.seq_len != cfg.baseline_len:
            raise ShapeError(f"concatenation needs equal lengths, got T={cfg.seq_len}, T_0={cfg.baseline_len}")
        self.num_channels = num_channels
        self.stacked_tcn = TCNStack(
            2 * num_channels, cfg.tcn_channels, cfg.kernel_size, cfg.pool_window, streams("encoder.stacked_tcn")
        )
        self.stacked_proj = Dense(self.stacked_tcn.out_channels, cfg.attn_dim, streams("encoder.stacked_proj"))

    def forward(
        self, x: torch.Tensor, x_aux: Optional[torch.Tensor] = None
    ) -> Tuple[EncoderOutput, Optional[AttentionTrace]]:
        _check_channels(x, self.num_channels, "loaded gait")
        if x_aux is None:
            raise ShapeError("concat encoder needs the baseline gait")
        _check_channels(x_aux, self.num_channels, "baseline gait")
        if x.shape[1] != x_aux.shape[1]:
            raise ShapeError(f"concatenation needs equal lengths, got {x.shape[1]} and {x_aux.shape[1]}")
        stacked = torch.cat([x, x_aux], dim=-1)
        return self._posterior(self.stacked_proj(self.stacked_tcn(stacked))), None


class CrossAttentionEncoder(AbstractEncoder):
    """Dual TCN streams fused by bidirectional multi-head cross-attention."""

    NAME = "cross_attention"

    def __init__(self, cfg: EncoderConfig, num_channels: int, streams: SeedStreams):
        super().__init__(cfg, cfg.num_heads * cfg.d_v, streams)
        self.num_channels = num_channels
        self.loaded_tcn = TCNStack(
            num_channels, cfg.tcn_channels, cfg.kernel_size, cfg.pool_window, streams("encoder.loaded_tcn")
        )
        self.baseline_tcn = TCNStack(
            num_channels, cfg.tcn_channels, cfg.kernel_size, cfg.pool_window, streams("encoder.baseline_tcn")
        )
        self.loaded_proj = Dense(self.loaded_tcn.out_channels, cfg.attn_dim, streams("encoder.loaded_proj"))
        self.baseline_proj = Dense(self.baseline_tcn.out_channels, cfg.attn_dim, streams("encoder.baseline_proj"))
        self.attention = BidirectionalCrossAttention(
            cfg.attn_dim, cfg.num_heads, cfg.d_k, cfg.d_v, streams, residual=cfg.attn_residual
        )

    def forward(
        self, x: torch.Tensor, x_aux: Optional[torch.Tensor] = None
    ) -> Tuple[EncoderOutput, Optional[AttentionTrace]]:
        _check_channels(x, self.num_channels, "loaded gait")
        if x_aux is None:
            raise ShapeError("cross-attention encoder needs the baseline gait")
        if x_aux.dim() != 3 or x_aux.shape[-1] != x.shape[-1]:
            raise ShapeError(f"channel mismatch between streams: {tuple(x.shape)} vs {tuple(x_aux.shape)}")
        H = self.loaded_proj(self.loaded_tcn(x))
        H_aux = self.baseline_proj(self.baseline_tcn(x_aux))
        fused, trace = self.attention(H, H_aux)
        return self._posterior(fused), trace
