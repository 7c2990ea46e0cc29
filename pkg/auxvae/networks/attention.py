"""Bidirectional multi-head cross-attention between loaded and baseline features."""

import math
from typing import Tuple

import torch
from torch import nn

from auxvae.errors import ShapeError
from auxvae.networks.base import AttentionTrace, SeedStreams
from auxvae.substrate import Dense, softmax_rows


class BidirectionalCrossAttention(nn.Module):
    """Loaded features attend to the baseline and the baseline attends to the loaded features.

    Each direction has its own query, key, value and output projections; the
    heads are packed along the last axis of the projections (P blocks of d_k
    or d_v columns). With ``residual`` each stream keeps its own features next
    to what it attended to, so a row can compare loaded and baseline content.
    """

    def __init__(self, d_h: int, num_heads: int, d_k: int, d_v: int, streams: SeedStreams, residual: bool = False):
        super().__init__()
        if residual and d_h != num_heads * d_v:
            raise ShapeError(f"a residual connection needs d_h {d_h} == num_heads * d_v {num_heads * d_v}")
        self.d_h, self.num_heads, self.d_k, self.d_v = d_h, num_heads, d_k, d_v
        self.residual = residual
        width_k, width_v = num_heads * d_k, num_heads * d_v
        prefix = "encoder.attention"
        # loaded queries over baseline keys/values
        self.loaded_query = Dense(d_h, width_k, streams(f"{prefix}.loaded_query"))
        self.baseline_key = Dense(d_h, width_k, streams(f"{prefix}.baseline_key"))
        self.baseline_value = Dense(d_h, width_v, streams(f"{prefix}.baseline_value"))
        self.loaded_output = Dense(width_v, width_v, streams(f"{prefix}.loaded_output"))
        # baseline queries over loaded keys/values
        self.baseline_query = Dense(d_h, width_k, streams(f"{prefix}.baseline_query"))
        self.loaded_key = Dense(d_h, width_k, streams(f"{prefix}.loaded_key"))
        self.loaded_value = Dense(d_h, width_v, streams(f"{prefix}.loaded_value"))
        self.baseline_output = Dense(width_v, width_v, streams(f"{prefix}.baseline_output"))

    @property
    def out_dim(self) -> int:
        return self.num_heads * self.d_v

    def _split(self, x: torch.Tensor, width: int) -> torch.Tensor:
        batch, steps, _ = x.shape
        return x.reshape(batch, steps, self.num_heads, width).transpose(1, 2)

    def _attend(
        self, queries: torch.Tensor, keys: torch.Tensor, query: Dense, key: Dense, value: Dense, output: Dense
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        q = self._split(query(queries), self.d_k)
        k = self._split(key(keys), self.d_k)
        v = self._split(value(keys), self.d_v)
        scores = softmax_rows(q @ k.transpose(-1, -2) / math.sqrt(self.d_k))
        heads = (scores @ v).transpose(1, 2)
        merged = heads.reshape(heads.shape[0], heads.shape[1], self.out_dim)
        return output(merged), scores

    def forward(self, H: torch.Tensor, H_aux: torch.Tensor) -> Tuple[torch.Tensor, AttentionTrace]:
        """Return the fused ((T' + T'_0) x P*d_v) sequence and the score matrices."""
        squeeze = H.dim() == 2
        if squeeze:
            H, H_aux = H.unsqueeze(0), H_aux.unsqueeze(0)
        if H.dim() != 3 or H_aux.dim() != 3 or H.shape[-1] != self.d_h or H_aux.shape[-1] != self.d_h:
            raise ShapeError(f"cross attention expects (..., {self.d_h}), got {tuple(H.shape)} and {tuple(H_aux.shape)}")
        if H.shape[0] != H_aux.shape[0]:
            raise ShapeError(f"batch sizes differ: {H.shape[0]} vs {H_aux.shape[0]}")

        attended, scores = self._attend(
            H, H_aux, self.loaded_query, self.baseline_key, self.baseline_value, self.loaded_output
        )
        attended_aux, aux_scores = self._attend(
            H_aux, H, self.baseline_query, self.loaded_key, self.loaded_value, self.baseline_output
        )
        if self.residual:
            attended, attended_aux = attended + H, attended_aux + H_aux
        fused = torch.cat([attended, attended_aux], dim=1)
        trace = AttentionTrace(scores=scores, aux_scores=aux_scores, loaded_features=H, baseline_features=H_aux, fused=fused)
        if squeeze:
            fused = fused.squeeze(0)
        return fused, trace


def cross_attend(
    H: torch.Tensor, H_aux: torch.Tensor, attention: BidirectionalCrossAttention
) -> Tuple[torch.Tensor, AttentionTrace]:
    return attention(H, H_aux)
