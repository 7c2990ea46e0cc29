"""Dilated temporal convolution stacks."""

from typing import List

import torch
from torch import nn

from auxvae.substrate import BatchNorm, CausalConv1d, gelu, max_pool1d


class TCNBlock(nn.Module):
    """Causal conv -> GELU -> batch norm -> max-pool."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, dilation: int, pool_window: int, generator: torch.Generator):
        super().__init__()
        self.pool_window = pool_window
        self.conv = CausalConv1d(in_ch, out_ch, kernel_size, dilation, generator)
        self.norm = BatchNorm(out_ch)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return max_pool1d(self.norm(gelu(self.conv(h))), self.pool_window)


class TCNStack(nn.Module):
    """Blocks with dilation 2^(u-1); time shrinks by pool_window per block."""

    def __init__(
        self,
        in_ch: int,
        channels: List[int],
        kernel_size: int,
        pool_window: int,
        generator: torch.Generator,
    ):
        super().__init__()
        widths = [in_ch, *channels]
        self.blocks = nn.ModuleList(
            TCNBlock(widths[u], widths[u + 1], kernel_size, 2**u, pool_window, generator) for u in range(len(channels))
        )
        self.out_channels = widths[-1]

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        for block in self.blocks:
            h = block(h)
        return h
