"""Differentiable building blocks shared by every network.

Functional ops take torch tensors in time-major layout ``(..., time, channels)``;
weights use the layouts the networks are described in (dense ``d_in x d_out``,
convolutions ``K x out x in``). The layer classes own their weights and draw the
initial values from an explicit ``torch.Generator`` so that construction never
touches the global RNG.
"""

import logging
import math
from typing import Callable, Iterable, List, Optional, Tuple

import torch
import torch.nn.functional as F
from pydantic import BaseModel
from torch import nn

from auxvae.config import TrainConfig
from auxvae.errors import DataValidationError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _check(condition: bool, message: str) -> None:
    if not condition:
        raise ShapeError(message)


def _as_batched(h: torch.Tensor) -> Tuple[torch.Tensor, Tuple[int, ...]]:
    """Collapse leading axes of a (..., time, ch) tensor into one batch axis."""
    _check(h.dim() >= 2, f"expected (..., time, channels), got shape {tuple(h.shape)}")
    lead = tuple(h.shape[:-2])
    return h.reshape(-1, h.shape[-2], h.shape[-1]), lead


def dense(x: torch.Tensor, W: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _check(W.dim() == 2 and x.shape[-1] == W.shape[0], f"dense: input {tuple(x.shape)} vs weight {tuple(W.shape)}")
    _check(b.shape == (W.shape[1],), f"dense: bias {tuple(b.shape)} vs weight {tuple(W.shape)}")
    return x @ W + b


def dilated_causal_conv1d(H: torch.Tensor, W: torch.Tensor, b: torch.Tensor, dilation: int) -> torch.Tensor:
    """out[t, s] = sum_{s', k} W[k, s, s'] * H[t - dilation * k, s'] + b[s], zero before t = 0."""
    _check(dilation >= 1, f"dilation must be >= 1, got {dilation}")
    _check(W.dim() == 3 and W.shape[2] == H.shape[-1], f"conv: input {tuple(H.shape)} vs weight {tuple(W.shape)}")
    _check(b.shape == (W.shape[1],), f"conv: bias {tuple(b.shape)} vs weight {tuple(W.shape)}")
    x, lead = _as_batched(H)
    kernel = W.shape[0]
    # torch correlates forward in time, so tap k of W sits at position K-1-k
    weight = W.flip(0).permute(1, 2, 0)
    x = F.pad(x.transpose(1, 2), ((kernel - 1) * dilation, 0))
    out = F.conv1d(x, weight, b, dilation=dilation).transpose(1, 2)
    return out.reshape(*lead, out.shape[1], out.shape[2])


def transposed_conv1d(H: torch.Tensor, W: torch.Tensor, b: torch.Tensor, stride: int) -> torch.Tensor:
    """Fractional-stride convolution: out[t * stride + k] += W[k] @ H[t]; output length is time * stride."""
    _check(stride >= 1, f"stride must be >= 1, got {stride}")
    _check(W.dim() == 3 and W.shape[2] == H.shape[-1], f"transposed conv: input {tuple(H.shape)} vs weight {tuple(W.shape)}")
    _check(b.shape == (W.shape[1],), f"transposed conv: bias {tuple(b.shape)} vs weight {tuple(W.shape)}")
    x, lead = _as_batched(H)
    length = x.shape[1] * stride
    out = F.conv_transpose1d(x.transpose(1, 2), W.permute(2, 1, 0), stride=stride)
    if out.shape[-1] >= length:
        out = out[..., :length]
    else:
        out = F.pad(out, (0, length - out.shape[-1]))
    out = out.transpose(1, 2) + b
    return out.reshape(*lead, length, out.shape[-1])


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)


def batch_norm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    running_mean: torch.Tensor,
    running_var: torch.Tensor,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> torch.Tensor:
    """Normalize the rows of (..., d); train mode also updates the running statistics in place."""
    d = x.shape[-1]
    _check(gamma.shape == (d,) and beta.shape == (d,), f"batch norm: {d} features vs gamma {tuple(gamma.shape)}")
    rows = x.reshape(-1, d)
    if training and rows.shape[0] < 2:
        raise ShapeError("batch norm in train mode needs at least 2 rows")
    out = F.batch_norm(rows, running_mean, running_var, gamma, beta, training=training, momentum=momentum, eps=eps)
    return out.reshape(x.shape)


def max_pool1d(H: torch.Tensor, window: int) -> torch.Tensor:
    """Non-overlapping max over time; output has ceil(time / window) steps."""
    _check(window >= 1, f"pool window must be >= 1, got {window}")
    if window == 1:
        return H
    x, lead = _as_batched(H)
    if x.shape[1] <= window:
        out = x.max(dim=1, keepdim=True).values
    else:
        out = F.max_pool1d(x.transpose(1, 2), window, stride=window, ceil_mode=True).transpose(1, 2)
    return out.reshape(*lead, out.shape[1], out.shape[2])


def softmax_rows(X: torch.Tensor) -> torch.Tensor:
    return torch.softmax(X, dim=-1)


def gaussian_kl_to_standard(mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """KL[N(mu, diag sigma^2) || N(0, I)] summed over the last axis."""
    _check(mu.shape == sigma.shape, f"kl: mu {tuple(mu.shape)} vs sigma {tuple(sigma.shape)}")
    if bool((sigma <= 0).any()):
        raise DataValidationError("sigma must be strictly positive")
    return 0.5 * (mu.pow(2) + sigma.pow(2) - 1.0 - 2.0 * torch.log(sigma)).sum(dim=-1)


def reparameterize(mu: torch.Tensor, sigma: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """z = mu + sigma * eps with eps drawn from the given stream."""
    _check(mu.shape == sigma.shape, f"reparameterize: mu {tuple(mu.shape)} vs sigma {tuple(sigma.shape)}")
    eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype, device=mu.device)
    return mu + sigma * eps


def mse(X_hat: torch.Tensor, X: torch.Tensor) -> torch.Tensor:
    _check(X_hat.shape == X.shape, f"mse: {tuple(X_hat.shape)} vs {tuple(X.shape)}")
    return F.mse_loss(X_hat, X)


def cross_entropy(probs: torch.Tensor, y_onehot: torch.Tensor) -> torch.Tensor:
    """-sum_l y_l log pi_l, averaged over rows."""
    _check(probs.shape == y_onehot.shape, f"cross entropy: {tuple(probs.shape)} vs {tuple(y_onehot.shape)}")
    if not bool(torch.isfinite(probs).all()):
        raise NonFiniteError("style probabilities are not finite", term="style_ce")
    tol = 1e-9 if probs.dtype == torch.float64 else 1e-5
    if bool((probs < 0).any()) or not torch.allclose(probs.sum(-1), torch.ones((), dtype=probs.dtype), atol=tol):
        raise DataValidationError("cross entropy needs nonnegative, normalized probabilities")
    # softmax can underflow to exactly 0 in float32
    safe = probs.clamp_min(torch.finfo(probs.dtype).tiny)
    return -(y_onehot * torch.log(safe)).sum(-1).mean()


def mae(y_hat: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    _check(y_hat.shape == y.shape, f"mae: {tuple(y_hat.shape)} vs {tuple(y.shape)}")
    return F.l1_loss(y_hat, y)


def receptive_field(kernel_size: int, num_layers: int) -> int:
    """Span of a causal stack with dilations 1, 2, ..., 2^(U-1)."""
    return 1 + (kernel_size - 1) * (2**num_layers - 1)


def glorot_uniform(shape: Tuple[int, ...], fan_in: int, fan_out: int, generator: torch.Generator) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return torch.empty(shape).uniform_(-bound, bound, generator=generator)


class Dense(nn.Module):
    def __init__(self, d_in: int, d_out: int, generator: torch.Generator):
        super().__init__()
        self.weight = nn.Parameter(glorot_uniform((d_in, d_out), d_in, d_out, generator))
        self.bias = nn.Parameter(torch.zeros(d_out))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dense(x, self.weight, self.bias)


class CausalConv1d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, dilation: int, generator: torch.Generator):
        super().__init__()
        self.dilation = dilation
        self.weight = nn.Parameter(
            glorot_uniform((kernel_size, out_ch, in_ch), in_ch * kernel_size, out_ch * kernel_size, generator)
        )
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return dilated_causal_conv1d(h, self.weight, self.bias, self.dilation)


class TransposedConv1d(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, kernel_size: int, stride: int, generator: torch.Generator):
        super().__init__()
        self.stride = stride
        self.weight = nn.Parameter(
            glorot_uniform((kernel_size, out_ch, in_ch), in_ch * kernel_size, out_ch * kernel_size, generator)
        )
        self.bias = nn.Parameter(torch.zeros(out_ch))

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        return transposed_conv1d(h, self.weight, self.bias, self.stride)


class BatchNorm(nn.Module):
    def __init__(self, num_features: int):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(num_features))
        self.bias = nn.Parameter(torch.zeros(num_features))
        self.register_buffer("running_mean", torch.zeros(num_features))
        self.register_buffer("running_var", torch.ones(num_features))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return batch_norm(x, self.weight, self.bias, self.running_mean, self.running_var, self.training)


def make_optimizer(module: nn.Module, cfg: TrainConfig) -> torch.optim.Adam:
    """Adam with coupled L2 weight decay (gradient += weight_decay * param)."""
    return torch.optim.Adam(module.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def adam_step(module: nn.Module, optimizer: torch.optim.Optimizer) -> None:
    """Refuse to step on a non-finite gradient, naming the offending parameter."""
    for path, param in module.named_parameters():
        if param.grad is not None and not bool(torch.isfinite(param.grad).all()):
            raise NonFiniteError(f"non-finite gradient for {path}", path=path)
    optimizer.step()


class GradCheckReport(BaseModel):
    """Finite-difference comparison of backprop gradients."""

    name: str = ""
    max_rel_error: float
    worst_path: str
    coordinates_checked: int
    rel_tol: float
    passed: bool


def grad_check(
    f: Callable[[], torch.Tensor],
    params: Iterable[Tuple[str, torch.Tensor]],
    rel_tol: float = 1e-4,
    num_coords: int = 16,
    h: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-3,
    name: str = "",
) -> GradCheckReport:
    """Central differences on a random coordinate subset of every parameter.

    ``f`` must be deterministic across calls and should run in float64. The
    relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    """
    named: List[Tuple[str, torch.Tensor]] = list(params)
    tensors = [p for _, p in named]
    analytic = torch.autograd.grad(f(), tensors, allow_unused=True)
    generator = torch.Generator().manual_seed(seed)

    worst, worst_path, checked = 0.0, "", 0
    for (path, param), grad in zip(named, analytic):
        grad = torch.zeros_like(param) if grad is None else grad
        flat = param.data.view(-1)
        count = min(num_coords, flat.numel())
        for i in torch.randperm(flat.numel(), generator=generator)[:count].tolist():
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + h
                upper = f().item()
                flat[i] = original - h
                lower = f().item()
                flat[i] = original
            numeric = (upper - lower) / (2 * h)
            exact = grad.reshape(-1)[i].item()
            rel = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            checked += 1
            if rel > worst:
                worst, worst_path = rel, f"{path}[{i}]"

    report = GradCheckReport(
        name=name,
        max_rel_error=worst,
        worst_path=worst_path,
        coordinates_checked=checked,
        rel_tol=rel_tol,
        passed=worst < rel_tol,
    )
    if not report.passed:
        logger.warning(f"Gradient check {name or 'f'} failed: {worst:.3g} at {worst_path}")
    return report


def new_generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


def clamp_log_sigma(log_sigma: torch.Tensor, limit: float) -> torch.Tensor:
    return torch.clamp(log_sigma, -limit, limit)


def module_paths(module: nn.Module, prefix: Optional[str] = None) -> List[str]:
    """Parameter paths, optionally restricted to one namespace."""
    paths = [path for path, _ in module.named_parameters()]
    return [p for p in paths if prefix is None or p.startswith(prefix + ".") or p == prefix]
