"""Finite-difference verification of every differentiable op and of the full objective."""

import logging
from typing import Callable, Dict, List, Tuple

import torch
import torch.nn.functional as F

from auxvae.config import FULL_MODEL, EncoderConfig, ObjectiveConfig
from auxvae.data import TrialTensors
from auxvae.model import AuxVAE
from auxvae.networks.attention import cross_attend
from auxvae.objective import elbo_loss
from auxvae.substrate import (
    GradCheckReport,
    batch_norm,
    cross_entropy,
    dense,
    dilated_causal_conv1d,
    gaussian_kl_to_standard,
    gelu,
    grad_check,
    max_pool1d,
    new_generator,
    softmax_rows,
    transposed_conv1d,
)

logger = logging.getLogger(__name__)

MICRO_MODEL = EncoderConfig(
    seq_len=16,
    baseline_len=16,
    tcn_channels=[4, 4],
    attn_dim=4,
    num_heads=2,
    d_k=2,
    d_v=2,
    latent_dim=4,
    head_hidden=4,
)
MICRO_CHANNELS = 3
MICRO_STYLES = 2

Leaves = List[Tuple[str, torch.Tensor]]
Case = Callable[[torch.Generator], Tuple[Callable[[], torch.Tensor], Leaves]]


def _leaf(generator: torch.Generator, *shape: int, positive: bool = False) -> torch.Tensor:
    value = torch.randn(shape, generator=generator, dtype=torch.float64)
    if positive:
        value = value.abs() + 0.5
    return value.requires_grad_(True)


def _dense_case(g: torch.Generator):
    x, W, b = _leaf(g, 2, 5, 3), _leaf(g, 3, 4), _leaf(g, 4)
    readout = torch.randn(2, 5, 4, generator=g, dtype=torch.float64)
    return (lambda: (dense(x, W, b) * readout).sum()), [("x", x), ("W", W), ("b", b)]


def _conv_case(g: torch.Generator):
    H, W, b = _leaf(g, 2, 9, 3), _leaf(g, 3, 4, 3), _leaf(g, 4)
    readout = torch.randn(2, 9, 4, generator=g, dtype=torch.float64)
    return (lambda: (dilated_causal_conv1d(H, W, b, 2) * readout).sum()), [("H", H), ("W", W), ("b", b)]


def _transposed_case(g: torch.Generator):
    H, W, b = _leaf(g, 2, 4, 3), _leaf(g, 3, 2, 3), _leaf(g, 2)
    readout = torch.randn(2, 8, 2, generator=g, dtype=torch.float64)
    return (lambda: (transposed_conv1d(H, W, b, 2) * readout).sum()), [("H", H), ("W", W), ("b", b)]


def _gelu_case(g: torch.Generator):
    x = _leaf(g, 4, 6)
    readout = torch.randn(4, 6, generator=g, dtype=torch.float64)
    return (lambda: (gelu(x) * readout).sum()), [("x", x)]


def _batch_norm_case(g: torch.Generator):
    x, gamma, beta = _leaf(g, 3, 5, 4), _leaf(g, 4), _leaf(g, 4)
    readout = torch.randn(3, 5, 4, generator=g, dtype=torch.float64)
    stats = torch.zeros(4, dtype=torch.float64), torch.ones(4, dtype=torch.float64)

    def f() -> torch.Tensor:
        return (batch_norm(x, gamma, beta, stats[0].clone(), stats[1].clone(), training=True) * readout).sum()

    return f, [("x", x), ("gamma", gamma), ("beta", beta)]


def _max_pool_case(g: torch.Generator):
    H = _leaf(g, 2, 7, 3)
    readout = torch.randn(2, 4, 3, generator=g, dtype=torch.float64)
    return (lambda: (max_pool1d(H, 2) * readout).sum()), [("H", H)]


def _softmax_ce_case(g: torch.Generator):
    logits = _leaf(g, 5, 4)
    target = F.one_hot(torch.randint(0, 4, (5,), generator=g), 4).to(torch.float64)
    return (lambda: cross_entropy(softmax_rows(logits), target)), [("logits", logits)]


def _kl_case(g: torch.Generator):
    mu, sigma = _leaf(g, 3, 4), _leaf(g, 3, 4, positive=True)
    return (lambda: gaussian_kl_to_standard(mu, sigma).sum()), [("mu", mu), ("sigma", sigma)]


def _attention_case(g: torch.Generator):
    model = AuxVAE(MICRO_MODEL, MICRO_CHANNELS, MICRO_STYLES, FULL_MODEL, seed=int(g.initial_seed())).double()
    attention = model.encoder.attention
    H, H_aux = _leaf(g, 2, 4, MICRO_MODEL.attn_dim), _leaf(g, 2, 3, MICRO_MODEL.attn_dim)
    readout = torch.randn(2, 7, attention.out_dim, generator=g, dtype=torch.float64)

    def f() -> torch.Tensor:
        fused, _ = cross_attend(H, H_aux, attention)
        return (fused * readout).sum()

    return f, [("H", H), ("H_aux", H_aux), *[(f"attention.{n}", p) for n, p in attention.named_parameters()]]


def micro_batch(generator: torch.Generator, cfg: EncoderConfig = MICRO_MODEL, trials: int = 4) -> TrialTensors:
    """Two participants with two trials each, float64."""
    participants = tuple(f"P{i // 2 + 1:02d}" for i in range(trials))
    baseline = torch.randn(trials // 2, cfg.baseline_len, MICRO_CHANNELS, generator=generator, dtype=torch.float64)
    return TrialTensors(
        loaded=torch.randn(trials, cfg.seq_len, MICRO_CHANNELS, generator=generator, dtype=torch.float64),
        baseline=baseline.repeat_interleave(2, dim=0),
        load=torch.tensor([10.0, 20.0, 30.0, 50.0][:trials], dtype=torch.float64),
        style=torch.arange(trials) % MICRO_STYLES,
        participant_ids=participants,
        trial_ids=tuple(f"{p}-t{i}" for i, p in enumerate(participants)),
    )


def _elbo_case(g: torch.Generator):
    seed = int(g.initial_seed())
    model = AuxVAE(MICRO_MODEL, MICRO_CHANNELS, MICRO_STYLES, FULL_MODEL, seed=seed).double()
    model.train()
    batch = micro_batch(g)

    def f() -> torch.Tensor:
        return elbo_loss(model, batch, 0.5, new_generator(seed), ObjectiveConfig()).total

    return f, list(model.named_parameters())


CASES: Dict[str, Case] = {
    "dense": _dense_case,
    "dilated_causal_conv1d": _conv_case,
    "transposed_conv1d": _transposed_case,
    "gelu": _gelu_case,
    "batch_norm": _batch_norm_case,
    "max_pool1d": _max_pool_case,
    "cross_entropy_softmax": _softmax_ce_case,
    "gaussian_kl": _kl_case,
    "cross_attention": _attention_case,
    "elbo": _elbo_case,
}


def run_suite(num_seeds: int = 20, rel_tol: float = 1e-4, seed: int = 0) -> List[GradCheckReport]:
    """Check every case on ``num_seeds`` random draws in float64."""
    reports = []
    for name, case in CASES.items():
        for i in range(num_seeds):
            generator = new_generator(seed * 1000 + i)
            f, leaves = case(generator)
            reports.append(grad_check(f, leaves, rel_tol=rel_tol, seed=i, name=f"{name}[{i}]"))
    failed = sum(not r.passed for r in reports)
    logger.info(f"Gradient suite: {len(reports) - failed}/{len(reports)} checks passed")
    return reports
