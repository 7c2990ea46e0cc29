"""The beta-weighted negative ELBO and its KL annealing schedule."""

from dataclasses import dataclass
from typing import Dict

import torch
import torch.nn.functional as F

from auxvae.config import ObjectiveConfig
from auxvae.data import TrialTensors
from auxvae.errors import NonFiniteError
from auxvae.model import AuxVAE
from auxvae.substrate import cross_entropy, gaussian_kl_to_standard, mae, mse, reparameterize


@dataclass
class LossBreakdown:
    """Batch-mean loss terms; ``total`` is the differentiable training loss."""

    recon_mse: torch.Tensor
    style_ce: torch.Tensor
    load_mae: torch.Tensor
    kl: torch.Tensor
    beta: float
    total: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {
            "recon_mse": float(self.recon_mse),
            "style_ce": float(self.style_ce),
            "load_mae": float(self.load_mae),
            "kl": float(self.kl),
            "beta": float(self.beta),
            "total": float(self.total),
        }


def beta_schedule(epoch: int, total_epochs: int, warmup_frac: float) -> float:
    """Linear KL warm-up from 0, reaching 1 after warmup_frac of the run."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if not 0 < warmup_frac <= 1:
        raise ValueError(f"warmup_frac must lie in (0, 1], got {warmup_frac}")
    return min(1.0, epoch / (warmup_frac * total_epochs))


def elbo_loss(
    model: AuxVAE,
    batch: TrialTensors,
    beta: float,
    generator: torch.Generator,
    cfg: ObjectiveConfig = ObjectiveConfig(),
) -> LossBreakdown:
    """Negative beta-ELBO with MSE, cross-entropy and MAE in place of the log-likelihoods.

    The regressor sees the true style one-hot during training. Supervised
    terms are averaged over ``cfg.train_latent_samples`` reparameterized draws;
    the KL term is analytic.
    """
    posterior, _ = model.encode(batch.loaded, batch.baseline)
    style_onehot = F.one_hot(batch.style, model.num_styles).to(batch.loaded.dtype)
    zero = batch.loaded.new_zeros(())

    recon, style_ce, load_mae = zero, zero, zero
    samples = cfg.train_latent_samples
    for _ in range(samples):
        z = reparameterize(posterior.mu_z, posterior.sigma_z, generator)
        recon = recon + mse(model.decode(z, batch.baseline), batch.loaded) / samples
        if model.uses_aux_output:
            style_ce = style_ce + cross_entropy(model.classify_style(z), style_onehot) / samples
        load_mae = load_mae + mae(model.regress_load(z, style_onehot), batch.load) / samples
    kl = gaussian_kl_to_standard(posterior.mu_z, posterior.sigma_z).mean()

    for name, term in (("recon_mse", recon), ("style_ce", style_ce), ("load_mae", load_mae), ("kl", kl)):
        if not bool(torch.isfinite(term)):
            raise NonFiniteError(f"loss term {name} is not finite", term=name)

    total = cfg.recon_weight * recon + cfg.style_weight * style_ce + cfg.load_weight * load_mae + beta * kl
    return LossBreakdown(recon_mse=recon, style_ce=style_ce, load_mae=load_mae, kl=kl, beta=beta, total=total)
