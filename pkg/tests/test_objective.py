import pytest
import torch

from auxvae.ablation import SETTINGS
from auxvae.config import ObjectiveConfig
from auxvae.errors import NonFiniteError
from auxvae.model import AuxVAE
from auxvae.objective import beta_schedule, elbo_loss
from auxvae.substrate import grad_check, new_generator


def test_beta_warm_up():
    assert beta_schedule(0, 500, 0.5) == 0.0
    assert beta_schedule(125, 500, 0.5) == 0.5
    assert beta_schedule(250, 500, 0.5) == 1.0
    assert beta_schedule(499, 500, 0.5) == 1.0


@pytest.mark.parametrize("epoch, total, frac", [(-1, 10, 0.5), (10, 10, 0.5), (0, 10, 0.0), (0, 10, 1.5)])
def test_beta_rejects_bad_arguments(epoch, total, frac):
    with pytest.raises(ValueError):
        beta_schedule(epoch, total, frac)


def test_terms_are_finite_and_total_adds_up(micro_cfg, tensors):
    model = AuxVAE(micro_cfg, 3, 2).double()
    losses = elbo_loss(model, tensors, 0.3, new_generator(0))
    values = losses.as_floats()
    assert all(v >= 0 for v in values.values())
    expected = values["recon_mse"] + values["style_ce"] + values["load_mae"] + 0.3 * values["kl"]
    assert abs(values["total"] - expected) < 1e-9


def test_no_cross_entropy_without_aux_output(micro_cfg, tensors):
    model = AuxVAE(micro_cfg, 3, 2, SETTINGS["setting_1"]).double()
    assert elbo_loss(model, tensors, 1.0, new_generator(0)).style_ce.item() == 0.0


def test_same_stream_same_loss(micro_cfg, tensors):
    model = AuxVAE(micro_cfg, 3, 2).double().eval()
    first = elbo_loss(model, tensors, 1.0, new_generator(5)).total
    second = elbo_loss(model, tensors, 1.0, new_generator(5)).total
    assert torch.equal(first, second)


def test_more_latent_samples_average_the_supervised_terms(micro_cfg, tensors):
    model = AuxVAE(micro_cfg, 3, 2).double().eval()
    losses = elbo_loss(model, tensors, 1.0, new_generator(0), ObjectiveConfig(train_latent_samples=4))
    assert torch.isfinite(losses.total)


def test_non_finite_term_is_named(micro_cfg, tensors):
    model = AuxVAE(micro_cfg, 3, 2).double()
    with torch.no_grad():
        model.regressor.output.bias.fill_(float("nan"))
    with pytest.raises(NonFiniteError) as info:
        elbo_loss(model, tensors, 1.0, new_generator(0))
    assert info.value.term == "load_mae"


def test_elbo_gradient_on_two_participants(micro_cfg, tensors):
    model = AuxVAE(micro_cfg, 3, 2, seed=2).double()
    batch = tensors.subset(torch.tensor([0, 1, 4, 5]))
    assert len(set(batch.participant_ids)) == 2

    def f() -> torch.Tensor:
        return elbo_loss(model, batch, 0.5, new_generator(1)).total

    report = grad_check(f, model.named_parameters(), rel_tol=1e-4)
    assert report.passed, report


def test_elbo_matches_a_straight_line_computation(micro_cfg, tensors):
    model = AuxVAE(micro_cfg, 3, 2).double().eval()
    batch = tensors.subset(torch.tensor([0, 5]))
    beta = 0.4
    losses = elbo_loss(model, batch, beta, new_generator(9))

    with torch.no_grad():
        posterior, _ = model.encode(batch.loaded, batch.baseline)
        mu, sigma = posterior.mu_z, posterior.sigma_z
        z = mu + sigma * torch.randn(mu.shape, generator=new_generator(9), dtype=mu.dtype)
        recon = ((model.decode(z, batch.baseline) - batch.loaded) ** 2).mean()
        ce = -torch.log(model.classify_style(z)[torch.arange(2), batch.style]).mean()
        onehot = torch.eye(2, dtype=torch.float64)[batch.style]
        load = (model.regress_load(z, onehot) - batch.load).abs().mean()
        kl = (0.5 * (mu**2 + sigma**2 - 1.0 - 2.0 * torch.log(sigma)).sum(-1)).mean()

    for got, want in ((losses.recon_mse, recon), (losses.style_ce, ce), (losses.load_mae, load), (losses.kl, kl)):
        assert abs(got.item() - want.item()) < 1e-6
    assert abs(losses.total.item() - (recon + ce + load + beta * kl).item()) < 1e-6
