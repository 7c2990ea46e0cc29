import pytest
import torch

from auxvae.ablation import SETTINGS
from auxvae.config import FULL_MODEL, EncoderConfig
from auxvae.errors import ShapeError
from auxvae.model import AuxVAE
from auxvae.networks.attention import BidirectionalCrossAttention, cross_attend
from auxvae.networks.registry import fusion_names
from auxvae.substrate import grad_check, mse, new_generator


def _streams(name: str) -> torch.Generator:
    return new_generator(len(name))


def _attention(d_h: int = 8, heads: int = 2, d: int = 4) -> BidirectionalCrossAttention:
    return BidirectionalCrossAttention(d_h, heads, d, d, _streams).double()


def test_full_scale_shapes():
    model = AuxVAE(EncoderConfig(), num_channels=72, num_styles=4).eval()
    x, x_aux = torch.randn(2, 800, 72), torch.randn(2, 800, 72)
    with torch.no_grad():
        posterior, trace = model.encode(x, x_aux)
        recon = model.decode(posterior.mu_z, x_aux)
    assert posterior.mu_z.shape == posterior.sigma_z.shape == (2, 128)
    assert trace.scores.shape == (2, 4, 200, 200)
    assert trace.fused.shape == (2, 400, 64)
    assert recon.shape == (2, 800, 72)


def test_attention_rows_sum_to_one_in_both_modes(micro_cfg):
    model = AuxVAE(micro_cfg, 3, 2).double()
    g = torch.Generator().manual_seed(0)
    for mode in (True, False):
        model.train(mode)
        for _ in range(100):
            x = torch.randn(3, 16, 3, generator=g, dtype=torch.float64)
            x_aux = torch.randn(3, 16, 3, generator=g, dtype=torch.float64)
            _, trace = model.encode(x, x_aux)
            for scores in (trace.scores, trace.aux_scores):
                torch.testing.assert_close(scores.sum(-1), torch.ones_like(scores.sum(-1)), atol=1e-6, rtol=0)


def test_single_key_attention_returns_the_projected_key():
    attention = _attention()
    H, H_aux = torch.randn(1, 5, 8, dtype=torch.float64), torch.randn(1, 1, 8, dtype=torch.float64)
    fused, trace = cross_attend(H, H_aux, attention)
    assert torch.equal(trace.scores, torch.ones_like(trace.scores))
    expected = attention.loaded_output(attention.baseline_value(H_aux)).expand(1, 5, -1)
    torch.testing.assert_close(fused[:, :5], expected)


def test_zero_query_key_gives_mean_pooling():
    attention = _attention()
    with torch.no_grad():
        for layer in (attention.loaded_query, attention.baseline_key):
            layer.weight.zero_()
            layer.bias.zero_()
    H, H_aux = torch.randn(2, 4, 8, dtype=torch.float64), torch.randn(2, 6, 8, dtype=torch.float64)
    fused, trace = cross_attend(H, H_aux, attention)
    torch.testing.assert_close(trace.scores, torch.full_like(trace.scores, 1 / 6), atol=1e-12, rtol=0)
    pooled = attention.baseline_value(H_aux).mean(dim=1, keepdim=True)
    torch.testing.assert_close(fused[:, :4], attention.loaded_output(pooled).expand(2, 4, -1), atol=1e-6, rtol=0)


def test_attention_is_equivariant_to_key_order():
    attention = _attention()
    H, H_aux = torch.randn(1, 4, 8, dtype=torch.float64), torch.randn(1, 5, 8, dtype=torch.float64)
    perm = torch.tensor([3, 0, 4, 1, 2])
    fused, trace = cross_attend(H, H_aux, attention)
    fused_p, trace_p = cross_attend(H, H_aux[:, perm], attention)
    torch.testing.assert_close(trace_p.scores, trace.scores[..., perm])
    torch.testing.assert_close(fused_p[:, :4], fused[:, :4])


def test_attention_shape_mismatch():
    with pytest.raises(ShapeError):
        cross_attend(torch.randn(1, 4, 8), torch.randn(1, 4, 6), _attention().float())


def test_zero_value_and_output_projections_leave_only_the_bias(micro_cfg):
    model = AuxVAE(micro_cfg, 3, 2).double().eval()
    attention = model.encoder.attention
    with torch.no_grad():
        for layer in (attention.baseline_value, attention.loaded_value, attention.loaded_output, attention.baseline_output):
            layer.weight.zero_()
            layer.bias.zero_()
        model.encoder.mu_head.bias.copy_(torch.arange(4.0))
    posterior, _ = model.encode(torch.randn(2, 16, 3, dtype=torch.float64), torch.randn(2, 16, 3, dtype=torch.float64))
    torch.testing.assert_close(posterior.mu_z, torch.arange(4.0, dtype=torch.float64).expand(2, 4))


def test_residual_keeps_each_stream_next_to_its_attended_values():
    attention = BidirectionalCrossAttention(8, 2, 4, 4, _streams, residual=True).double()
    with torch.no_grad():
        for layer in (attention.loaded_output, attention.baseline_output):
            layer.weight.zero_()
            layer.bias.zero_()
    H, H_aux = torch.randn(1, 5, 8, dtype=torch.float64), torch.randn(1, 3, 8, dtype=torch.float64)
    fused, _ = attention(H, H_aux)
    torch.testing.assert_close(fused, torch.cat([H, H_aux], dim=1))


def test_residual_needs_matching_widths():
    with pytest.raises(ShapeError):
        BidirectionalCrossAttention(8, 2, 4, 3, _streams, residual=True)


def test_channel_mismatch_between_streams(micro_cfg):
    model = AuxVAE(micro_cfg, 3, 2)
    with pytest.raises(ShapeError):
        model.encode(torch.randn(2, 16, 3), torch.randn(2, 16, 4))


def test_sigma_is_positive_and_bounded(micro_cfg):
    model = AuxVAE(micro_cfg, 3, 2)
    posterior, _ = model.encode(torch.randn(4, 16, 3) * 100, torch.randn(4, 16, 3))
    assert (posterior.sigma_z > 0).all()
    assert (posterior.sigma_z <= torch.exp(torch.tensor(7.0))).all()


def test_decoder_responds_to_z_and_baseline(micro_cfg):
    model = AuxVAE(micro_cfg, 3, 2).double().eval()
    x_aux = torch.randn(1, 16, 3, dtype=torch.float64)
    z1, z2 = torch.randn(1, 4, dtype=torch.float64), torch.randn(1, 4, dtype=torch.float64)
    out = model.decode(z1, x_aux)
    assert out.shape == (1, 16, 3)
    assert not torch.equal(out, model.decode(z2, x_aux))
    assert not torch.equal(model.decoder.context(x_aux), model.decoder.context(2 * x_aux))
    assert not torch.equal(out, model.decode(z1, 2 * x_aux))


@pytest.mark.parametrize("seq_len, pool, layers", [(16, 2, 1), (16, 2, 2), (24, 2, 3), (27, 3, 2), (12, 1, 2)])
def test_shape_contract_sweep(seq_len, pool, layers):
    cfg = EncoderConfig(
        seq_len=seq_len,
        baseline_len=seq_len + 5,
        tcn_channels=[4] * layers,
        pool_window=pool,
        attn_dim=4,
        num_heads=2,
        d_k=2,
        d_v=2,
        latent_dim=3,
        head_hidden=4,
    )
    model = AuxVAE(cfg, 2, 2).eval()
    x, x_aux = torch.randn(2, seq_len, 2), torch.randn(2, seq_len + 5, 2)
    with torch.no_grad():
        posterior, trace = model.encode(x, x_aux)
        recon = model.decode(posterior.mu_z, x_aux)
    reduced = seq_len // pool**layers
    reduced_aux = seq_len + 5
    for _ in range(layers):
        reduced_aux = -(-reduced_aux // pool) if reduced_aux > pool else 1
    assert trace.scores.shape == (2, 2, reduced, reduced_aux)
    assert trace.fused.shape == (2, reduced + reduced_aux, 4)
    assert recon.shape == (2, seq_len, 2)


def test_eval_mode_is_deterministic(micro_cfg):
    model = AuxVAE(micro_cfg, 3, 2, seed=4).eval()
    x, x_aux = torch.randn(2, 16, 3), torch.randn(2, 16, 3)
    first, _ = model.encode(x, x_aux)
    second, _ = model.encode(x, x_aux)
    assert torch.equal(first.mu_z, second.mu_z)
    assert torch.equal(AuxVAE(micro_cfg, 3, 2, seed=4).encoder.mu_head.weight, model.encoder.mu_head.weight)


def test_shared_namespaces_start_identical(micro_cfg):
    full = AuxVAE(micro_cfg, 3, 2, FULL_MODEL, seed=9)
    plain = AuxVAE(micro_cfg, 3, 2, SETTINGS["setting_1"], seed=9)
    full_params, plain_params = dict(full.named_parameters()), dict(plain.named_parameters())
    shared = set(full_params) & set(plain_params)
    assert "encoder.loaded_tcn.blocks.0.conv.weight" in shared
    for path in shared:
        if full_params[path].shape == plain_params[path].shape:
            assert torch.equal(full_params[path], plain_params[path]), path


def test_registered_fusions():
    assert fusion_names() == ["none", "concat", "cross_attention"]


def test_reconstruction_gradient(micro_cfg):
    model = AuxVAE(micro_cfg, 3, 2, seed=1).double()
    g = torch.Generator().manual_seed(2)
    x = torch.randn(3, 16, 3, generator=g, dtype=torch.float64)
    x_aux = torch.randn(3, 16, 3, generator=g, dtype=torch.float64)

    def f() -> torch.Tensor:
        posterior, _ = model.encode(x, x_aux)
        return mse(model.decode(posterior.mu_z, x_aux), x)

    report = grad_check(f, model.named_parameters(), rel_tol=1e-4)
    assert report.passed, report
