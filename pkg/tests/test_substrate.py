import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from auxvae.config import TrainConfig
from auxvae.errors import DataValidationError, NonFiniteError, ShapeError
from auxvae.substrate import (
    BatchNorm,
    Dense,
    adam_step,
    batch_norm,
    cross_entropy,
    dense,
    dilated_causal_conv1d,
    gaussian_kl_to_standard,
    gelu,
    grad_check,
    mae,
    make_optimizer,
    max_pool1d,
    mse,
    receptive_field,
    reparameterize,
    softmax_rows,
    transposed_conv1d,
)
from auxvae.verification import CASES, run_suite


def test_dense_by_hand():
    x = torch.tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    W = torch.arange(1.0, 13.0).reshape(3, 4)
    out = dense(x, W, torch.zeros(4))
    torch.testing.assert_close(out, torch.tensor([[38.0, 44.0, 50.0, 56.0], [83.0, 98.0, 113.0, 128.0]]))


def test_dense_shape_mismatch():
    with pytest.raises(ShapeError):
        dense(torch.zeros(2, 3), torch.zeros(4, 2), torch.zeros(2))


@pytest.mark.parametrize("kernel", [1, 2, 3])
@pytest.mark.parametrize("dilation", [1, 2, 4])
def test_causal_conv_ignores_the_future(kernel, dilation):
    g = torch.Generator().manual_seed(kernel * 10 + dilation)
    H = torch.randn(1, 20, 2, generator=g, dtype=torch.float64)
    W = torch.randn(kernel, 3, 2, generator=g, dtype=torch.float64)
    b = torch.randn(3, generator=g, dtype=torch.float64)
    for t0 in range(20):
        perturbed = H.clone()
        perturbed[:, t0 + 1 :] += torch.randn(1, 19 - t0, 2, generator=g, dtype=torch.float64)
        before = dilated_causal_conv1d(H, W, b, dilation)
        after = dilated_causal_conv1d(perturbed, W, b, dilation)
        torch.testing.assert_close(before[:, : t0 + 1], after[:, : t0 + 1], rtol=0, atol=0)


def test_causal_conv_tap_order():
    H = torch.zeros(6, 1)
    H[2, 0] = 1.0
    W = torch.tensor([1.0, 10.0, 100.0]).reshape(3, 1, 1)
    out = dilated_causal_conv1d(H, W, torch.zeros(1), dilation=1)
    torch.testing.assert_close(out[:, 0], torch.tensor([0.0, 0.0, 1.0, 10.0, 100.0, 0.0]))


def test_receptive_field_from_impulse_response():
    T = 32
    H = torch.zeros(T, 1, dtype=torch.float64)
    H[10, 0] = 1.0
    ones = torch.ones(3, 1, 1, dtype=torch.float64)
    zero = torch.zeros(1, dtype=torch.float64)
    out = dilated_causal_conv1d(dilated_causal_conv1d(H, ones, zero, 1), ones, zero, 2)
    support = torch.nonzero(out[:, 0]).flatten().tolist()
    assert support == list(range(10, 17))
    assert len(support) == receptive_field(3, 2) == 7


def test_transposed_conv_length():
    H = torch.randn(2, 5, 3)
    for stride, kernel in [(1, 3), (2, 1), (2, 3), (3, 2)]:
        out = transposed_conv1d(H, torch.randn(kernel, 4, 3), torch.zeros(4), stride)
        assert out.shape == (2, 5 * stride, 4)


def test_batch_norm_needs_two_rows_in_train_mode():
    with pytest.raises(ShapeError):
        batch_norm(torch.ones(1, 3), torch.ones(3), torch.zeros(3), torch.zeros(3), torch.ones(3), training=True)


def test_batch_norm_modes():
    layer = BatchNorm(2)
    x = torch.randn(4, 5, 2) * 3 + 1
    out = layer(x)
    torch.testing.assert_close(out.reshape(-1, 2).mean(0), torch.zeros(2), atol=1e-5, rtol=0)
    assert not torch.equal(layer.running_mean, torch.zeros(2))
    layer.eval()
    torch.testing.assert_close(layer(x), layer(x))


def test_max_pool_ceil_and_global():
    H = torch.tensor([1.0, 5.0, 2.0, 0.0, 7.0]).reshape(5, 1)
    torch.testing.assert_close(max_pool1d(H, 2)[:, 0], torch.tensor([5.0, 2.0, 7.0]))
    torch.testing.assert_close(max_pool1d(H, 8)[:, 0], torch.tensor([7.0]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 8), st.floats(-50, 50))
def test_softmax_rows_sum_to_one_and_ignore_shifts(rows, cols, shift):
    X = torch.randn(rows, cols, dtype=torch.float64)
    P = softmax_rows(X)
    torch.testing.assert_close(P.sum(-1), torch.ones(rows, dtype=torch.float64), atol=1e-9, rtol=0)
    torch.testing.assert_close(softmax_rows(X + shift), P, atol=1e-12, rtol=0)


@pytest.mark.parametrize(
    "mu, sigma, expected",
    [(0.0, 1.0, 0.0), (1.0, 1.0, 0.5), (0.0, 2.0, 0.5 * (4 - 1 - 2 * math.log(2)))],
)
def test_kl_closed_form(mu, sigma, expected):
    kl = gaussian_kl_to_standard(torch.tensor([mu], dtype=torch.float64), torch.tensor([sigma], dtype=torch.float64))
    assert abs(kl.item() - expected) < 1e-9


def test_kl_matches_monte_carlo():
    g = torch.Generator().manual_seed(0)
    for _ in range(10):
        mu = torch.randn(1, generator=g, dtype=torch.float64)
        sigma = torch.rand(1, generator=g, dtype=torch.float64) + 0.3
        z = mu + sigma * torch.randn(100_000, 1, generator=g, dtype=torch.float64)
        log_q = -0.5 * ((z - mu) / sigma) ** 2 - torch.log(sigma)
        log_p = -0.5 * z**2
        samples = (log_q - log_p)[:, 0]
        estimate, stderr = samples.mean().item(), samples.std().item() / math.sqrt(samples.numel())
        assert abs(gaussian_kl_to_standard(mu, sigma).item() - estimate) < 3 * stderr + 1e-12


def test_kl_is_nonnegative_and_zero_only_at_standard():
    mu, sigma = torch.randn(50, 4, dtype=torch.float64), torch.rand(50, 4, dtype=torch.float64) + 0.1
    assert (gaussian_kl_to_standard(mu, sigma) >= 0).all()
    assert gaussian_kl_to_standard(torch.zeros(4, dtype=torch.float64), torch.ones(4, dtype=torch.float64)).item() < 1e-12


def test_kl_rejects_nonpositive_sigma():
    with pytest.raises(DataValidationError):
        gaussian_kl_to_standard(torch.zeros(2), torch.tensor([1.0, 0.0]))


def test_reparameterize_is_seeded_and_centered():
    mu, sigma = torch.full((100_000,), 2.0, dtype=torch.float64), torch.full((100_000,), 0.5, dtype=torch.float64)
    a = reparameterize(mu, sigma, torch.Generator().manual_seed(4))
    b = reparameterize(mu, sigma, torch.Generator().manual_seed(4))
    assert torch.equal(a, b)
    assert abs(a.mean().item() - 2.0) < 3 * 0.5 / math.sqrt(100_000)


def test_reparameterize_gradient_reaches_mu_and_sigma():
    mu = torch.zeros(3, requires_grad=True)
    sigma = torch.ones(3, requires_grad=True)
    reparameterize(mu, sigma, torch.Generator().manual_seed(0)).sum().backward()
    assert mu.grad is not None and sigma.grad is not None


def test_loss_examples():
    X = torch.randn(4, 3)
    assert mse(X, X).item() == 0.0
    assert mae(torch.tensor([22.0]), torch.tensor([30.0])).item() == 8.0
    uniform = torch.full((1, 4), 0.25, dtype=torch.float64)
    target = torch.tensor([[0.0, 1.0, 0.0, 0.0]], dtype=torch.float64)
    assert abs(cross_entropy(uniform, target).item() - math.log(4)) < 1e-12


def test_cross_entropy_rejects_unnormalized():
    with pytest.raises(DataValidationError):
        cross_entropy(torch.tensor([[0.5, 0.6]]), torch.tensor([[1.0, 0.0]]))


def test_adam_first_step():
    param = torch.nn.Parameter(torch.zeros(1))
    module = torch.nn.Module()
    module.register_parameter("w", param)
    optimizer = make_optimizer(module, TrainConfig(lr=0.1, weight_decay=0.0))
    param.grad = torch.ones(1)
    adam_step(module, optimizer)
    assert abs(param.item() + 0.1) < 1e-6


def test_adam_zero_gradient_leaves_params_without_decay():
    module = Dense(3, 2, torch.Generator().manual_seed(0))
    before = [p.detach().clone() for p in module.parameters()]
    optimizer = make_optimizer(module, TrainConfig(weight_decay=0.0))
    for p in module.parameters():
        p.grad = torch.zeros_like(p)
    adam_step(module, optimizer)
    for old, new in zip(before, module.parameters()):
        assert torch.equal(old, new)


def test_adam_weight_decay_shrinks_toward_zero():
    module = torch.nn.Module()
    module.register_parameter("w", torch.nn.Parameter(torch.tensor([2.0, -2.0])))
    optimizer = make_optimizer(module, TrainConfig(lr=0.01, weight_decay=0.1))
    module.w.grad = torch.zeros(2)
    adam_step(module, optimizer)
    assert (module.w.abs() < 2.0).all()


def test_adam_refuses_non_finite_gradient():
    module = Dense(2, 2, torch.Generator().manual_seed(0))
    optimizer = make_optimizer(module, TrainConfig())
    module.weight.grad = torch.full_like(module.weight, float("nan"))
    with pytest.raises(NonFiniteError) as info:
        adam_step(module, optimizer)
    assert info.value.path == "weight"


def test_adam_trajectories_are_bit_identical():
    def trajectory():
        module = Dense(4, 3, torch.Generator().manual_seed(1))
        optimizer = make_optimizer(module, TrainConfig())
        x = torch.randn(8, 4, generator=torch.Generator().manual_seed(2))
        for _ in range(5):
            optimizer.zero_grad()
            module(x).pow(2).sum().backward()
            adam_step(module, optimizer)
        return module.weight.detach().clone()

    assert torch.equal(trajectory(), trajectory())


def test_grad_check_linear_is_exact():
    W = torch.randn(3, 2, dtype=torch.float64, requires_grad=True)
    b = torch.zeros(2, dtype=torch.float64, requires_grad=True)
    x = torch.randn(5, 3, dtype=torch.float64)
    report = grad_check(lambda: dense(x, W, b).sum(), [("W", W), ("b", b)])
    assert report.passed
    assert report.max_rel_error < 1e-8


def test_grad_check_flags_a_wrong_gradient():
    class Wrong(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            return x**2

        @staticmethod
        def backward(ctx, grad):
            return grad

    x = torch.randn(4, dtype=torch.float64, requires_grad=True)
    report = grad_check(lambda: Wrong.apply(x).sum(), [("x", x)])
    assert not report.passed


def test_softmax_cross_entropy_gradient_is_tight():
    f, leaves = CASES["cross_entropy_softmax"](torch.Generator().manual_seed(0))
    report = grad_check(f, leaves)
    assert report.max_rel_error < 1e-6


def test_every_case_passes_on_twenty_seeds():
    reports = run_suite(num_seeds=20, rel_tol=1e-4)
    assert len(reports) == 20 * len(CASES)
    failed = [(r.name, r.max_rel_error, r.worst_path) for r in reports if not r.passed]
    assert failed == []


def test_gelu_values():
    out = gelu(torch.tensor([1.0, 10.0], dtype=torch.float64))
    assert abs(out[0].item() - 0.841345) < 1e-6
    assert abs(out[1].item() - 10.0) < 1e-9


def test_max_pool_tie_sends_gradient_to_first_index():
    H = torch.tensor([[2.0], [2.0]], requires_grad=True)
    max_pool1d(H, 2).sum().backward()
    torch.testing.assert_close(H.grad, torch.tensor([[1.0], [0.0]]))


def test_transposed_conv_stride_two_places_inputs_on_even_steps():
    a, b = 3.0, -2.0
    out = transposed_conv1d(torch.tensor([[a], [b]]), torch.ones(1, 1, 1), torch.zeros(1), stride=2)
    torch.testing.assert_close(out[:, 0], torch.tensor([a, 0.0, b, 0.0]))


def test_batch_norm_eval_uses_running_statistics():
    out = batch_norm(
        torch.tensor([[3.0]], dtype=torch.float64),
        torch.ones(1, dtype=torch.float64),
        torch.zeros(1, dtype=torch.float64),
        torch.ones(1, dtype=torch.float64),
        torch.full((1,), 4.0, dtype=torch.float64),
        training=False,
    )
    assert abs(out.item() - 1.0) < 1e-5


def test_cross_entropy_reports_non_finite_probabilities():
    with pytest.raises(NonFiniteError) as info:
        cross_entropy(torch.tensor([[float("nan"), 0.5]]), torch.tensor([[1.0, 0.0]]))
    assert info.value.term == "style_ce"
