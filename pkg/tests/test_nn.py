"""Unit tests for the MLP core: forward oracle, gradient checks, optimizer math."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poisonlab import nn


def naive_forward(params, x):
    """Straight-line scalar reimplementation of the forward pass (oracle)."""
    act = list(x)
    for li, (W, b) in enumerate(zip(params.weights, params.biases)):
        out = []
        for j in range(W.shape[1]):
            s = b[j]
            for i in range(W.shape[0]):
                s += act[i] * W[i, j]
            out.append(s)
        if li < len(params.weights) - 1:
            name = params.activations[li]
            out = [math.tanh(v) if name == "tanh" else max(v, 0.0) for v in out]
        act = out
    m = max(act)
    exps = [math.exp(v - m) for v in act]
    total = sum(exps)
    return [v / total for v in exps]


def flat_params(params):
    return np.concatenate([a.ravel() for a in params.weights + params.biases])


def unflat_params(params, vec):
    ws, bs, k = [], [], 0
    for W in params.weights:
        ws.append(vec[k:k + W.size].reshape(W.shape))
        k += W.size
    for b in params.biases:
        bs.append(vec[k:k + b.size])
        k += b.size
    return nn.ModelParams(tuple(ws), tuple(bs), params.activations)


def numeric_grad(loss_fn, params, h=1e-5):
    """Central finite differences over the flattened parameter vector."""
    base = flat_params(params)
    out = np.empty_like(base)
    for i in range(base.size):
        up, dn = base.copy(), base.copy()
        up[i] += h
        dn[i] -= h
        out[i] = (loss_fn(unflat_params(params, up)) - loss_fn(unflat_params(params, dn))) / (2 * h)
    return out


def test_softmax_of_zeros_is_uniform():
    p = nn.softmax(np.zeros(10))
    assert np.allclose(p, 0.1, atol=1e-15)


def test_softmax_rows_sum_to_one_and_stay_positive():
    z = np.array([[1000.0, -1000.0, 0.0], [3.0, 2.0, 1.0]])
    p = nn.softmax(z)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert (p > 0).all()


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8),
       st.floats(-50, 50))
@settings(max_examples=60, deadline=None)
def test_softmax_shift_invariance(logits, shift):
    z = np.array(logits)
    assert np.allclose(nn.softmax(z), nn.softmax(z + shift), atol=1e-9)


def test_uniform_prediction_cross_entropy_is_log_c():
    params = nn.init_params((4, 8, 10), seed=3)
    zeroed = nn.ModelParams(
        tuple(np.zeros_like(W) for W in params.weights),
        tuple(np.zeros_like(b) for b in params.biases),
        params.activations,
    )
    X = np.random.default_rng(0).normal(size=(5, 4))
    y = np.array([0, 3, 9, 1, 2])
    loss, _ = nn.loss_and_grad(zeroed, X, y, "cross_entropy")
    assert loss == pytest.approx(math.log(10), rel=1e-12)


@pytest.mark.parametrize("activation", ["tanh", "relu"])
def test_forward_matches_naive_oracle(activation):
    params = nn.init_params((5, 7, 4, 3), seed=11, activation=activation)
    rng = np.random.default_rng(2)
    for _ in range(10):
        x = rng.normal(size=5)
        assert np.allclose(nn.forward(params, x), naive_forward(params, x), atol=1e-9)


def test_forward_batch_matches_single():
    params = nn.init_params((3, 6, 2), seed=5)
    X = np.random.default_rng(7).normal(size=(9, 3))
    batched = nn.forward_batch(params, X)
    for i in range(9):
        assert np.allclose(batched[i], nn.forward(params, X[i]), atol=1e-12)


def test_forward_rejects_wrong_input_dim():
    params = nn.init_params((3, 4, 2), seed=0)
    with pytest.raises(ValueError):
        nn.forward(params, np.zeros(5))


@pytest.mark.parametrize("kind", ["cross_entropy", "squared_error"])
@pytest.mark.parametrize("soft", [False, True])
def test_parameter_gradients_match_finite_differences(kind, soft):
    rng = np.random.default_rng(17)
    params = nn.init_params((4, 6, 3), seed=17)
    X = rng.normal(size=(6, 4))
    if soft:
        targets = rng.dirichlet(np.ones(3), size=6)
    else:
        targets = rng.integers(0, 3, size=6)
    _, grads = nn.loss_and_grad(params, X, targets, kind)
    analytic = np.concatenate(
        [g.ravel() for g in grads.weights + grads.biases])
    numeric = numeric_grad(
        lambda p: nn.loss_and_grad(p, X, targets, kind)[0], params)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    assert float(np.max(np.abs(analytic - numeric) / denom)) < 1e-4


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(23)
    params = nn.init_params((4, 5, 3), seed=23)
    X = rng.normal(size=(3, 4))
    targets = np.array([0, 2, 1])
    _, _, dx = nn.loss_and_grad(params, X, targets, "cross_entropy",
                                need_input_grad=True)
    h = 1e-5
    for i in range(3):
        for j in range(4):
            up, dn = X.copy(), X.copy()
            up[i, j] += h
            dn[i, j] -= h
            num = (nn.loss_and_grad(params, up, targets, "cross_entropy")[0]
                   - nn.loss_and_grad(params, dn, targets, "cross_entropy")[0]) / (2 * h)
            assert dx[i, j] == pytest.approx(num, rel=1e-4, abs=1e-8)


def test_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(31)
    logits = rng.normal(size=(4, 3))
    probs = nn.softmax(logits)
    _, dlogits = nn.entropy_and_dlogits(probs)
    h = 1e-6
    for i in range(4):
        for j in range(3):
            up, dn = logits.copy(), logits.copy()
            up[i, j] += h
            dn[i, j] -= h
            num = (nn.entropy_and_dlogits(nn.softmax(up))[0]
                   - nn.entropy_and_dlogits(nn.softmax(dn))[0]) / (2 * h)
            assert dlogits[i, j] == pytest.approx(num, rel=1e-3, abs=1e-9)


def test_squared_error_loss_value():
    params = nn.init_params((2, 4, 3), seed=9)
    X = np.random.default_rng(1).normal(size=(5, 2))
    targets = np.random.default_rng(2).dirichlet(np.ones(3), size=5)
    loss, _ = nn.loss_and_grad(params, X, targets, "squared_error")
    probs = nn.forward_batch(params, X)
    assert loss == pytest.approx(float(((probs - targets) ** 2).sum(axis=1).mean()),
                                 rel=1e-12)


def test_empty_batch_raises():
    params = nn.init_params((2, 3, 2), seed=0)
    with pytest.raises(ValueError, match="empty batch"):
        nn.loss_and_grad(params, np.zeros((0, 2)), np.zeros(0, dtype=int),
                         "cross_entropy")


def test_sgd_step_arithmetic():
    params = nn.init_params((2, 3, 2), seed=4)
    grads = nn.Gradients(
        tuple(np.ones_like(W) for W in params.weights),
        tuple(np.ones_like(b) for b in params.biases),
    )
    out = nn.sgd_step(params, grads, 0.5)
    for W0, W1 in zip(params.weights, out.weights):
        assert np.allclose(W1, W0 - 0.5)
    unchanged = nn.sgd_step(params, grads, 0.0)
    for W0, W1 in zip(params.weights, unchanged.weights):
        assert np.array_equal(W1, W0)
    with pytest.raises(ValueError):
        nn.sgd_step(params, grads, -0.1)


def test_momentum_matches_hand_computation():
    params = nn.init_params((2, 2, 2), seed=8)
    g = nn.Gradients(
        tuple(np.full_like(W, 2.0) for W in params.weights),
        tuple(np.full_like(b, 2.0) for b in params.biases),
    )
    opt = nn.MomentumSgd(lr=0.1, momentum=0.5)
    p1 = opt.step(params, g)   # v = 2         -> p - 0.2
    p2 = opt.step(p1, g)       # v = 1 + 2 = 3 -> p - 0.3
    assert np.allclose(p1.weights[0], params.weights[0] - 0.2)
    assert np.allclose(p2.weights[0], params.weights[0] - 0.5)


def test_ema_update_arithmetic():
    params = nn.init_params((2, 3, 2), seed=1)
    other = nn.init_params((2, 3, 2), seed=2)
    ema = nn.EmaParams(params, decay=0.9)
    out = nn.ema_update(ema, other)
    expect = 0.9 * params.weights[0] + 0.1 * other.weights[0]
    assert np.allclose(out.shadow.weights[0], expect, atol=1e-15)
    snap = nn.ema_update(nn.EmaParams(params, decay=0.0), other)
    assert np.array_equal(snap.shadow.weights[0], other.weights[0])


def test_init_is_seed_deterministic_and_bounded():
    a = nn.init_params((6, 9, 4), seed=42)
    b = nn.init_params((6, 9, 4), seed=42)
    c = nn.init_params((6, 9, 4), seed=43)
    for Wa, Wb in zip(a.weights, b.weights):
        assert np.array_equal(Wa, Wb)
    assert not np.array_equal(a.weights[0], c.weights[0])
    for W in a.weights:
        bound = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        assert np.abs(W).max() <= bound
    for bias in a.biases:
        assert np.array_equal(bias, np.zeros_like(bias))


def test_supervised_training_separates_blobs():
    """A few dozen SGD steps fit two well-separated clusters perfectly."""
    rng = np.random.default_rng(0)
    X = np.concatenate([rng.normal(-0.5, 0.08, size=(40, 2)),
                        rng.normal(0.5, 0.08, size=(40, 2))])
    y = np.array([0] * 40 + [1] * 40)
    params = nn.init_params((2, 16, 2), seed=0)
    opt = nn.MomentumSgd(lr=0.2, momentum=0.9)
    for _ in range(60):
        _, grads = nn.loss_and_grad(params, X, y, "cross_entropy")
        params = opt.step(params, grads)
    acc = (nn.forward_batch(params, X).argmax(axis=1) == y).mean()
    assert acc == 1.0
