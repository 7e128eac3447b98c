"""Trainer behavior: sharpening, guessed labels, VAT geometry, determinism."""

import numpy as np
import pytest

from poisonlab import data, methods, nn
from poisonlab.errors import ConfigError, TrainingDiverged


def zeroed_like(params):
    return nn.ModelParams(
        tuple(np.zeros_like(W) for W in params.weights),
        tuple(np.zeros_like(b) for b in params.biases),
        params.activations,
    )


def linear_net(V):
    """Single-layer softmax model with logits x @ V."""
    V = np.asarray(V, dtype=float)
    return nn.ModelParams((V,), (np.zeros(V.shape[1]),), ())


def test_sharpen_halving_temperature_squares_probs():
    out = methods.sharpen(np.array([0.6, 0.4]), 0.5)
    assert np.allclose(out, [0.36 / 0.52, 0.16 / 0.52], atol=1e-12)


def test_sharpen_identity_at_t1_and_hardens_as_t_drops():
    p = np.array([0.5, 0.3, 0.2])
    assert np.allclose(methods.sharpen(p, 1.0), p, atol=1e-12)
    hard = methods.sharpen(p, 0.05)
    assert hard[0] > 0.999
    with pytest.raises(ConfigError):
        methods.sharpen(p, 0.0)


def test_config_validation():
    methods.TrainerConfig().validate()
    with pytest.raises(ConfigError):
        methods.TrainerConfig(method="self-training").validate()
    with pytest.raises(ConfigError):
        methods.TrainerConfig(epochs=1).validate()
    with pytest.raises(ConfigError):
        methods.TrainerConfig(tau=0.0).validate()


@pytest.mark.parametrize("method", ["pseudo-label", "fixmatch-like", "uda-like"])
def test_guess_label_skips_below_threshold(method):
    params = zeroed_like(nn.init_params((2, 4, 2), seed=0))
    cfg = methods.TrainerConfig(method=method, tau=0.95)
    ema = nn.EmaParams(params, 0.9)
    label, train_on_it = methods.guess_label(params, ema, cfg,
                                             np.array([0.3, -0.2]),
                                             np.random.default_rng(0))
    assert not train_on_it
    assert np.allclose(label, 0.5)


def test_guess_label_hard_one_hot_when_confident():
    params = linear_net(np.array([[8.0, -8.0], [0.0, 0.0]]))
    cfg = methods.TrainerConfig(method="pseudo-label", tau=0.95)
    ema = nn.EmaParams(params, 0.9)
    label, train_on_it = methods.guess_label(params, ema, cfg,
                                             np.array([1.0, 0.0]),
                                             np.random.default_rng(0))
    assert train_on_it
    assert label.tolist() == [1.0, 0.0]


def test_guess_label_mean_teacher_uses_shadow():
    confident = linear_net(np.array([[8.0, -8.0], [0.0, 0.0]]))
    uniform = zeroed_like(confident)
    cfg = methods.TrainerConfig(method="mean-teacher", weak_sigma=0.0)
    ema = nn.EmaParams(uniform, 0.9)
    label, train_on_it = methods.guess_label(confident, ema, cfg,
                                             np.array([1.0, 0.0]),
                                             np.random.default_rng(0))
    assert train_on_it
    assert np.allclose(label, 0.5)


def test_guess_label_mixmatch_sharpens():
    params = linear_net(np.array([[1.0, -1.0], [0.0, 0.0]]))
    cfg = methods.TrainerConfig(method="mixmatch-like", weak_sigma=0.0,
                                temperature=0.5, n_aug=3)
    ema = nn.EmaParams(params, 0.9)
    label, train_on_it = methods.guess_label(params, ema, cfg,
                                             np.array([1.0, 0.0]),
                                             np.random.default_rng(0))
    p = nn.forward(params, np.array([1.0, 0.0]))
    assert train_on_it
    assert np.allclose(label, methods.sharpen(p, 0.5), atol=1e-12)


def test_vat_perturbation_norm_and_zero_radius():
    params = nn.init_params((3, 8, 2), seed=2)
    rng = np.random.default_rng(3)
    delta = methods.vat_perturbation(params, np.array([0.2, -0.1, 0.4]),
                                     eps=0.15, xi=1e-4, rng=rng)
    assert np.linalg.norm(delta) == pytest.approx(0.15, abs=1e-6)
    zero = methods.vat_perturbation(params, np.array([0.2, -0.1, 0.4]),
                                    eps=0.0, xi=1e-4, rng=rng)
    assert np.array_equal(zero, np.zeros(3))
    with pytest.raises(ConfigError):
        methods.vat_perturbation(params, np.zeros(3), eps=-1.0, xi=1e-4, rng=rng)


def test_vat_direction_aligns_with_logistic_weight_axis():
    """For a linear softmax the KL curvature is rank one along the weight axis."""
    v = np.array([0.6, -0.8])
    params = linear_net(np.column_stack([v, -v]))
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = rng.uniform(-0.5, 0.5, size=2)
        delta = methods.vat_perturbation(params, x, eps=0.1, xi=1e-4, rng=rng)
        cos = abs(np.dot(delta, v)) / (np.linalg.norm(delta) * np.linalg.norm(v))
        assert cos == pytest.approx(1.0, abs=1e-3)


@pytest.fixture(scope="module")
def tiny_view():
    return data.make_dataset("gaussian-blobs", 10, 60, 40, seed=1).train_view()


@pytest.mark.parametrize("method", methods.METHODS)
def test_train_smoke_all_methods(tiny_view, method):
    cfg = methods.TrainerConfig(method=method, epochs=6, unlabeled_batch=30,
                                hidden=(16,), seed=0)
    result = methods.train(tiny_view, cfg)
    assert result.trace.probs.shape == (6, 60, 2)
    assert np.isfinite(result.trace.probs).all()
    assert np.allclose(result.trace.probs.sum(axis=2), 1.0, atol=1e-9)
    assert len(result.metrics["test_acc"]) == 6


def test_lambda_zero_collapses_every_method_to_supervised(tiny_view):
    traces = []
    for method in methods.METHODS:
        cfg = methods.TrainerConfig(method=method, epochs=5, unlabeled_batch=30,
                                    hidden=(16,), seed=4, lambda_u=0.0)
        traces.append(methods.train(tiny_view, cfg).trace.probs)
    for t in traces[1:]:
        assert np.array_equal(t, traces[0])


def test_training_is_seed_deterministic(tiny_view):
    cfg = methods.TrainerConfig(method="fixmatch-like", epochs=5,
                                unlabeled_batch=30, hidden=(16,), seed=6)
    a = methods.train(tiny_view, cfg)
    b = methods.train(tiny_view, cfg)
    assert np.array_equal(a.trace.probs, b.trace.probs)
    assert a.metrics["test_acc"] == b.metrics["test_acc"]
    c = methods.train(tiny_view, methods.TrainerConfig(
        method="fixmatch-like", epochs=5, unlabeled_batch=30, hidden=(16,), seed=7))
    assert not np.array_equal(a.trace.probs, c.trace.probs)


def test_trace_round_trip(tiny_view, tmp_path):
    cfg = methods.TrainerConfig(method="pi-model", epochs=4, unlabeled_batch=30,
                                hidden=(16,), seed=2)
    trace = methods.train(tiny_view, cfg).trace
    path = tmp_path / "trace.txt"
    trace.save(path)
    back = methods.PredictionTrace.load(path)
    assert back.method == "pi-model" and back.seed == 2
    assert back.probs.shape == trace.probs.shape
    assert np.allclose(back.probs, trace.probs, atol=1e-8)
    head = path.read_text().splitlines()[:4]
    assert head[1].startswith("epochs ") and head[3] == "classes 2"


def test_diverged_exception_carries_context():
    err = TrainingDiverged("non-finite loss", seed=3, epoch=12, batch=4)
    assert err.seed == 3 and err.epoch == 12 and err.batch == 4
    assert "non-finite" in str(err)
