"""Density normalization, quantile placement, bridge geometry, transfer search."""

import math

import numpy as np
import pytest

from poisonlab import nn, poison
from poisonlab.errors import BudgetError, ConfigError


def seg_distance(p, a, b):
    """Distance from p to the segment [a, b]."""
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * ab))


def test_interp_endpoints_and_arithmetic():
    a, b = np.array([0.0, 0.0]), np.array([2.0, 4.0])
    assert np.array_equal(poison.interp(a, b, 0.0), a)
    assert np.array_equal(poison.interp(a, b, 1.0), b)
    assert np.allclose(poison.interp(a, b, 0.25), [0.5, 1.0])
    with pytest.raises(ConfigError):
        poison.interp(a, b, 1.5)
    with pytest.raises(ConfigError):
        poison.interp(a, np.zeros(3), 0.5)


def test_normalize_uniform_and_already_normalized():
    unit = poison.normalize_density("1")
    assert np.allclose(unit.pdf, 1.0, atol=1e-12)
    tilt = poison.normalize_density("1.5-x")
    assert np.allclose(tilt.pdf, 1.5 - tilt.grid, atol=1e-12)


def test_normalize_rescales_rho_x_to_2x():
    d = poison.normalize_density("x")
    assert np.allclose(d.pdf, 2.0 * d.grid, atol=1e-9)
    assert d.cdf[0] == 0.0 and d.cdf[-1] == 1.0


def test_normalize_rejects_bad_densities():
    with pytest.raises(ConfigError):
        poison.normalize_density(lambda x: x - 0.5)  # negative on [0, 0.5)
    with pytest.raises(ConfigError):
        poison.normalize_density(lambda x: np.zeros_like(x))
    with pytest.raises(ConfigError):
        poison.normalize_density("cauchy")


def test_uniform_quantiles():
    alphas = poison.sample_alphas("1", 5)
    assert np.allclose(alphas, [0, 0.25, 0.5, 0.75, 1], atol=1e-9)


def test_linear_density_quantile_is_sqrt_half():
    alphas = poison.sample_alphas("x", 3)
    assert alphas[1] == pytest.approx(math.sqrt(0.5), abs=1e-6)


def test_tilted_density_quantiles_match_quadratic_roots():
    # F(a) = 1.5a - a^2/2; invert at 1/3 and 2/3 (roots of a^2 - 3a + 2k/3)
    alphas = poison.sample_alphas("1.5-x", 4)
    assert alphas[1] == pytest.approx((3 - math.sqrt(9 - 8 / 3)) / 2, abs=1e-6)
    assert alphas[2] == pytest.approx((3 - math.sqrt(9 - 16 / 3)) / 2, abs=1e-6)


@pytest.mark.parametrize("name", sorted(poison.DENSITIES))
@pytest.mark.parametrize("n", [2, 3, 17, 512])
def test_every_registered_density_samples_cleanly(name, n):
    d = poison.normalize_density(name)
    assert abs(np.trapezoid(d.pdf, d.grid) - 1.0) < 1e-6
    alphas = poison.sample_alphas(d, n)
    assert alphas[0] == 0.0 and alphas[-1] == 1.0
    assert (np.diff(alphas) > 0).all()
    inner = poison.cdf_at(d, alphas)
    assert np.allclose(inner, np.arange(n) / (n - 1), atol=1e-6)


def make_spec(n=10, density="1", sigma=0.0, **kw):
    return poison.PoisonSpec(
        x_source=np.array([-0.8, -0.2, 0.1]),
        x_target=np.array([0.7, 0.4, -0.5]),
        y_target=0, n_points=n, density=density, sigma_p=sigma, **kw)


def test_bridge_n2_is_exactly_the_endpoints():
    out = poison.build_bridge(make_spec(n=2))
    assert np.array_equal(out.points[0], [-0.8, -0.2, 0.1])
    assert np.array_equal(out.points[1], [0.7, 0.4, -0.5])


def test_bridge_points_are_convex_and_collinear():
    spec = make_spec(n=20, density="1.5-x")
    out = poison.build_bridge(spec)
    lo = np.minimum(spec.x_source, spec.x_target)
    hi = np.maximum(spec.x_source, spec.x_target)
    assert (out.points >= lo - 1e-12).all() and (out.points <= hi + 1e-12).all()
    for p in out.points:
        assert seg_distance(p, spec.x_source, spec.x_target) < 1e-9


def test_bridge_budget_enforced_and_overridable():
    spec = make_spec(n=20)
    with pytest.raises(BudgetError):
        poison.build_bridge(spec, n_unlabeled=1000)  # 20 >= 1% of 1000
    out = poison.build_bridge(spec, n_unlabeled=1000, override=True)
    assert len(out.points) == 20
    poison.build_bridge(spec, n_unlabeled=5000)  # 20 < 50, fine


def test_bridge_noise_is_seeded_and_clipped():
    a = poison.build_bridge(make_spec(n=15, sigma=0.05, seed=3))
    b = poison.build_bridge(make_spec(n=15, sigma=0.05, seed=3))
    c = poison.build_bridge(make_spec(n=15, sigma=0.05, seed=4))
    assert np.array_equal(a.points, b.points)
    assert not np.array_equal(a.points, c.points)
    assert a.points.min() >= -1.0 and a.points.max() <= 1.0


def test_custom_path_must_hit_endpoints():
    bent = lambda s, t, a: s * (1 - a) + t * a + a * (1 - a)
    out = poison.build_bridge(make_spec(n=7, path_fn=bent))
    assert len(out.points) == 7
    broken = lambda s, t, a: s + a  # misses the target endpoint
    with pytest.raises(ConfigError):
        poison.build_bridge(make_spec(n=7, path_fn=broken))


def test_zero_knowledge_without_supports_is_plain_bridge():
    plain = poison.build_bridge(make_spec(n=12))
    zk = poison.build_zero_knowledge(make_spec(n=12))
    assert np.array_equal(zk.points, plain.points)
    assert zk.supports == ()


def test_zero_knowledge_budget_split():
    spec = make_spec(n=10, support_sources=(np.array([0.0, 0.9, 0.0]),))
    zk = poison.build_zero_knowledge(spec)
    assert len(zk.main.points) == 5 and len(zk.supports[0].points) == 5
    assert len(zk.points) == 10
    # support path runs from the support point to the main source
    assert np.allclose(zk.supports[0].points[0], [0.0, 0.9, 0.0])
    assert np.allclose(zk.supports[0].points[-1], spec.x_source)


def test_zero_knowledge_rejects_starved_paths():
    spec = make_spec(n=5, support_sources=(np.zeros(3), np.ones(3) * 0.5))
    with pytest.raises(ConfigError):
        poison.build_zero_knowledge(spec)


def test_transfer_source_trivial_when_already_classified():
    v = np.array([1.0, 0.5])
    params = nn.ModelParams((np.column_stack([v, -v]),), (np.zeros(2),), ())
    x = np.array([0.4, 0.2])  # v.x > 0 -> class 0 already
    res = poison.find_transfer_source(params, x, 0)
    assert res.found and res.delta_norm == 0.0
    assert np.array_equal(res.x_source, x)


def test_transfer_source_matches_linear_margin():
    """On a linear model the found perturbation equals the margin distance."""
    v = np.array([0.6, -0.8])
    params = nn.ModelParams((np.column_stack([v, -v]),), (np.zeros(2),), ())
    x = np.array([-0.3, 0.1])          # v.x = -0.26 -> class 1
    margin = abs(np.dot(v, x)) / np.linalg.norm(v)
    res = poison.find_transfer_source(params, x, 0, steps=200, step_size=0.02)
    assert res.found
    assert int(np.argmax(nn.forward(params, res.x_source))) == 0
    assert res.delta_norm == pytest.approx(margin, rel=0.05)


def test_transfer_source_reports_failure():
    # constant model never prefers class 1 over class 0 (zero logits, argmax -> 0)
    params = nn.ModelParams((np.zeros((2, 2)),), (np.array([1.0, 0.0]),), ())
    res = poison.find_transfer_source(params, np.zeros(2), 1, steps=30)
    assert not res.found
    assert res.x_source is None and math.isinf(res.delta_norm)
