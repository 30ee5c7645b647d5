import math

import numpy as np
import pytest
from scipy import integrate, stats

from rbm_exact import rng as rngmod
from rbm_exact.bridge_math import pi_density, rho
from rbm_exact.harness import half_normal_cdf
from rbm_exact.sampler import (
    ACCEPT,
    ACCEPTED,
    BUDGET_EXHAUSTED,
    REJECT,
    SamplerConfig,
    propose,
    rejection_step,
    rescale_time,
    sample,
    sample_with_trace,
    strong_approx,
)
from rbm_exact.skorokhod import Polyline, reflect, validate_spec

ONE_D = validate_spec([[0.0]])
COUPLED = validate_spec([[0.0, 0.5], [0.5, 0.0]])


class FixedUniforms:
    """Stand-in generator whose ``random`` returns a fixed value."""

    def __init__(self, value):
        self.value = value

    def random(self, size=None):
        return self.value if size is None else np.full(size, self.value)


def consistent_path(ls, t_end=1.0):
    """A piecewise-linear path that agrees with every layer up to ``t_end``.

    Inside each layer it passes through the centre of the minimum cell and
    the centre of the maximum cell, so its extrema land in both cells.
    """
    t, v = [0.0], [ls.layers[0].b_left]
    for l in ls.layers:
        if l.t_right > t_end:
            break
        r = l.r
        t += [l.t_left + r / 3, l.t_left + 2 * r / 3, l.t_right]
        v += [0.5 * (l.L_low + l.L_up), 0.5 * (l.U_low + l.U_up), l.b_right]
    return np.array(t), np.array(v)


def joint_path(sets, t_end=1.0):
    parts = [consistent_path(ls, t_end) for ls in sets]
    grid = np.unique(np.concatenate([p[0] for p in parts]))
    return Polyline(grid, np.stack([np.interp(grid, *p) for p in parts], axis=1))


def test_rescale_time():
    assert rescale_time(1 / 3) == pytest.approx((1.0, 1 / 3))
    c, tau = rescale_time(0.5)
    assert c == pytest.approx(1.5) and tau == 1 / 3
    for bad in (0.0, 1.5, -1.0):
        with pytest.raises(ValueError):
            rescale_time(bad)


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(ONE_D, y0=-1.0)
    with pytest.raises(ValueError):
        SamplerConfig(ONE_D, max_level=0)
    cfg = SamplerConfig(COUPLED, y0=0.5)
    np.testing.assert_array_equal(cfg.y0, [0.5, 0.5])


@pytest.mark.parametrize("spec", [ONE_D, COUPLED])
def test_bracket_contains_consistent_path_and_guard_holds(spec):
    for k in range(15):
        out = strong_approx(SamplerConfig(spec, seed=3), k)
        X = joint_path(out.layer_sets)
        sol = reflect(X, spec, out.state.y0, tol=1e-13)
        y_left = sol.Y.at(out.T_left)
        assert np.all(out.y_left_lo - 1e-9 <= y_left) and np.all(y_left <= out.y_left_hi + 1e-9)
        # no coordinate can reach zero on the layer holding the query time
        drop = np.array([p.band.L_low for p in out.params])
        assert np.all(out.y_left_lo + drop > 0)
        L_left, L_right = sol.L.at(out.T_left), sol.L.at(out.T_right)
        np.testing.assert_allclose(L_left, L_right, atol=1e-9)


def test_strong_approx_far_from_boundary():
    cfg = SamplerConfig(ONE_D, y0=5.0, seed=1)
    for k in range(10):
        out = strong_approx(cfg, k)
        assert out.N <= 3
        # the bracket is exact: L stays at zero
        y0 = out.state.y0[0]
        assert out.y_left_hi[0] - out.y_left_lo[0] < 1e-12
        assert out.Ydelta[0] == pytest.approx(y0 + out.b_left[0], abs=1e-12)
        assert np.all(out.reflected_polyline().L.v == 0)


def test_strong_approx_layer_J_contains_query_time():
    out = strong_approx(SamplerConfig(COUPLED, seed=2), 0)
    assert out.T_left < 1 / 3 <= out.T_right
    assert out.T_right - out.T_left == 2.0 ** -out.N
    for p, ls in zip(out.params, out.layer_sets):
        J = ls.layers[ls.find(1 / 3)]
        assert p.band.U_up - p.band.L_low == pytest.approx(J.height)
    assert out.epsilon() == pytest.approx(max(p.band.U_up - p.band.L_low for p in out.params))
    assert np.all(out.delta >= 0)


@pytest.mark.parametrize("method", ["uniform", "envelope"])
def test_proposal_support(method):
    out = strong_approx(SamplerConfig(COUPLED, seed=4), 0)
    rng = np.random.default_rng(0)
    lo = np.array([p.band.L_low for p in out.params]) - out.delta
    hi = np.array([p.band.U_up for p in out.params]) + out.delta
    for _ in range(500):
        prop = propose(out, rng, method)
        assert np.all(lo <= prop.Ztilde) and np.all(prop.Ztilde <= hi)
        np.testing.assert_allclose(prop.Z - out.Ydelta, prop.Ztilde, rtol=0, atol=1e-15)
        assert np.all(prop.c_pi <= 1.0) and np.all(prop.c_rho <= 1.0)


def test_uniform_proposal_is_uniform():
    out = strong_approx(SamplerConfig(ONE_D, seed=5), 0)
    rng = np.random.default_rng(1)
    z = np.array([propose(out, rng, "uniform").Ztilde[0] for _ in range(10_000)])
    lo = out.params[0].band.L_low - out.delta[0]
    hi = out.params[0].band.U_up + out.delta[0]
    counts, _ = np.histogram(z, bins=20, range=(lo, hi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_unknown_proposal_method():
    out = strong_approx(SamplerConfig(ONE_D, seed=5), 0)
    with pytest.raises(ValueError):
        propose(out, np.random.default_rng(0), "gaussian")


def test_rejection_step_with_fixed_uniforms():
    cfg = SamplerConfig(ONE_D, seed=6)
    out = strong_approx(cfg, 0)
    prop = propose(out, np.random.default_rng(2), "uniform")
    b = out.params[0].band
    # move the proposal to the centre of the band so pi and rho are positive
    centre = 0.5 * (b.L_up + b.U_low)
    prop.Ztilde[:] = centre
    prop.Z[:] = out.Ydelta + centre
    assert rejection_step(out, prop, cfg, FixedUniforms(0.0)) == ACCEPT
    assert rejection_step(out, prop, cfg, FixedUniforms(1.0)) == REJECT


def test_acceptance_rate_matches_quadrature():
    # far from the boundary Y(T_left) is known exactly, so the acceptance
    # probability of one proposal is the integral of pi * rho over the
    # proposal's normalizing mass
    cfg = SamplerConfig(ONE_D, y0=5.0, seed=7)
    out = strong_approx(cfg, 0)
    p = out.params[0]
    b = p.band
    integral, _ = integrate.quad(lambda x: pi_density(x, p) * rho(x, p, 1e-12),
                                 b.L_low, b.U_up, limit=200, epsabs=1e-12)
    for method, mass in (("uniform", b.U_up - b.L_low + 2 * out.delta[0]),
                         ("envelope", out.envelope(0, cfg.envelope_bins).weights.sum())):
        expected = integral / mass
        rng = np.random.default_rng(3)
        n = 10_000
        acc = sum(rejection_step(out, propose(out, rng, method), cfg, rng) == ACCEPT
                  for _ in range(n))
        se = math.sqrt(expected * (1 - expected) / n)
        assert abs(acc / n - expected) < 3 * se, method


def test_sample_is_deterministic():
    cfg = SamplerConfig(COUPLED, seed=11)
    a, b = sample(cfg, 3), sample(cfg, 3)
    np.testing.assert_array_equal(a.value, b.value)
    assert (a.attempts, a.N, a.refinements) == (b.attempts, b.N, b.refinements)
    assert not np.array_equal(a.value, sample(cfg, 4).value)


def test_samples_are_nonnegative():
    cfg = SamplerConfig(COUPLED, seed=12)
    for k in range(40):
        r = sample(cfg, k)
        if r.status == ACCEPTED:
            assert np.all(r.value >= -1e-9)
            assert r.attempts >= 1


def test_budget_exhaustion_is_reported():
    cfg = SamplerConfig(ONE_D, seed=1, max_level=1, max_refine_level=1)
    statuses = {sample(cfg, k).status for k in range(20)}
    assert BUDGET_EXHAUSTED in statuses
    r = next(sample(cfg, k) for k in range(20) if sample(cfg, k).status == BUDGET_EXHAUSTED)
    assert np.all(np.isnan(r.value))


def test_no_refinement_right_of_T_left():
    cfg = SamplerConfig(COUPLED, seed=13)
    for k in range(10):
        _, out = sample_with_trace(cfg, k)
        for ls, mark in zip(out.layer_sets, out.freeze_mark):
            assert all(t1 <= out.T_left for _, _, t1 in ls.log[mark:])


def test_one_d_half_normal_small():
    cfg = SamplerConfig(ONE_D, T=0.5, seed=21)
    vals = [r.value[0] for r in (sample(cfg, k) for k in range(300)) if r.status == ACCEPTED]
    assert len(vals) >= 295
    assert stats.kstest(vals, lambda x: half_normal_cdf(x, 0.5)).pvalue > 0.01


def test_layer_streams_independent_of_proposal_stream():
    # layer randomness comes from its own stream, so the strong approximation
    # of a sample does not depend on how many proposals were drawn
    cfg = SamplerConfig(ONE_D, seed=9)
    a = strong_approx(cfg, 2)
    b = strong_approx(cfg, 2)
    assert a.layer_sets[0].layers == b.layer_sets[0].layers
    assert rngmod.stream(9, 2, 1, rngmod.PROPOSAL).random() != rngmod.stream(9, 2, 0, 0).random()
