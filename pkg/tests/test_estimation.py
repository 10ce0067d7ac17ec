"""Weighted mean, standard error, and the two-party margin wrapper."""

import numpy as np
import pytest

from kpopweight import margin_estimate, weighted_mean


def test_uniform_weights_reduce_to_sample_mean(rng):
    y = rng.normal(size=40)
    n = len(y)
    res = weighted_mean(y, np.full(n, 1 / n))
    assert res.estimate == pytest.approx(y.mean())
    # With w_i = 1/n the formula collapses to the classic
    # sqrt(s^2/n) with the n-1 denominator.
    classic = np.sqrt(y.var(ddof=1) / n)
    assert res.se == pytest.approx(classic, rel=1e-12)
    assert res.n_effective == pytest.approx(n)


def test_two_point_closed_form():
    # w=(0.25,0.75), y=(0,1): mu=0.75,
    # se^2 = 2 * (0.25^2*0.75^2 + 0.75^2*0.25^2) = 4*(3/16)^2
    res = weighted_mean(np.array([0.0, 1.0]), np.array([0.25, 0.75]))
    assert res.estimate == pytest.approx(0.75)
    assert res.se == pytest.approx(np.sqrt(2 * 2 * (0.25 * 0.75) ** 2))
    assert res.ci_low == pytest.approx(0.75 - 1.959964 * res.se)
    assert res.ci_high == pytest.approx(0.75 + 1.959964 * res.se)


def test_affine_equivariance(rng):
    y = rng.normal(size=25)
    w = rng.dirichlet(np.ones(25))
    base = weighted_mean(y, w)
    shifted = weighted_mean(3.0 * y + 7.0, w)
    assert shifted.estimate == pytest.approx(3.0 * base.estimate + 7.0)
    assert shifted.se == pytest.approx(3.0 * base.se)
    assert shifted.n_effective == pytest.approx(base.n_effective)


def test_degenerate_weights_zero_se():
    # All mass on identical outcome values: no variance.
    res = weighted_mean(np.array([2.0, 2.0, 2.0]), np.full(3, 1 / 3))
    assert res.se == 0.0
    assert res.ci_low == res.ci_high == 2.0


def test_length_mismatch():
    with pytest.raises(ValueError, match="length mismatch"):
        weighted_mean(np.ones(3), np.ones(4) / 4)


def test_single_observation_rejected():
    with pytest.raises(ValueError, match="at least 2"):
        weighted_mean(np.array([1.0]), np.array([1.0]))


def test_margin_estimate_scaling(rng):
    p_d = rng.random(30)
    p_r = rng.random(30)
    w = rng.dirichlet(np.ones(30))
    base = weighted_mean(p_d - p_r, w)
    res = margin_estimate(p_d, p_r, w)
    assert res.estimate == pytest.approx(100 * base.estimate)
    assert res.se == pytest.approx(100 * base.se)
    assert res.n_effective == pytest.approx(base.n_effective)
