import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import multivariate_normal, norm

from torusdiff import densities as dens
from torusdiff.torus import LatticeBox, winding


def _series_i(nu, x, terms=50):
    # power series for the modified Bessel function of the first kind
    term = (x / 2) ** nu / math.factorial(nu)
    total = 0.0
    for k in range(terms):
        total += term
        term *= (x / 2) ** 2 / ((k + 1) * (k + 1 + nu))
    return total


def _wn_brute_1d(theta, mu, s2, K=10):
    return sum(norm.pdf(theta - mu + 2 * k * np.pi, scale=np.sqrt(s2)) for k in range(-K, K + 1))


def _wn_brute_2d(theta, mu, cov, K=10):
    mvn = multivariate_normal(mean=np.zeros(2), cov=cov)
    tot = 0.0
    for k1 in range(-K, K + 1):
        for k2 in range(-K, K + 1):
            tot += mvn.pdf(np.asarray(theta) - mu + 2 * np.pi * np.array([k1, k2]))
    return tot


def _trap_1d(f, n=1000):
    x = -np.pi + 2 * np.pi * np.arange(n) / n
    return f(x).sum() * 2 * np.pi / n


def _trap_2d(f, n=200):
    x = -np.pi + 2 * np.pi * np.arange(n) / n
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    return f(pts).sum() * (2 * np.pi / n) ** 2


# --- Bessel helpers ---------------------------------------------------------

@pytest.mark.parametrize("x", [0.0, 0.3, 1.0, 4.0, 10.0, 14.9, 15.1, 25.0])
def test_bessel_against_series(x):
    assert np.exp(dens.log_i0(x)) == pytest.approx(_series_i(0, x), rel=1e-12)
    assert dens.bessel_ratio(x) == pytest.approx(_series_i(1, x) / _series_i(0, x), rel=1e-12, abs=1e-300)


def _bisect_ratio(r):
    lo, hi = 0.0, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _series_i(1, mid, 150) / _series_i(0, mid, 150) < r:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_moment_match_unit_variance_bisection_oracle():
    # root of A1(k) = exp(-1/2), frozen from a series-based bisection
    oracle = _bisect_ratio(math.exp(-0.5))
    assert oracle == pytest.approx(1.5427747222273704, rel=1e-12)
    assert dens.vm_moment_match(1.0) == pytest.approx(oracle, rel=1e-9)


@pytest.mark.parametrize("s", [0.1, 1.0, 5.0])
def test_moment_match_inverse_property(s):
    k = dens.vm_moment_match(s)
    assert abs(dens.bessel_ratio(k) - math.exp(-s / 2)) < 1e-9


def test_moment_match_limits():
    assert dens.vm_moment_match(200.0) < 1e-20
    with pytest.warns(dens.NumericalWarning):
        assert dens.vm_moment_match(0.0) == dens.KAPPA_CAP
    with pytest.raises(ValueError):
        dens.vm_moment_match(-1.0)


@given(st.floats(0.0, 0.999))
def test_inverse_ratio_roundtrip(r):
    k = dens.inverse_bessel_ratio(r)
    assert abs(dens.bessel_ratio(k) - r) < 1e-9


# --- wrapped normal -----------------------------------------------------------

def test_wn_uniform_limit():
    th = np.linspace(-np.pi, np.pi, 7, endpoint=False)
    strat = dens.WnEvalStrategy("adaptive", alpha=1e-10)
    assert np.allclose(dens.wn_density(th, 0.0, 1e4, strat), 1 / (2 * np.pi), atol=1e-6)


def test_wn_1d_unit_variance_origin():
    oracle = _wn_brute_1d(0.0, 0.0, 1.0)
    assert oracle == pytest.approx(0.39894228253600367, rel=1e-14)
    assert dens.wn_density(0.0, 0.0, 1.0) == pytest.approx(oracle, rel=1e-12)


def test_wn_2d_corner_against_lattice_sum():
    oracle = _wn_brute_2d([np.pi, np.pi], np.zeros(2), np.eye(2))
    assert oracle == pytest.approx(3.292800302719707e-05, rel=1e-12)
    assert dens.wn_density([np.pi, np.pi], [0.0, 0.0], np.eye(2)) == pytest.approx(oracle, rel=1e-8)


def test_wn_correlated_2d_against_lattice_sum(rng):
    cov = np.array([[0.8, 0.3], [0.3, 0.5]])
    mu = np.array([0.4, -2.0])
    for th in rng.uniform(-np.pi, np.pi, size=(10, 2)):
        assert dens.wn_density(th, mu, cov) == pytest.approx(_wn_brute_2d(th, mu, cov), rel=1e-8)


@pytest.mark.parametrize("sigma", [0.2, 0.7, 1.0, 1.4])
def test_default_window_matches_wide_lattice(sigma):
    th = np.linspace(-np.pi, np.pi, 101)
    wide = dens.wn_density(th, 0.3, sigma**2, dens.WnEvalStrategy(radius=10))
    assert np.max(np.abs(dens.wn_density(th, 0.3, sigma**2) / wide - 1)) < 1e-8


def test_singular_covariance_rejected():
    with pytest.raises(ValueError):
        dens.wn_density([0.0, 0.0], [0.0, 0.0], np.array([[1.0, 1.0], [1.0, 1.0]]))


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.05, 3.0), st.integers(-3, 3))
def test_wn_periodic_in_theta_and_mu(th, mu, s2, k):
    base = dens.wn_density(th, mu, s2)
    assert dens.wn_density(th + 2 * np.pi * k, mu, s2) == pytest.approx(base, rel=1e-12)
    assert dens.wn_density(th, mu - 2 * np.pi * k, s2) == pytest.approx(base, rel=1e-12)


@given(st.floats(-3, 3), st.floats(0.05, 6.0))
def test_wider_window_never_smaller(th, s2):
    vals = [dens.wn_density(th, 0.0, s2, dens.WnEvalStrategy(radius=r)) for r in range(4)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_strategies_agree_when_concentrated():
    th = np.linspace(-1, 1, 9)
    ref = dens.wn_density(th, 0.0, 0.05)
    for kind in ("high_concentration", "adaptive"):
        assert np.allclose(dens.wn_density(th, 0.0, 0.05, dens.WnEvalStrategy(kind)), ref, rtol=1e-10)
    vm = dens.wn_density(th, 0.0, 0.05, dens.WnEvalStrategy("vm_moment_match"))
    core = np.abs(th) <= 0.5
    assert np.allclose(vm[core], ref[core], rtol=0.05)


def test_invalid_strategy():
    with pytest.raises(ValueError):
        dens.WnEvalStrategy("nope")
    with pytest.raises(ValueError):
        dens.WnEvalStrategy("adaptive", alpha=1.5)


# --- winding weights -----------------------------------------------------------

def test_weights_symmetric_at_mean():
    w = dens.winding_weights([0.7], [0.7], [[2.0]], LatticeBox.symmetric(3, 1))
    for k in range(1, 4):
        assert w[(k,)] == pytest.approx(w[(-k,)], rel=1e-12)


def test_weights_concentration_limit():
    w = dens.winding_weights([0.1, 0.2], [0.1, 0.2], 1e-6 * np.eye(2), LatticeBox.symmetric(1, 2))
    assert w[(0, 0)] == pytest.approx(1.0, abs=1e-12)


def test_weights_against_gaussian_oracle():
    raw = np.array([norm.pdf(2 - 0 + 2 * k * np.pi, scale=np.sqrt(0.5)) for k in range(-10, 11)])
    oracle = raw / raw.sum()
    w = dens.winding_weights([2.0], [0.0], [[0.5]], LatticeBox.symmetric(10, 1))
    got = np.array([w[(k,)] for k in range(-10, 11)])
    assert np.allclose(got, oracle, rtol=1e-10, atol=1e-300)


def test_weights_underflow_fallback():
    w = dens.winding_weights([0.0], [50.0], [[1e-8]], LatticeBox.symmetric(1, 1))
    target = int(winding(50.0 - 0.0))
    assert target not in (-1, 0, 1) or w[(target,)] == 1.0
    assert sum(w.values()) in (0.0, 1.0)


@given(st.floats(-3, 3), st.floats(-20, 20), st.floats(0.05, 5.0))
def test_weights_sum_to_one_and_peak(theta, mean, var):
    box = LatticeBox.symmetric(6, 1)
    w = dens.winding_weights([theta], [mean], [[var]], box)
    assert abs(sum(w.values()) - 1) < 1e-12
    best = max(w, key=w.get)
    assert best == (int(winding(mean - theta)),)


# --- other families ---------------------------------------------------------------

def test_vm_uniform_when_kappa_zero():
    assert np.allclose(dens.vm_density(np.linspace(-3, 3, 5), 1.0, 0.0), 1 / (2 * np.pi))


def test_mvm_without_interaction_factorizes(rng):
    par = dens.MvMParams([0.5, -1.0], [2.0, 0.7])
    pts = rng.uniform(-np.pi, np.pi, size=(100, 2))
    prod = dens.vm_logdensity(pts[:, 0], 0.5, 2.0) + dens.vm_logdensity(pts[:, 1], -1.0, 0.7)
    assert np.max(np.abs(np.expm1(dens.mvm_logdensity(pts, par) - prod))) < 1e-12


def test_mvm_unimodality_flag():
    assert dens.MvMParams([0, 0], [2.0, 2.0], [[0, 1.0], [1.0, 0]]).unimodal
    assert not dens.MvMParams([0, 0], [1.0, 1.0], [[0, 3.0], [3.0, 0]]).unimodal
    with pytest.raises(ValueError):
        dens.MvMParams([0, 0], [1.0, 1.0], [[1.0, 0], [0, 0]])


def test_jp_small_psi_matches_vm():
    th = np.linspace(-np.pi, np.pi, 50)
    assert np.allclose(dens.jp_density(th, 0.3, 1.5, 1e-8), dens.vm_density(th, 0.3, 1.5), rtol=1e-6)
    # just above the switch the quadrature route still agrees closely
    assert np.allclose(dens.jp_density(th, 0.3, 1.5, 2e-4), dens.vm_density(th, 0.3, 1.5), rtol=1e-3)


def test_jp_cardioid_special_case():
    # psi = 1 gives the cardioid 1 + tanh(kappa) cos(theta - mu) over 2 pi
    th = np.linspace(-3, 3, 11)
    k = 0.8
    ref = (1 + np.tanh(k) * np.cos(th)) / (2 * np.pi)
    assert np.allclose(dens.jp_density(th, 0.0, k, 1.0), ref, rtol=1e-10)


def test_jp_clamped_base_warns():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val = dens.jp_density(np.array([np.pi]), 0.0, 40.0, 1.0)
    assert val[0] >= 0.0


@pytest.mark.parametrize("f", [
    lambda x: dens.vm_density(x, 0.4, 3.0),
    lambda x: dens.wn_density(x, -1.0, 1.7),
    lambda x: dens.jp_density(x, 2.0, 1.2, -0.6),
    lambda x: dens.jp_density(x, 2.0, 1.2, 0.9),
    lambda x: dens.mivm_density(x, dens.MivMParams([[-1.0], [1.5]], [[3.0], [1.0]], [0.3, 0.7])),
])
def test_normalization_1d(f):
    assert abs(_trap_1d(f) - 1) < 1e-4


@pytest.mark.parametrize("f", [
    lambda x: dens.wn_density(x, [0.4, -2.0], np.array([[0.8, 0.3], [0.3, 0.5]])),
    lambda x: np.exp(dens.mvm_logdensity(x, dens.MvMParams([0.0, 1.0], [1.5, 2.0], [[0, 0.8], [0.8, 0]]))),
    lambda x: dens.mivm_density(x, dens.MivMParams([[0, 0], [2, -2]], [[1, 2], [3, 0.5]], [0.5, 0.5])),
])
def test_normalization_2d(f):
    assert abs(_trap_2d(f) - 1) < 1e-4


def test_mivm_validation():
    with pytest.raises(ValueError):
        dens.MivMParams([[0.0], [1.0]], [[1.0], [1.0]], [0.6, 0.6])
    with pytest.raises(ValueError):
        dens.MivMParams([[0.0]], [[-1.0]], [1.0])
