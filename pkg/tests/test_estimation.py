import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from torusdiff import densities as dens
from torusdiff import estimation as est
from torusdiff import tpd
from torusdiff.models import MixtureVonMisesProcess, VonMisesProcess, WrappedNormalProcess
from torusdiff.pde import PdeLikelihoodConfig
from torusdiff.simulate import Trajectory, euler_maruyama, subsample
from torusdiff.torus import cmod, mean_resultant_length


def _iid(points, delta=1.0):
    return Trajectory(cmod(np.asarray(points)), delta)


# --- configs -------------------------------------------------------------------

def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        est.OptimizerConfig(fatol=0)
    with pytest.raises(ValueError):
        est.OptimizerConfig(restarts=-1)


# --- high-frequency diffusion estimate -------------------------------------------

def test_sigma_hf_examples():
    assert est.sigma_hf(Trajectory([[0.0], [0.2]], 1.0))[0, 0] == pytest.approx(0.04, rel=1e-14)
    crossing = Trajectory([[np.pi - 0.1], [-np.pi + 0.1]], 0.5)
    assert est.sigma_hf(crossing)[0, 0] == pytest.approx(0.08, rel=1e-12)
    tr = Trajectory([[0.0, 0.0], [0.1, 0.3], [0.2, 0.0]], 0.5)
    assert est.sigma_hf(tr, isotropic=True) == pytest.approx((0.04 + 0.36) / 2 / 2)


def test_sigma_hf_recovers_diffusion():
    m = WrappedNormalProcess(np.zeros(2), np.eye(2), np.diag([1.0, 4.0]))
    tr = euler_maruyama(m, [0.0, 0.0], 10.0, 1e-3, seed=2)
    S = est.sigma_hf(tr)
    assert np.allclose(np.diag(S), [1.0, 4.0], rtol=0.05)
    assert abs(S[0, 1]) < 0.1


# --- stationary MLE ---------------------------------------------------------------

def test_smle_vm_matches_textbook_estimator():
    rng = np.random.default_rng(1)
    x = rng.vonmises(0.7, 2.0, size=10_000)
    res = est.smle(_iid(x), "vm")
    rbar = mean_resultant_length(x)
    oracle = brentq(lambda k: dens.bessel_ratio(k) - rbar, 1e-6, 100)
    assert res.params["kappa"][0] == pytest.approx(oracle, rel=1e-4)
    assert res.converged


def test_smle_uniform_data():
    rng = np.random.default_rng(2)
    res = est.smle(_iid(rng.uniform(-np.pi, np.pi, 10_000)), "vm")
    assert res.params["kappa"][0] < 0.05


def test_smle_wn_location():
    rng = np.random.default_rng(3)
    x = cmod(np.pi / 2 + rng.normal(scale=np.sqrt(0.5), size=10_000))
    res = est.smle(_iid(x), "wn")
    se = np.sqrt(0.5 / 10_000)
    assert abs(cmod(res.params["mu"][0] - np.pi / 2)) < 3 * se
    assert res.params["var"][0] == pytest.approx(0.5, rel=0.05)


def test_smle_needs_ten_points():
    with pytest.raises(ValueError):
        est.smle(_iid(np.zeros(5)), "vm")


def test_smle_mixture_two_components():
    rng = np.random.default_rng(4)
    x = np.concatenate([rng.vonmises(-2.0, 8.0, 3000), rng.vonmises(1.0, 4.0, 7000)])
    res = est.smle(_iid(x), "mivm", m=2)
    order = np.argsort(res.params["M"])
    assert np.allclose(res.params["M"][order], [-2.0, 1.0], atol=0.05)
    assert np.allclose(res.params["weights"][order], [0.3, 0.7], atol=0.03)


# --- starting values -----------------------------------------------------------------

def test_assemble_examples():
    s = est.assemble_wn_start([0.0, 0.0], np.diag([0.5, 0.5]), np.eye(2))
    assert s["alpha1"][0] == pytest.approx(1.0) and s["alpha2"][0] == pytest.approx(1.0)
    assert s["alpha3"][0] == pytest.approx(0.0)
    s1 = est.assemble_wn_start([0.3], [[0.8]], [[2.0]])
    assert s1["alpha"][0] == pytest.approx(2.0 / (2 * 0.8))
    with pytest.raises(ValueError):
        est.assemble_wn_start([0, 0], np.ones((2, 2)), np.eye(2))


def test_assemble_shrinks_invalid_alpha3():
    # strongly correlated S with anisotropic Sigma gives an infeasible alpha3
    S = np.array([[1.0, 0.95], [0.95, 1.0]])
    Sigma = np.diag([4.0, 0.25])
    s = est.assemble_wn_start([0, 0], S, Sigma)
    bound2 = s["alpha1"][0] * s["alpha2"][0]
    assert s["alpha3"][0] ** 2 < bound2
    WrappedNormalProcess.from_lemma([0, 0], s["alpha1"][0], s["alpha2"][0], s["alpha3"][0],
                                    s["sigma1"][0], s["sigma2"][0])


def test_composite_start_recovers_drift_matrix():
    m = WrappedNormalProcess.from_lemma([0.5, -0.5], 1.0, 1.0, 0.5)
    tr = euler_maruyama(m, [0.5, -0.5], 400.0, 1e-3, seed=9, keep_every=100)
    fine = euler_maruyama(m, [0.5, -0.5], 10.0, 1e-3, seed=10)
    res = est.smle(tr, "wn")
    start = est.smle_to_process("wn", res.params, est.sigma_hf(fine))
    assert start["alpha1"][0] == pytest.approx(1.0, rel=0.15)
    assert start["alpha2"][0] == pytest.approx(1.0, rel=0.15)
    assert start["alpha3"][0] == pytest.approx(0.5, rel=0.15)


# --- transforms -------------------------------------------------------------------

@given(
    st.floats(-3.1, 3.1), st.floats(-3.1, 3.1), st.floats(0.05, 10), st.floats(0.05, 10),
    st.floats(0.1, 3), st.floats(0.1, 3), st.floats(-0.9, 0.9), st.floats(-0.95, 0.95),
)
def test_wn2d_transform_roundtrip(m1, m2, a1, a2, s1, s2, rho, frac):
    tr = est.Transform(est.process_groups("wn", 2))
    vals = {"mu": np.array([m1, m2]), "alpha1": np.array([a1]), "alpha2": np.array([a2]),
            "sigma1": np.array([s1]), "sigma2": np.array([s2]), "rho": np.array([rho])}
    vals["alpha3"] = np.array([frac * est._lemma_bound(vals)])
    back = tr.decode(tr.encode(vals))
    for k, v in vals.items():
        assert np.allclose(back[k], v, rtol=1e-12, atol=1e-12)


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=4), st.floats(0.1, 5))
def test_mixture_transform_roundtrip(raw, sigma):
    w = np.array(raw) / np.sum(raw)
    m = w.size
    tr = est.Transform(est.process_groups("mivm", 1, m))
    vals = {"M": np.linspace(-3, 3, m), "A": np.linspace(0.5, 2, m), "weights": w, "sigma": np.array([sigma])}
    back = tr.decode(tr.encode(vals))
    for k, v in vals.items():
        assert np.allclose(back[k], v, rtol=1e-12, atol=1e-12)


def test_transform_fixed_and_unknown():
    tr = est.Transform(est.process_groups("wn", 1), {"sigma": 2.0})
    assert tr.dim == 2
    assert tr.decode(np.zeros(2))["sigma"][0] == 2.0
    with pytest.raises(ValueError):
        est.Transform(est.process_groups("wn", 1), {"nope": 1.0})


@pytest.mark.parametrize("model", [
    WrappedNormalProcess.univariate(0.2, 1.5, 0.7),
    WrappedNormalProcess.from_lemma([0.1, -1.0], 1.0, 2.0, 0.4, sigma1=0.8, sigma2=1.3, rho=0.2),
    VonMisesProcess.univariate(1.0, 2.0, 0.5),
    VonMisesProcess([0.5, -1.0], [[1.5, 0.4], [0.4, 1.0]], 1.1),
    MixtureVonMisesProcess([[-1.0], [2.0]], [[1.0], [3.0]], [0.4, 0.6], 0.9),
])
def test_model_parameter_roundtrip(model):
    again = est.build_model(model.family, est.params_from_model(model))
    pts = np.linspace(-3, 3, 10)[:, None].repeat(model.dim, 1)
    assert np.allclose(again.drift(pts), model.drift(pts), atol=1e-12)


# --- likelihoods and fitting ---------------------------------------------------------

@pytest.fixture(scope="module")
def wn_traj():
    m = WrappedNormalProcess.univariate(np.pi / 2, 1.0, 1.0)
    return m, subsample(euler_maruyama(m, np.pi / 2, 25.0, 1e-3, seed=17), 100)


@pytest.mark.parametrize("kind", ["S", "E", "UE", "EvM", "SO", "USO", "SOvM", "WOU"])
def test_objective_is_sum_of_log_tpds(wn_traj, kind):
    m, tr = wn_traj
    x = tr.points
    direct = np.sum(tpd.log_tpd(kind, m, x[1:], x[:-1], tr.delta)) + m.stationary_logdensity(x[:1])[0]
    assert est.loglik(kind, m, tr) == pytest.approx(direct, rel=1e-13)
    none = est.loglik(kind, m, tr, est.FitConfig(initial="none"))
    assert none == pytest.approx(direct - m.stationary_logdensity(x[:1])[0], rel=1e-13)


def test_floored_transitions_are_counted():
    m = WrappedNormalProcess.univariate(0.0, 1.0, 0.01)
    tr = Trajectory([[0.0], [2.0], [0.0]], 0.01)
    ll, floored = est.loglik("E", m, tr, return_floored=True)
    assert floored == 2
    assert np.isfinite(ll)


@pytest.mark.parametrize("kind", ["E", "SO", "WOU"])
def test_fit_wn_1d(wn_traj, kind):
    _, tr = wn_traj
    res = est.fit(tr, "wn", kind, fixed={"sigma": 1.0})
    assert res.converged
    assert res.params["sigma"][0] == 1.0
    assert abs(cmod(res.params["mu"][0] - np.pi / 2)) < 0.5
    assert 0.2 < res.params["alpha"][0] < 5
    assert res.loglik >= est.loglik(kind, est.build_model("wn", res.start), tr) - 1e-9


def test_fit_stationary_matches_smle(wn_traj):
    _, tr = wn_traj
    sm = est.smle(tr, "wn")
    res = est.fit(tr, "wn", "S", fixed={"sigma": 1.0})
    var = 1.0 / (2 * res.params["alpha"][0])
    assert var == pytest.approx(sm.params["var"][0], rel=1e-3)
    assert res.loglik == pytest.approx(sm.loglik, abs=1e-6)


def test_fit_pde_small_grid(wn_traj):
    _, tr = wn_traj
    cfg = est.FitConfig(pde_config=PdeLikelihoodConfig(Mx=120), optimizer=est.OptimizerConfig(max_evals=300))
    res = est.fit(tr, "wn", "PDE", cfg, fixed={"sigma": 1.0})
    wou = est.fit(tr, "wn", "WOU", fixed={"sigma": 1.0})
    assert res.params["alpha"][0] == pytest.approx(wou.params["alpha"][0], rel=0.2)


def test_fit_mixture_with_smle_weights():
    m = MixtureVonMisesProcess([[-1.5], [1.5]], [[2.0], [2.0]], [0.3, 0.7], 1.0)
    tr = subsample(euler_maruyama(m, 0.0, 100.0, 1e-3, seed=8), 200)
    res = est.fit(tr, "mivm", "SO", fixed={"weights": "smle"}, m=2)
    assert np.array_equal(res.params["weights"], res.start["weights"])
    assert set(res.fixed) == {"weights"}
    assert res.params["M"].size == 2 and res.params["A"].size == 2


def test_fit_wn2d_pins_rho(rng):
    m = WrappedNormalProcess.from_lemma([0.5, -0.5], 1.0, 1.0, 0.5)
    tr = subsample(euler_maruyama(m, [0.5, -0.5], 25.0, 1e-3, seed=5), 100)
    cfg = est.FitConfig(optimizer=est.OptimizerConfig(max_evals=400))
    res = est.fit(tr, "wn", "E", cfg, fixed={"sigma1": 1.0, "sigma2": 1.0})
    assert res.params["rho"][0] == 0.0
    res = est.fit(tr, "wn", "E", cfg, fixed={"sigma1": 1.0, "sigma2": 1.0, "rho": "free"})
    assert "rho" not in res.fixed


def test_fit_rejects_unsupported():
    tr = Trajectory(np.zeros((20, 1)), 0.1)
    with pytest.raises(ValueError):
        est.fit(tr, "vm", "WOU")
    with pytest.raises(ValueError):
        est.fit(tr, "wn", "BOGUS")


def test_result_serialization(wn_traj):
    import json
    _, tr = wn_traj
    res = est.fit(tr, "wn", "E", fixed={"sigma": 1.0})
    d = res.to_dict(include_time=False)
    assert "wall_time" not in d
    json.dumps(d)
    assert isinstance(res.model, WrappedNormalProcess)
