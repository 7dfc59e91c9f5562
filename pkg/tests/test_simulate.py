import numpy as np
import pytest
from hypothesis import given, strategies as st

from torusdiff.models import VonMisesProcess, WrappedNormalProcess
from torusdiff.simulate import (
    SimulationDiverged, Trajectory, euler_maruyama, euler_maruyama_batch, read_csv, subsample, write_csv,
)
from torusdiff.torus import cmod, mean_resultant_length


class _Bad(VonMisesProcess):
    def _drift(self, pts):
        return np.full_like(pts, np.nan)


def test_zero_drift_zero_diffusion_is_constant():
    m = VonMisesProcess.univariate(0.0, 1.0, 1.0)
    tr = euler_maruyama(m, 0.0, 1.0, 0.01, diffusion=[[0.0]])
    assert np.all(tr.points == 0.0)
    assert tr.n_obs == 101


def test_ode_limit_decays_monotonically():
    m = VonMisesProcess.univariate(0.2, 1.0, 1.0)
    tr = euler_maruyama(m, 0.7, 20.0, 0.001, diffusion=[[0.0]])
    dist = np.abs(cmod(tr.points[:, 0] - 0.2))
    assert np.all(np.diff(dist) <= 0)
    assert dist[-1] < 1e-3


def test_long_run_circular_variance_matches_stationary_law():
    m = WrappedNormalProcess.univariate(0.0, 1.0, 1.0)
    tr = euler_maruyama(m, 0.0, 1e4, 0.01, seed=3)
    # WN(0, 1/2): circular variance 1 - exp(-1/4)
    target = 1 - np.exp(-0.25)
    assert abs((1 - mean_resultant_length(tr.points)[0]) / target - 1) < 0.05


def test_quadratic_variation_recovers_sigma():
    m = WrappedNormalProcess.from_lemma([0.0, 0.0], 1.0, 1.0, 0.5, sigma1=1.5, sigma2=0.7)
    tr = euler_maruyama(m, [0.0, 0.0], 100.0, 1e-3, seed=5)
    inc = tr.increments()
    qv = inc.T @ inc / 100.0
    assert np.allclose(np.diag(qv), np.diag(m.Sigma), rtol=0.05)


def test_seed_determinism_and_batch_consistency():
    m = WrappedNormalProcess.from_lemma([0.5, -0.5], 1.0, 2.0, 0.3)
    a = euler_maruyama(m, [0.0, 0.0], 20.0, 0.002, seed=42, keep_every=7)
    b = euler_maruyama(m, [0.0, 0.0], 20.0, 0.002, seed=42, keep_every=7)
    assert np.array_equal(a.points, b.points)
    batch = euler_maruyama_batch(m, [0.0, 0.0], 20.0, 0.002, [41, 42, 43], keep_every=7)
    assert np.array_equal(batch[1], a.points)
    c = euler_maruyama(m, [0.0, 0.0], 20.0, 0.002, seed=43, keep_every=7)
    assert not np.array_equal(a.points, c.points)


@given(st.floats(-50, 50), st.integers(0, 2**31))
def test_outputs_are_wrapped(theta0, seed):
    m = VonMisesProcess.univariate(1.0, 3.0, 2.5)
    tr = euler_maruyama(m, theta0, 0.5, 0.01, seed=seed)
    assert np.all((tr.points >= -np.pi) & (tr.points < np.pi))


def test_divergence_reports_step():
    m = _Bad(np.array([0.0]), np.array([[1.0]]), 1.0)
    with pytest.raises(SimulationDiverged) as err:
        euler_maruyama(m, 0.0, 1.0, 0.1)
    assert err.value.step == 1


def test_invalid_arguments():
    m = VonMisesProcess.univariate(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        euler_maruyama(m, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        euler_maruyama(m, 0.0, 0.001, 0.01)
    with pytest.raises(ValueError):
        Trajectory(np.array([[0.0]]), 0.1)
    with pytest.raises(ValueError):
        Trajectory(np.array([[0.0], [np.pi]]), 0.1)


def test_subsample_examples():
    pts = cmod(np.linspace(0, 3, 1001))
    tr = Trajectory(pts, 0.001)
    assert np.array_equal(subsample(tr, 1).points, tr.points)
    assert subsample(tr, 4).n_obs == 251
    assert subsample(tr, 50).delta == pytest.approx(0.05)
    with pytest.raises(ValueError):
        subsample(tr, 0)


def test_csv_roundtrip_lossless(tmp_path, rng):
    pts = cmod(rng.normal(size=(50, 2)) * 3)
    tr = Trajectory(pts, 0.05)
    path = tmp_path / "traj.csv"
    write_csv(tr, path)
    assert path.read_text().splitlines()[0] == "t,theta1,theta2"
    again = read_csv(path)
    assert np.array_equal(again.points, tr.points)
    assert again.delta == pytest.approx(0.05, rel=1e-14)


def test_csv_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("time,x\n0,0\n1,0\n")
    with pytest.raises(ValueError):
        read_csv(bad)
    uneven = tmp_path / "uneven.csv"
    uneven.write_text("t,theta1\n0,0\n1,0\n3,0\n")
    with pytest.raises(ValueError):
        read_csv(uneven)
    with pytest.raises(FileNotFoundError):
        read_csv(tmp_path / "missing.csv")
