import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from torusdiff.torus import (
    LatticeBox, ResourceError, as_points, circular_mean, cmod, lattice_enumerate,
    wrap_inplace, wrap_scalar, winding,
)

finite = st.floats(-1e4, 1e4, allow_nan=False)


def test_cmod_examples():
    assert cmod(0.5) == 0.5
    assert cmod(np.pi) == -np.pi
    assert cmod(3 * np.pi) == -np.pi


def test_cmod_negative_inputs_wrap_into_range():
    x = np.array([-np.pi - 1e-9, -7.0, -100.0])
    y = cmod(x)
    assert np.all((y >= -np.pi) & (y < np.pi))


def test_winding_examples():
    assert winding(0.3) == 0
    assert winding(2 * np.pi + 0.3) == 1
    assert winding(-np.pi) == 0


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_non_finite_rejected(bad):
    with pytest.raises(ValueError):
        cmod(bad)
    with pytest.raises(ValueError):
        winding(np.array([0.0, bad]))


@given(arrays(float, st.integers(1, 20), elements=finite))
def test_cmod_range_and_idempotent(x):
    y = cmod(x)
    assert np.all((y >= -np.pi) & (y < np.pi))
    assert np.array_equal(cmod(y), y)


def test_reconstruction_million_points(rng):
    x = rng.uniform(-100, 100, size=(500_000, 2))
    err = np.abs(x - (cmod(x) + 2 * np.pi * winding(x)))
    assert err.max() < 1e-12


@given(arrays(float, st.integers(1, 12), elements=finite))
def test_compiled_wrap_matches_cmod(x):
    y = x.reshape(1, -1).copy()
    wrap_inplace(y)
    assert np.array_equal(y[0], cmod(x))
    assert all(wrap_scalar(v) == c for v, c in zip(x, cmod(x)))


def test_compiled_wrap_boundaries():
    xs = np.array([np.pi, -np.pi, 3 * np.pi, -3 * np.pi, np.nextafter(np.pi, 0), 0.0])
    y = xs.reshape(1, -1).copy()
    wrap_inplace(y)
    assert np.array_equal(y[0], cmod(xs))


def test_circular_mean_examples():
    assert abs(circular_mean([0.1, -0.1])) < 1e-15
    assert circular_mean([np.pi - 0.1, -np.pi + 0.1]) == -np.pi
    assert circular_mean([0.2, 0.2, 0.2]) == pytest.approx(0.2, abs=1e-15)


def test_circular_mean_degenerate_and_empty():
    m, flag = circular_mean([0.0, np.pi], return_degenerate=True)
    assert m == 0.0 and flag
    with pytest.raises(ValueError):
        circular_mean(np.empty((0,)))


@given(
    arrays(float, st.integers(2, 30), elements=st.floats(-0.5, 0.5)),
    st.floats(-10, 10),
)
def test_circular_mean_rotation_equivariant(x, c):
    m0 = circular_mean(x)
    m1 = circular_mean(x + c)
    d = cmod(np.array(m1 - (m0 + c)))
    assert abs(d) < 1e-9


def test_circular_mean_componentwise(rng):
    x = cmod(rng.normal([1.0, -2.0], 0.3, size=(400, 2)))
    m = circular_mean(x)
    assert m.shape == (2,)
    assert np.allclose(m, [1.0, -2.0], atol=0.05)


def test_lattice_examples():
    assert lattice_enumerate(LatticeBox((-1,), (1,))).tolist() == [[-1], [0], [1]]
    assert lattice_enumerate(LatticeBox((0, 0), (0, 0))).tolist() == [[0, 0]]
    ks = lattice_enumerate(LatticeBox.symmetric(1, 2))
    assert len(ks) == 9
    # row-major: last coordinate fastest
    assert ks[:3].tolist() == [[-1, -1], [-1, 0], [-1, 1]]


def test_lattice_cap_and_invalid_box():
    with pytest.raises(ResourceError):
        lattice_enumerate(LatticeBox.symmetric(600, 2))
    with pytest.raises(ResourceError):
        lattice_enumerate(LatticeBox.symmetric(3, 2), cap=10)
    with pytest.raises(ValueError):
        LatticeBox((1,), (0,))


def test_as_points_shapes():
    pts, lead = as_points(np.zeros(5), 1)
    assert pts.shape == (5, 1) and lead == (5,)
    pts, lead = as_points(np.zeros((3, 4, 2)), 2)
    assert pts.shape == (12, 2) and lead == (3, 4)
    with pytest.raises(ValueError):
        as_points(np.zeros((3, 3)), 2)
