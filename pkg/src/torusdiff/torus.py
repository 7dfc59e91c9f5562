"""Angular arithmetic on the flat torus [-pi, pi)^p."""

from dataclasses import dataclass
import itertools

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi

#: default cap on the number of lattice vectors a box may enumerate
LATTICE_CAP = 10**6


class ResourceError(RuntimeError):
    """Raised when an enumeration would exceed its configured size cap."""


def _finite(x):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite angle")
    return x


def _wind_and_wrap(x):
    w = np.floor((x + np.pi) / TWO_PI)
    c = x - TWO_PI * w
    # the floor and the subtraction round independently; keep them consistent
    hi = c >= np.pi
    lo = c < -np.pi
    if np.any(hi) or np.any(lo):
        w = w + hi - lo
        c = x - TWO_PI * w
        c = np.where(c >= np.pi, -np.pi, c)
    return w, c


@njit(cache=True)
def wrap_scalar(x):
    """Scalar ``cmod`` with the same rounding fix-up as the array version."""
    w = np.floor((x + np.pi) / TWO_PI)
    c = x - TWO_PI * w
    if c >= np.pi or c < -np.pi:
        if c >= np.pi:
            w += 1.0
        else:
            w -= 1.0
        c = x - TWO_PI * w
        if c >= np.pi:
            c = -np.pi
    return c


@njit(cache=True)
def wrap_inplace(x):
    """Wrap a 2D array in place (compiled; no finiteness check)."""
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            x[i, j] = wrap_scalar(x[i, j])


def cmod(x):
    """Wrap real angles into their principal values in [-pi, pi).

    Equivalent to ``((x + pi) mod 2pi) - pi`` with a floor-based remainder,
    so negative inputs wrap correctly.
    """
    x = _finite(x)
    return _wind_and_wrap(x)[1]


def winding(x):
    """Winding number ``floor((x + pi) / 2pi)`` so that ``x = cmod(x) + 2pi*winding(x)``."""
    x = _finite(x)
    return _wind_and_wrap(x)[0].astype(np.int64)


def as_points(theta, p):
    """Coerce ``theta`` into an ``(n, p)`` array of points.

    Returns the array and the leading shape that callers should restore.
    For ``p == 1`` a trailing singleton axis is optional.
    """
    theta = np.asarray(theta, dtype=float)
    if p == 1 and (theta.ndim == 0 or theta.shape[-1] != 1):
        lead = theta.shape
        return theta.reshape(-1, 1), lead
    if theta.ndim == 0 or theta.shape[-1] != p:
        raise ValueError(f"expected points of dimension {p}, got shape {theta.shape}")
    lead = theta.shape[:-1]
    return theta.reshape(-1, p), lead


def circular_mean(sample, return_degenerate=False):
    """Componentwise circular mean ``atan2(sum sin, sum cos)`` wrapped to [-pi, pi).

    Parameters
    ----------
    sample : array_like, shape (n,) or (n, p)
    return_degenerate : bool
        Also return a boolean array flagging components whose resultant
        length vanishes. Those components are reported as 0.
    """
    x = np.asarray(sample, dtype=float)
    if x.shape[0] == 0:
        raise ValueError("empty sample")
    s = np.sin(x).sum(axis=0)
    c = np.cos(x).sum(axis=0)
    degenerate = np.hypot(s, c) <= 1e-12 * x.shape[0]
    mean = cmod(np.arctan2(s, c))
    mean = np.where(degenerate, 0.0, mean)
    if np.ndim(mean) == 0:
        mean = float(mean)
        degenerate = bool(degenerate)
    if return_degenerate:
        return mean, degenerate
    return mean


def mean_resultant_length(sample):
    x = np.asarray(sample, dtype=float)
    return np.hypot(np.sin(x).mean(axis=0), np.cos(x).mean(axis=0))


@dataclass(frozen=True)
class LatticeBox:
    """Integer box ``lower <= k <= upper`` (componentwise)."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(int(v) for v in np.atleast_1d(self.lower))
        hi = tuple(int(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("box bounds differ in dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def symmetric(cls, radius, p):
        return cls((-radius,) * p, (radius,) * p)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def volume(self):
        return int(np.prod([b - a + 1 for a, b in zip(self.lower, self.upper)]))


def lattice_enumerate(box, cap=LATTICE_CAP):
    """All integer vectors in ``box`` in row-major order, as an ``(m, p)`` array."""
    if box.volume > cap:
        raise ResourceError(f"lattice box holds {box.volume} vectors (cap {cap})")
    ranges = [range(a, b + 1) for a, b in zip(box.lower, box.upper)]
    return np.array(list(itertools.product(*ranges)), dtype=np.int64).reshape(-1, box.dim)
