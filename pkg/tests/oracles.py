"""Independent reference implementations shared by the unit and acceptance tests."""

import numpy as np
from scipy.integrate import simpson
from scipy.stats import norm

from torusdiff.models import WrappedNormalProcess


def taylor_expm(M, terms=60):
    """Scaled and squared Taylor series: an oracle independent of the closed form."""
    M = np.asarray(M, dtype=float)
    s = max(0, int(np.ceil(np.log2(max(np.abs(M).sum(), 1.0)))) + 1)
    X = M / 2**s
    out = np.eye(len(M))
    term = np.eye(len(M))
    for k in range(1, terms):
        term = term @ X / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def simpson_gamma(A, Sigma, t, nodes=10_001):
    s = np.linspace(0, t, nodes)
    E = np.stack([taylor_expm(-si * A, 30) for si in s])
    vals = E @ Sigma @ np.swapaxes(E, 1, 2)
    return simpson(vals, x=s, axis=0)


def random_lemma(rng):
    a1, a2 = rng.uniform(0.2, 3, 2)
    rho = rng.uniform(-0.8, 0.8)
    bound = np.sqrt(rho**2 * (a1 - a2) ** 2 / 4 + a1 * a2)
    a3 = rng.uniform(-0.95, 0.95) * bound
    s1, s2 = rng.uniform(0.3, 2, 2)
    return WrappedNormalProcess.from_lemma([0, 0], a1, a2, a3, sigma1=s1, sigma2=s2, rho=rho)


def wn_brute_1d(theta, mu, s2, K=10):
    """Wrapped normal density by direct summation over ``k = -K..K``."""
    return sum(norm.pdf(theta - mu + 2 * k * np.pi, scale=np.sqrt(s2)) for k in range(-K, K + 1))
