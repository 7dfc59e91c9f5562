"""Langevin diffusion families on the torus.

Every model exposes the same surface:

``drift(theta)``
    Drift vector; accepts a single point or an ``(n, p)`` batch.
``jacobian(theta)``
    Analytic drift Jacobian, ``(p, p)`` or ``(n, p, p)``.
``diffusion_matrix()``
    Constant infinitesimal covariance ``Sigma`` (``sigma^2 I`` for the
    isotropic families).
``stationary_logdensity(theta)``
    Log-density of the stationary law implied by the process parameters.

Parameters are stored in the process parametrization; ``stationary_params``
converts to the parametrization of the stationary distribution.
"""

from dataclasses import dataclass, field
import json

import numpy as np
from numba import njit

from . import densities as dens
from .torus import TWO_PI, as_points, cmod, wrap_scalar


def _as_matrix(x, p=None):
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if p is not None and m.shape != (p, p):
        raise ValueError(f"expected a {p}x{p} matrix, got shape {m.shape}")
    if m.shape[0] != m.shape[1]:
        raise ValueError("matrix must be square")
    return m


def _restore(values, lead, p, theta):
    """Reshape per-point results ``(n, ...)`` to the caller's leading shape."""
    theta = np.asarray(theta)
    tail = values.shape[1:]
    if p == 1 and (theta.ndim == 0 or theta.shape[-1] != 1):
        # scalar-style 1D input: drop the singleton coordinate axes
        tail = tuple(d for d in tail if d != 1)
    return values.reshape(lead + tail)


class DiffusionModel:
    """Shared evaluation plumbing; subclasses implement the ``_drift`` and ``_jac`` kernels."""

    family = None

    @property
    def dim(self):
        return int(np.size(self.mu))

    # -- kernels on (n, p) points, overridden by each family
    def _drift(self, pts):
        raise NotImplementedError

    def _jac(self, pts):
        raise NotImplementedError

    def drift(self, theta):
        pts, lead = as_points(theta, self.dim)
        return _restore(self._drift(pts), lead, self.dim, theta)

    def jacobian(self, theta):
        pts, lead = as_points(theta, self.dim)
        jac = self._jac(pts)
        theta = np.asarray(theta)
        if self.dim == 1 and (theta.ndim == 0 or theta.shape[-1] != 1):
            return jac.reshape(lead)
        return jac.reshape(lead + (self.dim, self.dim))

    def diffusion_matrix(self):
        raise NotImplementedError

    def stationary_logdensity(self, theta):
        raise NotImplementedError

    def stationary_density(self, theta):
        return np.exp(self.stationary_logdensity(theta))

    def sample_stationary(self, n, rng):
        """Draw ``n`` points from the stationary law, ``(n, p)``."""
        return _rejection_sample(self.stationary_logdensity, self.dim, n, rng)

    @property
    def antisymmetry_center(self):
        """Point about which the drift is antisymmetric, or ``None``."""
        return None

    # -- serialization
    def to_dict(self):
        raise NotImplementedError

    def to_json(self):
        return json.dumps(self.to_dict())


def _rejection_sample(logdens, p, n, rng, grid=256):
    # envelope from a grid maximum, inflated for safety
    x = -np.pi + TWO_PI * np.arange(grid) / grid
    pts = np.stack(np.meshgrid(*([x] * p), indexing="ij"), -1).reshape(-1, p)
    bound = np.max(logdens(pts)) + 0.1
    out = np.empty((0, p))
    while out.shape[0] < n:
        m = max(4 * (n - out.shape[0]), 64)
        cand = rng.uniform(-np.pi, np.pi, size=(m, p))
        keep = np.log(rng.uniform(size=m)) < logdens(cand) - bound
        out = np.concatenate([out, cand[keep]])
    return out[:n]


# ---------------------------------------------------------------------------
# von Mises / multivariate von Mises


@dataclass(frozen=True, eq=False)
class VonMisesProcess(DiffusionModel):
    """Langevin diffusion with ``MvM(mu, 2 alpha / sigma^2, 2 A* / sigma^2)`` stationary law.

    ``A`` is positive definite, ``alpha = diag(A)`` and ``A* = diag(alpha) - A``.
    For ``p == 1`` this is the von Mises process ``alpha sin(mu - theta)``.
    """

    mu: np.ndarray
    A: np.ndarray
    sigma: float

    family = "vm"

    def __post_init__(self):
        mu = cmod(np.atleast_1d(np.asarray(self.mu, dtype=float)))
        A = _as_matrix(self.A, mu.size)
        if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
            raise ValueError("A must be symmetric")
        if np.any(np.linalg.eigvalsh(A) <= 0):
            raise ValueError("A must be positive definite")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "sigma", float(self.sigma))

    @classmethod
    def univariate(cls, mu, alpha, sigma):
        return cls(np.array([mu]), np.array([[alpha]]), sigma)

    @property
    def alpha(self):
        return np.diag(self.A).copy()

    @property
    def A_star(self):
        return np.diag(self.alpha) - self.A

    def _drift(self, pts):
        d = cmod(self.mu - pts)
        u, c = np.sin(d), np.cos(d)
        return self.alpha * u - (u @ self.A_star.T) * c

    def _jac(self, pts):
        d = cmod(self.mu - pts)
        u, c = np.sin(d), np.cos(d)
        Astar = self.A_star
        jac = Astar[None] * c[:, :, None] * c[:, None, :]
        diag = -self.alpha * c - (u @ Astar.T) * u
        idx = np.arange(self.dim)
        jac[:, idx, idx] += diag
        return jac

    def diffusion_matrix(self):
        return self.sigma**2 * np.eye(self.dim)

    def stationary_params(self):
        s2 = self.sigma**2
        return dens.MvMParams(self.mu, 2 * self.alpha / s2, 2 * self.A_star / s2)

    def stationary_logdensity(self, theta):
        return dens.mvm_logdensity(theta, self.stationary_params())

    def sample_stationary(self, n, rng):
        prm = self.stationary_params()
        if not np.any(prm.lam):
            return cmod(rng.vonmises(prm.mu, prm.kappa, size=(n, self.dim)))
        return super().sample_stationary(n, rng)

    @property
    def antisymmetry_center(self):
        return self.mu

    def to_dict(self):
        return {"family": self.family, "mu": self.mu.tolist(), "A": self.A.tolist(), "sigma": self.sigma}


# ---------------------------------------------------------------------------
# Wrapped normal


def lemma_matrix(alpha1, alpha2, alpha3, rho=0.0, sigma1=1.0, sigma2=1.0):
    """Drift matrix of a 2D wrapped normal process with a proper stationary law.

    Raises ``ValueError`` naming the violated inequality when
    ``alpha3^2 < rho^2 (alpha1 - alpha2)^2 / 4 + alpha1 alpha2`` fails or the
    basic positivity conditions do not hold.
    """
    if not (alpha1 > 0 and alpha2 > 0):
        raise ValueError("need alpha1 > 0 and alpha2 > 0")
    if not abs(rho) < 1:
        raise ValueError("need |rho| < 1")
    if not (sigma1 > 0 and sigma2 > 0):
        raise ValueError("need sigma1 > 0 and sigma2 > 0")
    bound = rho**2 * (alpha1 - alpha2) ** 2 / 4 + alpha1 * alpha2
    if not alpha3**2 < bound:
        raise ValueError(
            f"alpha3^2 < rho^2 (alpha1 - alpha2)^2 / 4 + alpha1 alpha2 violated ({alpha3**2:.6g} >= {bound:.6g})"
        )
    half = 0.5 * rho * (alpha2 - alpha1)
    A = np.array([[alpha1, sigma1 / sigma2 * (alpha3 + half)],
                  [sigma2 / sigma1 * (alpha3 - half), alpha2]])
    Sigma = np.array([[sigma1**2, rho * sigma1 * sigma2], [rho * sigma1 * sigma2, sigma2**2]])
    S = 0.5 * np.linalg.solve(A, Sigma)
    if not np.allclose(S, S.T, atol=1e-12 * np.abs(S).max()) or np.any(np.linalg.eigvalsh(0.5 * (S + S.T)) <= 0):
        raise ValueError("stationary covariance is not symmetric positive definite")
    return A


validate_A_lemma = lemma_matrix


def lemma_alpha3(A, Sigma):
    """Recover ``alpha3`` from a drift matrix in the lemma form."""
    s1, s2 = np.sqrt(Sigma[0, 0]), np.sqrt(Sigma[1, 1])
    return 0.5 * (A[0, 1] * s2 / s1 + A[1, 0] * s1 / s2)


@njit(cache=True)
def _wn_drift_kernel(pts, mu, A, prec, lattice):
    n, p = pts.shape
    m = lattice.shape[0]
    out = np.empty((n, p))
    d = np.empty(p)
    z = np.empty(p)
    lw = np.empty(m)
    for i in range(n):
        for j in range(p):
            d[j] = wrap_scalar(pts[i, j] - mu[j])
        top = -np.inf
        for k in range(m):
            for j in range(p):
                z[j] = d[j] + TWO_PI * lattice[k, j]
            q = 0.0
            for a in range(p):
                for b in range(p):
                    q += z[a] * prec[a, b] * z[b]
            lw[k] = -0.5 * q
            if lw[k] > top:
                top = lw[k]
        tot = 0.0
        for k in range(m):
            lw[k] = np.exp(lw[k] - top)
            tot += lw[k]
        for j in range(p):
            acc = 0.0
            for k in range(m):
                acc += lw[k] * lattice[k, j]
            z[j] = d[j] + TWO_PI * acc / tot
        for a in range(p):
            s = 0.0
            for b in range(p):
                s += A[a, b] * z[b]
            out[i, a] = -s
    return out


@dataclass(frozen=True, eq=False)
class WrappedNormalProcess(DiffusionModel):
    """Langevin diffusion with ``WN(mu, A^{-1} Sigma / 2)`` stationary law.

    The drift ``A sum_k (mu - theta - 2 k pi) w_k(theta)`` is evaluated with
    winding numbers ``k`` in ``{-r..r}^p`` around ``cmod(theta - mu)``,
    ``r = window`` (1 by default, matching the density default).
    """

    mu: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray
    window: int = 1

    family = "wn"

    def __post_init__(self):
        mu = cmod(np.atleast_1d(np.asarray(self.mu, dtype=float)))
        p = mu.size
        A = _as_matrix(self.A, p)
        Sigma = _as_matrix(self.Sigma, p)
        if not np.allclose(Sigma, Sigma.T) or np.any(np.linalg.eigvalsh(Sigma) <= 0):
            raise ValueError("Sigma must be symmetric positive definite")
        if abs(np.linalg.det(A)) < 1e-14 * max(1.0, np.abs(A).max()) ** p:
            raise ValueError("A must be invertible")
        S = 0.5 * np.linalg.solve(A, Sigma)
        scale = np.abs(S).max()
        if not np.allclose(S, S.T, rtol=0, atol=1e-10 * scale):
            raise ValueError("A^{-1} Sigma / 2 must be symmetric")
        S = 0.5 * (S + S.T)
        if np.any(np.linalg.eigvalsh(S) <= 0):
            raise ValueError("A^{-1} Sigma / 2 must be positive definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "_S", S)
        object.__setattr__(self, "_Sinv", np.linalg.inv(S))
        object.__setattr__(self, "_lattice", dens._window(int(self.window), p))

    @classmethod
    def univariate(cls, mu, alpha, sigma, window=1):
        return cls(np.array([mu]), np.array([[alpha]]), np.array([[sigma**2]]), window)

    @classmethod
    def from_lemma(cls, mu, alpha1, alpha2, alpha3, sigma1=1.0, sigma2=1.0, rho=0.0, window=1):
        A = lemma_matrix(alpha1, alpha2, alpha3, rho, sigma1, sigma2)
        Sigma = np.array([[sigma1**2, rho * sigma1 * sigma2], [rho * sigma1 * sigma2, sigma2**2]])
        return cls(mu, A, Sigma, window)

    @property
    def stationary_cov(self):
        return self._S.copy()

    def _weights(self, pts):
        d = cmod(pts - self.mu)
        lw = dens.winding_logweights(d, np.zeros(self.dim), self._S, self._lattice)
        return d, np.exp(lw)

    def _drift(self, pts):
        return _wn_drift_kernel(np.ascontiguousarray(pts, dtype=float), self.mu, self.A, self._Sinv, self._lattice)

    def _drift_reference(self, pts):
        d, w = self._weights(pts)
        mean_k = w @ self._lattice
        return -(d + TWO_PI * mean_k) @ self.A.T

    def _jac(self, pts):
        _, w = self._weights(pts)
        K = self._lattice
        mean_k = w @ K
        second = np.einsum("nm,mi,mj->nij", w, K, K)
        cov_k = second - mean_k[:, :, None] * mean_k[:, None, :]
        inner = np.eye(self.dim) - 4 * np.pi**2 * cov_k @ self._Sinv
        return -self.A[None] @ inner

    def diffusion_matrix(self):
        return self.Sigma.copy()

    def stationary_params(self):
        return {"mu": self.mu.copy(), "cov": self.stationary_cov}

    def stationary_logdensity(self, theta, strategy=dens.DEFAULT_STRATEGY):
        return dens.wn_logdensity(theta, self.mu, self._S, strategy)

    def sample_stationary(self, n, rng):
        return cmod(rng.multivariate_normal(self.mu, self._S, size=n, method="cholesky"))

    @property
    def antisymmetry_center(self):
        return self.mu

    def to_dict(self):
        return {"family": self.family, "mu": self.mu.tolist(), "A": self.A.tolist(), "Sigma": self.Sigma.tolist()}


# ---------------------------------------------------------------------------
# Jones-Pewsey


def _jp_ratio(a, c):
    """``sinh(a) / (cosh(a) + sinh(a) c)`` and ``(cosh(a) c + sinh(a)) / (cosh(a) + sinh(a) c)``."""
    e = np.exp(-2 * abs(a))
    s = np.sign(a)
    den = (1 + e) + s * (1 - e) * c
    return s * (1 - e) / den, ((1 + e) * c + s * (1 - e)) / den


@dataclass(frozen=True, eq=False)
class JonesPewseyProcess(DiffusionModel):
    """Langevin diffusion with ``JP(mu, 2 alpha / sigma^2, psi sigma^2)`` stationary law.

    Drift ``sinh(2 alpha psi) sin(mu - theta) / (2 psi (cosh(2 alpha psi) +
    sinh(2 alpha psi) cos(mu - theta)))``; the von Mises drift is used when
    ``|psi|`` is below the density's von Mises switch-over.
    """

    mu: float
    alpha: float
    psi: float
    sigma: float

    family = "jp"

    def __post_init__(self):
        if not (self.alpha > 0 and self.sigma > 0):
            raise ValueError("alpha and sigma must be positive")
        object.__setattr__(self, "mu", float(cmod(float(np.squeeze(self.mu)))))
        for name in ("alpha", "psi", "sigma"):
            object.__setattr__(self, name, float(getattr(self, name)))

    @property
    def dim(self):
        return 1

    def _vm_limit(self):
        return abs(self.psi * self.sigma**2) < dens.JP_VM_LIMIT

    def _drift(self, pts):
        d = cmod(self.mu - pts)
        if self._vm_limit():
            return self.alpha * np.sin(d)
        g, _ = _jp_ratio(2 * self.alpha * self.psi, np.cos(d))
        return g * np.sin(d) / (2 * self.psi)

    def _jac(self, pts):
        d = cmod(self.mu - pts)
        if self._vm_limit():
            return (-self.alpha * np.cos(d))[:, :, None]
        g, h = _jp_ratio(2 * self.alpha * self.psi, np.cos(d))
        return (-g * h / (2 * self.psi))[:, :, None]

    def diffusion_matrix(self):
        return np.array([[self.sigma**2]])

    def stationary_params(self):
        s2 = self.sigma**2
        return {"mu": self.mu, "kappa": 2 * self.alpha / s2, "psi": self.psi * s2}

    def stationary_logdensity(self, theta):
        prm = self.stationary_params()
        pts, lead = as_points(theta, 1)
        return dens.jp_logdensity(pts[:, 0], prm["mu"], prm["kappa"], prm["psi"]).reshape(lead)

    @property
    def antisymmetry_center(self):
        return np.array([self.mu])

    def to_dict(self):
        return {"family": self.family, "mu": self.mu, "alpha": self.alpha, "psi": self.psi, "sigma": self.sigma}


# ---------------------------------------------------------------------------
# Mixture of independent von Mises


@dataclass(frozen=True, eq=False)
class MixtureVonMisesProcess(DiffusionModel):
    """Langevin diffusion with ``mivM(M, 2 A / sigma^2, weights)`` stationary law.

    ``M`` and ``A`` are ``(m, p)``; the drift averages the component drifts
    ``alpha_j sin(mu_j - theta)`` with posterior weights ``v_j(theta)``.
    """

    M: np.ndarray
    A: np.ndarray
    weights: np.ndarray
    sigma: float

    family = "mivm"

    def __post_init__(self):
        # flat inputs are read as one angle per component (p = 1)
        M = np.asarray(self.M, dtype=float)
        M = cmod(M.reshape(-1, 1) if M.ndim < 2 else M)
        A = np.asarray(self.A, dtype=float)
        A = A.reshape(-1, 1) if A.ndim < 2 else A
        w =np.atleast_1d(np.asarray(self.weights, dtype=float))
        if M.shape != A.shape:
            raise ValueError("M and A must share shape (m, p)")
        if np.any(A < 0):
            raise ValueError("drift strengths must be nonnegative")
        if w.size != M.shape[0] or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must lie on the simplex, one per component")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def mu(self):
        # dimension carrier for the base class
        return self.M[0]

    def stationary_params(self):
        return dens.MivMParams(self.M, 2 * self.A / self.sigma**2, self.weights)

    def posterior_weights(self, pts):
        """``v_j(theta)``, shape (n, m), normalized in log space."""
        prm = self.stationary_params()
        with np.errstate(divide="ignore"):
            lc = dens.mivm_component_logdensities(pts, prm) + np.log(self.weights)[None]
        return np.exp(lc - dens._logsumexp(lc, axis=1)[:, None])

    def _components(self, pts):
        d = cmod(self.M[None] - pts[:, None, :])
        return d, self.A[None] * np.sin(d)

    def _drift(self, pts):
        v = self.posterior_weights(pts)
        _, g = self._components(pts)
        return np.einsum("nm,nmi->ni", v, g)

    def _jac(self, pts):
        v = self.posterior_weights(pts)
        d, g = self._components(pts)
        b = np.einsum("nm,nmi->ni", v, g)
        jac = (2 / self.sigma**2) * np.einsum("nm,nmi,nmj->nij", v, g, g - b[:, None, :])
        diag = np.einsum("nm,nmi->ni", v, -self.A[None] * np.cos(d))
        idx = np.arange(self.dim)
        jac[:, idx, idx] += diag
        return jac

    def diffusion_matrix(self):
        return self.sigma**2 * np.eye(self.dim)

    def stationary_logdensity(self, theta):
        return dens.mivm_logdensity(theta, self.stationary_params())

    def sample_stationary(self, n, rng):
        prm = self.stationary_params()
        comp = rng.choice(self.weights.size, size=n, p=self.weights)
        return cmod(rng.vonmises(prm.M[comp], prm.K[comp]))

    def to_dict(self):
        return {"family": self.family, "M": self.M.tolist(), "A": self.A.tolist(),
                "weights": self.weights.tolist(), "sigma": self.sigma}


# ---------------------------------------------------------------------------
# Euclidean Ornstein-Uhlenbeck (linear drift, no wrapping)


@dataclass(frozen=True, eq=False)
class OrnsteinUhlenbeckProcess(DiffusionModel):
    """Linear drift ``A (mu - x)`` on R^p; a reference model for the linearized approximations."""

    mu: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray

    family = "ou"

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", _as_matrix(self.A, mu.size))
        object.__setattr__(self, "Sigma", _as_matrix(self.Sigma, mu.size))

    def _drift(self, pts):
        return (self.mu - pts) @ self.A.T

    def _jac(self, pts):
        return np.broadcast_to(-self.A, (pts.shape[0],) + self.A.shape).copy()

    def diffusion_matrix(self):
        return self.Sigma.copy()

    def stationary_logdensity(self, theta):
        pts, lead = as_points(theta, self.dim)
        S = 0.5 * np.linalg.solve(self.A, self.Sigma)
        return dens.gaussian_logpdf(pts - self.mu, 0.5 * (S + S.T)).reshape(lead)

    def to_dict(self):
        return {"family": self.family, "mu": self.mu.tolist(), "A": self.A.tolist(), "Sigma": self.Sigma.tolist()}


# ---------------------------------------------------------------------------

FAMILIES = {
    "vm": VonMisesProcess,
    "wn": WrappedNormalProcess,
    "jp": JonesPewseyProcess,
    "mivm": MixtureVonMisesProcess,
    "ou": OrnsteinUhlenbeckProcess,
}

_FIELDS = {
    "vm": ("mu", "A", "sigma"),
    "wn": ("mu", "A", "Sigma"),
    "jp": ("mu", "alpha", "psi", "sigma"),
    "mivm": ("M", "A", "weights", "sigma"),
    "ou": ("mu", "A", "Sigma"),
}


def model_from_dict(d):
    """Build a model from its JSON record; ``vm`` also accepts a scalar ``alpha`` for p = 1."""
    try:
        family = d["family"]
        cls = FAMILIES[family]
    except KeyError as exc:
        raise ValueError(f"unknown or missing model family in {d!r}") from exc
    d = dict(d)
    if family == "vm" and "A" not in d and "alpha" in d:
        alpha = np.atleast_1d(np.asarray(d.pop("alpha"), dtype=float))
        d["A"] = np.diag(alpha)
    if family == "wn" and "A" not in d and "alpha" in d:
        # shorthand: scalar alpha (p = 1) or lemma triple (p = 2), sigma scalar or per-axis
        mu = np.atleast_1d(np.asarray(d["mu"], dtype=float))
        alpha = np.atleast_1d(np.asarray(d.pop("alpha"), dtype=float))
        sig = np.broadcast_to(np.atleast_1d(np.asarray(d.pop("sigma", 1.0), dtype=float)), mu.shape)
        if mu.size == 1:
            return WrappedNormalProcess.univariate(mu[0], alpha[0], sig[0], d.get("window", 1))
        return WrappedNormalProcess.from_lemma(mu, *alpha, sigma1=sig[0], sigma2=sig[1], rho=d.get("rho", 0.0),
                                               window=d.get("window", 1))
    if family == "mivm" and "K" in d and "A" not in d:
        d["A"] = np.asarray(d.pop("K"), dtype=float) * float(d["sigma"]) ** 2 / 2
    missing = [f for f in _FIELDS[family] if f not in d]
    if missing:
        raise ValueError(f"model record for {family!r} lacks fields {missing}")
    return cls(**{f: d[f] for f in _FIELDS[family]})


def model_from_json(text):
    return model_from_dict(json.loads(text))
