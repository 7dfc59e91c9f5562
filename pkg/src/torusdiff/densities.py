"""Toroidal densities: wrapped normal, von Mises families, Jones-Pewsey and
mixtures of independent von Mises, plus winding-number weights.

All densities accept points as ``(n, p)`` arrays (a trailing axis is optional
when ``p == 1``) and return arrays with the leading shape of the input.
"""

from dataclasses import dataclass, field
import functools
import warnings

import numpy as np
from scipy.special import i0e, i1e, ndtri

from .torus import TWO_PI, LatticeBox, as_points, cmod, lattice_enumerate, winding

LOG_2PI = np.log(TWO_PI)


class NumericalWarning(UserWarning):
    """A numerical safeguard was triggered (clamp, cap or fallback)."""


# ---------------------------------------------------------------------------
# Bessel helpers


def log_i0(kappa):
    kappa = np.asarray(kappa, dtype=float)
    return np.log(i0e(kappa)) + np.abs(kappa)


def bessel_ratio(kappa):
    """``A1(kappa) = I1(kappa) / I0(kappa)``."""
    kappa = np.asarray(kappa, dtype=float)
    return i1e(kappa) / i0e(kappa)


KAPPA_CAP = 1e8


def inverse_bessel_ratio(rho, tol=1e-10, max_iter=100):
    """Solve ``A1(kappa) = rho`` for ``kappa >= 0`` by safeguarded Newton.

    ``rho`` in [0, 1); values at or beyond the reach of double precision are
    capped at ``KAPPA_CAP`` with a warning.
    """
    rho = np.asarray(rho, dtype=float)
    scalar = rho.ndim == 0
    r = np.atleast_1d(rho).astype(float)
    if np.any(r < 0) or np.any(~np.isfinite(r)):
        raise ValueError("rho must lie in [0, 1)")
    out = np.zeros_like(r)
    capped = r >= 1.0 - 0.5 / KAPPA_CAP
    out[capped] = KAPPA_CAP
    todo = ~capped & (r > 0)
    if np.any(todo):
        rr = r[todo]
        lo = np.zeros_like(rr)
        hi = 1.0 / (1.0 - rr) + 1.0
        while True:
            short = bessel_ratio(hi) < rr
            if not np.any(short):
                break
            hi = np.where(short, 2 * hi, hi)
        # Best-Fisher starting value, then Newton kept inside the bracket
        with np.errstate(divide="ignore", over="ignore"):
            k = np.where(rr < 0.53, 2 * rr + rr**3 + 5 * rr**5 / 6,
                         np.where(rr < 0.85, -0.4 + 1.39 * rr + 0.43 / (1 - rr),
                                  1 / (rr**3 - 4 * rr**2 + 3 * rr)))
        k = np.clip(k, lo, hi)
        for _ in range(max_iter):
            a = bessel_ratio(k)
            f = a - rr
            lo = np.where(f < 0, k, lo)
            hi = np.where(f > 0, k, hi)
            deriv = 1.0 - a / np.maximum(k, 1e-300) - a * a
            deriv = np.where(k > 0, deriv, 0.5)
            step = f / np.maximum(deriv, 1e-300)
            k_new = k - step
            outside = (k_new <= lo) | (k_new >= hi)
            k_new = np.where(outside, 0.5 * (lo + hi), k_new)
            done = np.abs(k_new - k) <= tol * np.maximum(1.0, k_new)
            k = k_new
            if np.all(done):
                break
        out[todo] = k
    if np.any(capped):
        warnings.warn("concentration capped at 1e8", NumericalWarning, stacklevel=2)
    return float(out[0]) if scalar else out.reshape(rho.shape)


def vm_moment_match(sigma2):
    """Concentration of the von Mises matching ``WN(mu, sigma2)``: ``A1^{-1}(exp(-sigma2/2))``."""
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 < 0):
        raise ValueError("variance must be nonnegative")
    return inverse_bessel_ratio(np.exp(-0.5 * sigma2))


# ---------------------------------------------------------------------------
# Wrapped normal


@dataclass(frozen=True)
class WnEvalStrategy:
    """How the wrapped-normal series is truncated.

    ``kind`` is one of

    * ``"fixed_window"`` (default): sum over ``k`` in ``{-r..r}^p`` around the
      wrapped residual ``cmod(theta - mu)``; ``r = radius`` (1 by default).
    * ``"high_concentration"``: single term at the closest winding number.
    * ``"vm_moment_match"``: product of matched von Mises marginals (exact in
      law only for diagonal covariances).
    * ``"adaptive"``: Bonferroni window with level ``alpha``.
    """

    kind: str = "fixed_window"
    radius: int = 1
    alpha: float = 1e-10

    def __post_init__(self):
        if self.kind not in ("fixed_window", "high_concentration", "vm_moment_match", "adaptive"):
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.kind == "adaptive" and not 0 < self.alpha < 1:
            raise ValueError("adaptive alpha must lie in (0, 1)")
        if self.radius < 0:
            raise ValueError("radius must be nonnegative")


DEFAULT_STRATEGY = WnEvalStrategy()


@functools.lru_cache(maxsize=64)
def _window(radius, p):
    return lattice_enumerate(LatticeBox.symmetric(radius, p)).astype(float)


def _logsumexp(x, axis=-1):
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out


def _prec_logdet(cov):
    """Precision matrices and log-determinants for (p,p) or (n,p,p) covariances."""
    cov = np.asarray(cov, dtype=float)
    p = cov.shape[-1]
    if p == 1:
        var = cov[..., 0, 0]
        if np.any(var <= 0) or not np.all(np.isfinite(var)):
            raise ValueError("covariance is not positive definite")
        return (1.0 / var)[..., None, None], np.log(var)
    if p == 2:
        a, b, c = cov[..., 0, 0], cov[..., 0, 1], cov[..., 1, 1]
        det = a * c - b * b
        if np.any(det <= 0) or np.any(a <= 0) or not np.all(np.isfinite(det)):
            raise ValueError("covariance is not positive definite")
        prec = np.stack([np.stack([c, -b], -1), np.stack([-b, a], -1)], -2) / det[..., None, None]
        return prec, np.log(det)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance is not positive definite") from exc
    sign, logdet = np.linalg.slogdet(cov)
    return np.linalg.inv(cov), logdet


def _quad_shared(z, prec):
    """``z' prec z`` over the last axis for one shared precision matrix."""
    p = z.shape[-1]
    if p == 1:
        return z[..., 0] ** 2 * prec[0, 0]
    if p == 2:
        z0, z1 = z[..., 0], z[..., 1]
        return prec[0, 0] * z0 * z0 + 2 * prec[0, 1] * z0 * z1 + prec[1, 1] * z1 * z1
    return np.einsum("...i,ij,...j->...", z, prec, z)


def gaussian_logpdf(resid, cov):
    """Log-density of ``N(0, cov)`` at residuals ``resid`` (n, p); cov (p,p) or (n,p,p)."""
    resid = np.asarray(resid, dtype=float)
    p = resid.shape[-1]
    prec, logdet = _prec_logdet(cov)
    if prec.ndim == 2:
        q = np.einsum("...i,ij,...j->...", resid, prec, resid)
    else:
        q = np.einsum("ni,nij,nj->n", resid, prec, resid)
    return -0.5 * (q + logdet + p * LOG_2PI)


def wn_logpdf_resid(resid, cov, lattice):
    """Log wrapped-normal density from residuals ``resid`` (n, p).

    Sums ``phi_cov(resid + 2 pi k)`` over the rows ``k`` of ``lattice``.
    ``cov`` is shared (p, p) or per-row (n, p, p).
    """
    resid = np.asarray(resid, dtype=float)
    n, p = resid.shape
    prec, logdet = _prec_logdet(cov)
    z = resid[:, None, :] + TWO_PI * lattice[None, :, :]
    if prec.ndim == 2:
        q = _quad_shared(z, prec)
    elif p == 1:
        q = z[..., 0] ** 2 * prec[:, None, 0, 0]
    else:
        q = np.einsum("nki,nij,nkj->nk", z, prec, z)
    return _logsumexp(-0.5 * q, axis=1) - 0.5 * (logdet + p * LOG_2PI)


def _adaptive_lattice(cov, alpha, p):
    sd = np.sqrt(np.max(np.diagonal(np.asarray(cov), axis1=-2, axis2=-1).reshape(-1, p), axis=0))
    z = -ndtri(alpha / (2 * p))
    upper = 1 + np.floor(z * sd / TWO_PI).astype(int)
    return lattice_enumerate(LatticeBox(tuple(-upper), tuple(upper))).astype(float)


def wn_logdensity(theta, mu, cov, strategy=DEFAULT_STRATEGY):
    """Log-density of ``WN(mu, cov)`` at ``theta``.

    ``mu`` may be a single point or one point per row of ``theta``; ``cov``
    may be a single matrix or one per row.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    p = cov.shape[-1]
    pts, lead = as_points(theta, p)
    mu = np.asarray(mu, dtype=float)
    mus = mu.reshape(-1, p)
    if cov.ndim == 3 and cov.shape[0] != pts.shape[0]:
        raise ValueError("per-point covariances must match the number of points")
    resid = cmod(pts - mus)
    kind = strategy.kind
    if kind == "fixed_window":
        out = wn_logpdf_resid(resid, cov, _window(strategy.radius, p))
    elif kind == "high_concentration":
        out = wn_logpdf_resid(resid, cov, _window(0, p))
    elif kind == "adaptive":
        out = wn_logpdf_resid(resid, cov, _adaptive_lattice(cov, strategy.alpha, p))
    else:
        var = np.diagonal(cov, axis1=-2, axis2=-1).reshape(-1, p)
        kappa = vm_moment_match(var)
        out = np.sum(kappa * np.cos(resid) - LOG_2PI - log_i0(kappa), axis=1)
    return out.reshape(lead)


def wn_density(theta, mu, cov, strategy=DEFAULT_STRATEGY):
    """Density of ``WN(mu, cov)`` at ``theta`` (see :func:`wn_logdensity`)."""
    return np.exp(wn_logdensity(theta, mu, cov, strategy))


def winding_logweights(theta, mu, cov, lattice):
    """Log of ``w_k(theta)`` for each lattice row ``k``; shape (n, m).

    ``w_k(theta)`` is proportional to ``phi_cov(theta - mu + 2 pi k)``.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    p = cov.shape[-1]
    pts, _ = as_points(theta, p)
    prec, _ = _prec_logdet(cov)
    z = (pts - np.asarray(mu, dtype=float).reshape(-1, p))[:, None, :] + TWO_PI * lattice[None]
    lw = -0.5 * _quad_shared(z, prec)
    return lw - _logsumexp(lw, axis=1)[:, None]


def winding_weights(theta, mean, cov, box):
    """Distribution of the winding number of ``X ~ N(mean, cov)`` given ``cmod(X) = theta``.

    Returns a dict mapping lattice tuples in ``box`` to weights summing to one.
    If every raw weight underflows, all mass goes to ``winding(mean - theta)``.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    p = cov.shape[-1]
    theta = np.asarray(theta, dtype=float).reshape(p)
    mean = np.asarray(mean, dtype=float).reshape(p)
    ks = lattice_enumerate(box)
    lw = winding_logweights(theta[None], mean, cov, ks.astype(float))[0]
    w = np.exp(lw)
    if not np.all(np.isfinite(w)) or w.sum() == 0:
        w = np.zeros(len(ks))
        target = tuple(np.atleast_1d(winding(mean - theta)))
        hit = [i for i, k in enumerate(map(tuple, ks)) if k == target]
        if hit:
            w[hit[0]] = 1.0
    else:
        w = w / w.sum()
    return {tuple(int(v) for v in k): float(wk) for k, wk in zip(ks, w)}


# ---------------------------------------------------------------------------
# von Mises families


def vm_logdensity(theta, mu, kappa):
    theta = np.asarray(theta, dtype=float)
    if np.any(np.asarray(kappa) < 0):
        raise ValueError("kappa must be nonnegative")
    return kappa * np.cos(theta - mu) - LOG_2PI - log_i0(kappa)


def vm_density(theta, mu, kappa):
    """``exp(kappa cos(theta - mu)) / (2 pi I0(kappa))``."""
    return np.exp(vm_logdensity(theta, mu, kappa))


@dataclass(frozen=True)
class MvMParams:
    """Multivariate von Mises with sine interaction.

    ``lam`` is symmetric with zero diagonal. ``unimodal`` reports the
    sufficient condition ``diag(kappa) - lam`` positive definite.
    """

    mu: np.ndarray
    kappa: np.ndarray
    lam: np.ndarray = field(default=None)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        kappa = np.atleast_1d(np.asarray(self.kappa, dtype=float))
        p = mu.size
        lam = np.zeros((p, p)) if self.lam is None else np.asarray(self.lam, dtype=float).reshape(p, p)
        if kappa.size != p:
            raise ValueError("kappa and mu differ in dimension")
        if np.any(kappa < 0):
            raise ValueError("kappa must be nonnegative")
        if not np.allclose(lam, lam.T, atol=1e-12) or np.any(np.diag(lam) != 0):
            raise ValueError("lambda must be symmetric with zero diagonal")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "lam", lam)

    @property
    def unimodal(self):
        return bool(np.all(np.linalg.eigvalsh(np.diag(self.kappa) - self.lam) > 0))


def _mvm_kernel(pts, mu, kappa, lam):
    d = pts - mu
    s = np.sin(d)
    return np.cos(d) @ kappa + 0.5 * np.einsum("ni,ij,nj->n", s, lam, s)


@functools.lru_cache(maxsize=256)
def _mvm_log_norm_2d(kappa, lam12, nodes):
    x = -np.pi + TWO_PI * np.arange(nodes) / nodes
    X, Y = np.meshgrid(x, x, indexing="ij")
    e = kappa[0] * np.cos(X) + kappa[1] * np.cos(Y) + lam12 * np.sin(X) * np.sin(Y)
    m = e.max()
    return float(np.log(np.exp(e - m).sum() * (TWO_PI / nodes) ** 2) + m)


def mvm_log_normalizer(params, nodes=200):
    """``log T(kappa, lam)``; closed form when ``lam == 0``, quadrature for ``p == 2``."""
    p = params.mu.size
    if not np.any(params.lam):
        return float(p * LOG_2PI + np.sum(log_i0(params.kappa)))
    if p != 2:
        raise ValueError("normalizing constant with interaction only available for p = 2")
    return _mvm_log_norm_2d(tuple(params.kappa.tolist()), float(params.lam[0, 1]), nodes)


def mvm_logdensity(theta, params, normalized=True):
    p = params.mu.size
    pts, lead = as_points(theta, p)
    out = _mvm_kernel(pts, params.mu, params.kappa, params.lam)
    if normalized:
        out = out - mvm_log_normalizer(params)
    return out.reshape(lead)


# ---------------------------------------------------------------------------
# Jones-Pewsey

JP_VM_LIMIT = 1e-4


def _jp_log_base(d, kappa, psi):
    """``log(cosh(a) + sinh(a) cos d)`` with ``a = kappa psi``, evaluated without overflow."""
    a = kappa * psi
    e = np.exp(-2 * abs(a))
    inner = (1 + e) + np.sign(a) * (1 - e) * np.cos(d)
    with np.errstate(divide="ignore"):
        return abs(a) - np.log(2.0) + np.log(np.maximum(inner, 0.0))


@functools.lru_cache(maxsize=1024)
def _jp_log_norm(kappa, psi, tol=1e-12):
    # periodic trapezoid, doubled until stable (spectral convergence)
    n = 64
    prev = None
    while True:
        x = -np.pi + TWO_PI * np.arange(n) / n
        lf = _jp_log_base(x, kappa, psi) / psi
        m = lf.max()
        val = np.log(np.exp(lf - m).sum() * TWO_PI / n) + m
        if prev is not None and abs(val - prev) < tol:
            return float(val)
        if n >= 2**20:
            return float(val)
        prev = val
        n *= 2


def jp_logdensity(theta, mu, kappa, psi):
    """Log-density of the Jones-Pewsey law; the von Mises limit is used for ``|psi| < 1e-4``."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    theta = np.asarray(theta, dtype=float)
    if abs(psi) < JP_VM_LIMIT or kappa == 0:
        return vm_logdensity(theta, mu, kappa)
    lb = _jp_log_base(theta - mu, kappa, psi)
    if np.any(~np.isfinite(lb)):
        warnings.warn("Jones-Pewsey base clamped to zero", NumericalWarning, stacklevel=2)
    with np.errstate(invalid="ignore"):
        return np.where(np.isfinite(lb), lb / psi, -np.inf) - _jp_log_norm(float(kappa), float(psi))


def jp_density(theta, mu, kappa, psi):
    return np.exp(jp_logdensity(theta, mu, kappa, psi))


# ---------------------------------------------------------------------------
# Mixtures of independent von Mises


@dataclass(frozen=True)
class MivMParams:
    M: np.ndarray
    K: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        K = np.atleast_2d(np.asarray(self.K, dtype=float))
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if M.shape != K.shape or w.size != M.shape[0]:
            raise ValueError("inconsistent mixture shapes")
        if np.any(K < 0):
            raise ValueError("concentrations must be nonnegative")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must lie on the simplex")
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "weights", w)


def mivm_component_logdensities(pts, params):
    """(n, m) log-densities of each product-vM component."""
    d = pts[:, None, :] - params.M[None]
    return np.sum(params.K[None] * np.cos(d) - LOG_2PI - log_i0(params.K)[None], axis=2)


def mivm_logdensity(theta, params):
    p = params.M.shape[1]
    pts, lead = as_points(theta, p)
    with np.errstate(divide="ignore"):
        lc = mivm_component_logdensities(pts, params) + np.log(params.weights)[None]
    return _logsumexp(lc, axis=1).reshape(lead)


def mivm_density(theta, params):
    return np.exp(mivm_logdensity(theta, params))
