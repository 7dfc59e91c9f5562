"""Closed-form approximations to the transition density of toroidal diffusions.

Kinds
-----
``S``
    Stationary density, ignores the conditioning point.
``E`` / ``UE``
    Wrapped / unwrapped Euler: constant drift and diffusion over the step.
``EvM``
    Euler moments with von Mises marginals matched to the variances.
``SO`` / ``USO`` / ``SOvM``
    Shoji-Ozaki local linearization of the drift (wrapped, unwrapped,
    von Mises matched).
``WOU``
    Winding-weighted wrapped Ornstein-Uhlenbeck density (wrapped normal
    family only).

All evaluators are vectorized over pairs: ``theta`` and ``phi`` are
``(n, p)`` (or ``(n,)`` for ``p == 1``) and the result has length ``n``.
"""

from dataclasses import dataclass
import warnings

import numpy as np
from numba import njit
from scipy.linalg import expm

from . import densities as dens
from .densities import NumericalWarning
from .torus import TWO_PI, LatticeBox, as_points, cmod, lattice_enumerate, wrap_scalar

KINDS = ("S", "E", "UE", "EvM", "SO", "USO", "SOvM", "WOU")

#: condition-number threshold above which SO falls back to Euler moments
COND_LIMIT = 1e12


# ---------------------------------------------------------------------------
# 2x2 matrix exponential and the OU covariance


def _phi1(x):
    """``(e^x - 1) / x`` with the removable singularity filled in."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.expm1(x) / np.where(small, 1.0, x)
    return np.where(small, 1.0 + 0.5 * x, out)


def _expm_parts(A, t):
    """Pieces of ``exp(tA) = a(t) I + b(t) A`` for 2x2 ``A``.

    Returns ``(s, e, ec, b)`` with ``e = exp(s t)``, ``ec = e (cosh(qt) - 1)``
    (or ``e (cos(qt) - 1)``) and ``b = e sinh(qt)/q`` (or ``e sin(qt)/q``,
    or ``e t`` when ``q = 0``), so that ``a = e + ec - s b``. For real
    eigenvalues and large ``qt`` the products are formed from the
    eigenvalue exponentials directly, avoiding ``0 * inf``.
    """
    A = np.asarray(A, dtype=float)
    t = np.asarray(t, dtype=float)
    s = 0.5 * (A[..., 0, 0] + A[..., 1, 1])
    h = 0.5 * (A[..., 0, 0] - A[..., 1, 1])
    det_b = -h * h - A[..., 0, 1] * A[..., 1, 0]
    q = np.sqrt(np.abs(det_b))
    qt = q * t
    e = np.exp(s * t)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        hyper_sh = np.sinh(qt) / q
        trig_sh = np.sin(qt) / q
        sh = np.where(q == 0, t * np.ones_like(q), np.where(det_b < 0, hyper_sh, trig_sh))
        cm1 = np.where(det_b < 0, 2 * np.sinh(0.5 * qt) ** 2, -2 * np.sin(0.5 * qt) ** 2)
        b = e * sh
        ec = e * cm1
        # far from the repeated-eigenvalue case: exp((s +- q) t) without cancellation issues
        big = (det_b < 0) & (np.abs(qt) > 1)
        if np.any(big):
            up = np.exp((s + q) * t)
            lo = np.exp((s - q) * t)
            b = np.where(big, (up - lo) / (2 * np.where(big, q, 1.0)), b)
            ec = np.where(big, 0.5 * (up + lo) - e, ec)
    return s, e, ec, b


def expm2x2_coeffs(A, t):
    """``a(t), b(t)`` such that ``exp(tA) = a(t) I + b(t) A``."""
    s, e, ec, b = _expm_parts(A, t)
    return e + ec - s * b, b


def expm2x2(A, t=1.0):
    """Closed-form exponential of ``t A`` for 2x2 matrices (batched over leading axes).

    With ``s = tr(A)/2`` and ``q = sqrt|det(A - sI)|`` the hyperbolic
    functions of ``qt`` are used when ``det(A - sI) < 0`` (real eigenvalues)
    and the circular ones when it is positive.
    """
    A = np.asarray(A, dtype=float)
    a, b = expm2x2_coeffs(A, t)
    a = np.asarray(a)[..., None, None]
    b = np.asarray(b)[..., None, None]
    return a * np.eye(2) + b * A


def gamma_t(A, Sigma, t):
    """Covariance ``int_0^t exp(-sA) Sigma exp(-sA') ds`` for ``A^{-1} Sigma`` symmetric.

    Equals ``s(t) A^{-1} Sigma / 2 + i(t) Sigma`` with ``s(t) = 1 - a(-2t)``
    and ``i(t) = -b(-2t)/2``, interpolating between ``Sigma t`` for small
    ``t`` and the stationary covariance ``A^{-1} Sigma / 2``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
    p = A.shape[0]
    if t == 0:
        return np.zeros((p, p))
    if p == 1:
        a = A[0, 0]
        return Sigma * (2 * t) * _phi1(-2 * a * t) / 2
    stat = 0.5 * np.linalg.solve(A, Sigma)
    if p == 2:
        s, e, ec, b = _expm_parts(A, -2.0 * t)
        # 1 - a(-2t) written to avoid cancellation for small t
        s_t = -np.expm1(-2.0 * s * t) - ec + s * b
        i_t = -0.5 * b
        G = s_t * stat + i_t * Sigma
    else:
        G = 0.5 * np.linalg.solve(A, (np.eye(p) - expm(-2.0 * t * A)) @ Sigma)
    return 0.5 * (G + G.T)


# ---------------------------------------------------------------------------
# Euler and Shoji-Ozaki moments


@dataclass
class SoMoments:
    """Mean ``(n, p)`` and covariance ``(n, p, p)`` of a linearized step.

    ``fallback`` flags points where Euler moments replaced the linearization.
    """

    mean: np.ndarray
    cov: np.ndarray
    fallback: np.ndarray


def euler_moments(model, phi, delta):
    pts, _ = as_points(phi, model.dim)
    b = model._drift(pts)
    V = model.diffusion_matrix()
    cov = np.broadcast_to(V * delta, (pts.shape[0],) + V.shape).copy()
    return SoMoments(pts + b * delta, cov, np.ones(pts.shape[0], dtype=bool))


def _kron_lyapunov(J, rhs):
    """Solve ``J X + X J' = rhs`` through the Kronecker system."""
    p = J.shape[0]
    I = np.eye(p)
    K = np.kron(I, J) + np.kron(J, I)
    if np.linalg.cond(K) > 1 / np.finfo(float).eps:
        raise np.linalg.LinAlgError("Lyapunov system is singular: J has a pair of reverse-sign eigenvalues")
    x = np.linalg.solve(K, rhs.reshape(-1, order="F"))
    return x.reshape(p, p, order="F")


def linearized_moments(b, J, V, phi, delta, symmetric=None):
    """Shoji-Ozaki moments from drift values ``b`` (n,p), Jacobians ``J`` (n,p,p), diffusion ``V`` (p,p).

    ``symmetric`` forces (True) or forbids (False) the closed-form covariance;
    by default it is used when ``V^{-1} J`` is symmetric.
    """
    n, p = b.shape
    if p == 1:
        j = J[:, 0, 0]
        mean = phi + b * delta * _phi1(j * delta)[:, None]
        cov = (V[0, 0] * delta * _phi1(2 * j * delta))[:, None, None]
        return SoMoments(mean, cov, np.zeros(n, dtype=bool))
    I = np.eye(p)
    with np.errstate(all="ignore"):
        fallback = ~(np.linalg.cond(J) <= COND_LIMIT)
    Jsafe = np.where(fallback[:, None, None], -I, J)
    E1 = expm2x2(Jsafe, delta) if p == 2 else np.stack([expm(delta * Ji) for Ji in Jsafe])
    E2 = expm2x2(Jsafe, 2 * delta) if p == 2 else np.stack([expm(2 * delta * Ji) for Ji in Jsafe])
    mean = phi + np.linalg.solve(Jsafe, ((E1 - I) @ b[..., None]))[..., 0]
    M = np.linalg.solve(V, Jsafe)
    scale = np.abs(M).max(axis=(1, 2))[:, None, None]
    if symmetric is None:
        sym = np.all(np.abs(M - np.swapaxes(M, 1, 2)) <= 1e-10 * scale, axis=(1, 2))
    else:
        sym = np.full(n, bool(symmetric))
    cov = 0.5 * np.linalg.solve(Jsafe, (E2 - I) @ V)
    for i in np.flatnonzero(~sym & ~fallback):
        cov[i] = _kron_lyapunov(Jsafe[i], E1[i] @ V @ E1[i].T - V)
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    if np.any(fallback):
        mean[fallback] = phi[fallback] + b[fallback] * delta
        cov[fallback] = V * delta
        warnings.warn("ill-conditioned drift Jacobian; Euler moments used", NumericalWarning, stacklevel=3)
    return SoMoments(mean, cov, fallback)


def so_moments(model, phi, delta):
    """Shoji-Ozaki mean ``phi + J^{-1}(e^{J delta} - I) b`` and covariance at ``phi``."""
    pts, _ = as_points(phi, model.dim)
    return linearized_moments(model._drift(pts), model._jac(pts), model.diffusion_matrix(), pts, delta)


def so_limit_moments(model, phi):
    """Large-step limit of the Shoji-Ozaki moments for stable Jacobians: ``(phi - J^{-1} b, -J^{-1} V / 2)``."""
    pts, _ = as_points(phi, model.dim)
    b, J, V = model._drift(pts), model._jac(pts), model.diffusion_matrix()
    mean = pts - np.linalg.solve(J, b[..., None])[..., 0]
    cov = -0.5 * np.linalg.solve(J, np.broadcast_to(V, J.shape))
    return SoMoments(mean, 0.5 * (cov + np.swapaxes(cov, 1, 2)), np.zeros(len(pts), dtype=bool))


# ---------------------------------------------------------------------------
# Density evaluation at given moments


def _moment_logpdf(theta, mom, mode, strategy):
    if mode == "wrapped":
        return dens.wn_logdensity(theta, mom.mean, mom.cov, strategy)
    if mode == "unwrapped":
        return dens.gaussian_logpdf(theta - mom.mean, mom.cov)
    var = np.diagonal(mom.cov, axis1=1, axis2=2)
    kappa = dens.vm_moment_match(var)
    return np.sum(kappa * np.cos(theta - mom.mean) - dens.LOG_2PI - dens.log_i0(kappa), axis=1)


def _mode(wrapped, vm_matched):
    if vm_matched:
        return "vm"
    return "wrapped" if wrapped else "unwrapped"


def euler_logtpd(model, theta, phi, delta, wrapped=True, vm_matched=False, strategy=dens.DEFAULT_STRATEGY):
    th, lead = as_points(theta, model.dim)
    mom = euler_moments(model, np.broadcast_to(as_points(phi, model.dim)[0], th.shape), delta)
    return _moment_logpdf(th, mom, _mode(wrapped, vm_matched), strategy).reshape(lead)


def euler_tpd(model, theta, phi, delta, wrapped=True, vm_matched=False, strategy=dens.DEFAULT_STRATEGY):
    """Euler pseudo-density ``WN(theta; phi + b(phi) delta, V delta)`` (Gaussian when unwrapped)."""
    return np.exp(euler_logtpd(model, theta, phi, delta, wrapped, vm_matched, strategy))


def so_logtpd(model, theta, phi, delta, wrapped=True, vm_matched=False, strategy=dens.DEFAULT_STRATEGY):
    th, lead = as_points(theta, model.dim)
    mom = so_moments(model, np.broadcast_to(as_points(phi, model.dim)[0], th.shape), delta)
    return _moment_logpdf(th, mom, _mode(wrapped, vm_matched), strategy).reshape(lead)


def so_tpd(model, theta, phi, delta, wrapped=True, vm_matched=False, strategy=dens.DEFAULT_STRATEGY):
    """Shoji-Ozaki pseudo-density at the linearized moments."""
    return np.exp(so_logtpd(model, theta, phi, delta, wrapped, vm_matched, strategy))


# ---------------------------------------------------------------------------
# Wrapped Ornstein-Uhlenbeck


@dataclass(frozen=True, eq=False)
class WouParams:
    """Wrapped OU approximation of a wrapped normal process.

    ``weight_radius`` bounds the winding numbers of the starting point
    (default ``{-2..2}^p``); ``wrap_radius`` bounds the wrapping of the
    arrival density (default ``{-1,0,1}^p``).
    """

    mu: np.ndarray
    A: np.ndarray
    Sigma: np.ndarray
    weight_radius: int = 2
    wrap_radius: int = 1

    def __post_init__(self):
        mu = cmod(np.atleast_1d(np.asarray(self.mu, dtype=float)))
        p = mu.size
        A = np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(p, p)
        Sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float)).reshape(p, p)
        S = 0.5 * np.linalg.solve(A, Sigma)
        if not np.allclose(S, S.T, rtol=0, atol=1e-10 * np.abs(S).max()) or np.any(np.linalg.eigvalsh(0.5 * (S + S.T)) <= 0):
            raise ValueError("A^{-1} Sigma / 2 must be symmetric positive definite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "_S", 0.5 * (S + S.T))

    @classmethod
    def from_model(cls, model, weight_radius=2, wrap_radius=1):
        return cls(model.mu, model.A, model.Sigma, weight_radius, wrap_radius)

    @property
    def dim(self):
        return self.mu.size

    @property
    def weight_box(self):
        return LatticeBox.symmetric(self.weight_radius, self.dim)

    @property
    def wrap_box(self):
        return LatticeBox.symmetric(self.wrap_radius, self.dim)

    @property
    def stationary_cov(self):
        return self._S.copy()


def _exp_neg(A, t):
    p = A.shape[0]
    if p == 1:
        return np.exp(-t * A)
    if p == 2:
        return expm2x2(A, -t)
    return expm(-t * A)


@njit(cache=True)
def _wou_kernel(dev, d_s, ms, ks, E, s_prec, g_prec, g_const):
    """Compiled WOU log-density; ``dev = cmod(theta - mu)``, ``d_s = cmod(theta_s - mu)``."""
    n, p = dev.shape
    M = ms.shape[0]
    K = ks.shape[0]
    out = np.empty(n)
    logw = np.empty(M)
    terms = np.empty(M)
    inner = np.empty(K)
    z = np.empty(p)
    c = np.empty(p)
    r = np.empty(p)
    for i in range(n):
        # winding weights of the start point
        top = -np.inf
        for m in range(M):
            for j in range(p):
                z[j] = d_s[i, j] + TWO_PI * ms[m, j]
            q = 0.0
            for a in range(p):
                for b in range(p):
                    q += z[a] * s_prec[a, b] * z[b]
            logw[m] = -0.5 * q
            if logw[m] > top:
                top = logw[m]
        tot = 0.0
        for m in range(M):
            tot += np.exp(logw[m] - top)
        lnorm = top + np.log(tot)
        # arrival density for each winding of the start
        ttop = -np.inf
        for m in range(M):
            for j in range(p):
                z[j] = d_s[i, j] + TWO_PI * ms[m, j]
            for a in range(p):
                s = 0.0
                for b in range(p):
                    s += E[a, b] * z[b]
                c[a] = s
            for j in range(p):
                r[j] = wrap_scalar(dev[i, j] - c[j])
            itop = -np.inf
            for k in range(K):
                q = 0.0
                for a in range(p):
                    za = r[a] + TWO_PI * ks[k, a]
                    for b in range(p):
                        q += za * g_prec[a, b] * (r[b] + TWO_PI * ks[k, b])
                inner[k] = -0.5 * q
                if inner[k] > itop:
                    itop = inner[k]
            acc = 0.0
            for k in range(K):
                acc += np.exp(inner[k] - itop)
            terms[m] = logw[m] - lnorm + itop + np.log(acc) + g_const
            if terms[m] > ttop:
                ttop = terms[m]
        acc = 0.0
        for m in range(M):
            acc += np.exp(terms[m] - ttop)
        out[i] = ttop + np.log(acc)
    return out


def _wou_setup(params, theta, theta_s, t):
    if not t > 0:
        raise ValueError("t must be positive")
    p = params.dim
    th, lead = as_points(theta, p)
    ths = np.broadcast_to(as_points(theta_s, p)[0], th.shape)
    ms = lattice_enumerate(params.weight_box).astype(float)
    ks = lattice_enumerate(params.wrap_box).astype(float)
    return p, th, lead, ths, ms, ks


def wou_logtpd(params, theta, theta_s, t):
    """Log of ``sum_m w_m(theta_s) WN(theta; mu + e^{-tA}(theta_s - mu + 2 m pi), Gamma_t)``."""
    p, th, lead, ths, ms, ks = _wou_setup(params, theta, theta_s, t)
    E = _exp_neg(params.A, t)
    G = gamma_t(params.A, params.Sigma, t)
    g_prec, g_logdet = dens._prec_logdet(G)
    s_prec, _ = dens._prec_logdet(params._S)
    out = _wou_kernel(np.ascontiguousarray(cmod(th - params.mu)), np.ascontiguousarray(cmod(ths - params.mu)),
                      ms, ks, np.ascontiguousarray(E, dtype=float), s_prec, g_prec,
                      -0.5 * (g_logdet + p * dens.LOG_2PI))
    return out.reshape(lead)


def wou_logtpd_reference(params, theta, theta_s, t):
    """Vectorized NumPy evaluation of :func:`wou_logtpd` (independent code path)."""
    p, th, lead, ths, ms, ks = _wou_setup(params, theta, theta_s, t)
    d_s = cmod(ths - params.mu)
    logw = dens.winding_logweights(d_s, np.zeros(p), params._S, ms)  # (n, M)
    E = _exp_neg(params.A, t)
    G = gamma_t(params.A, params.Sigma, t)
    # means mu + E (d_s + 2 pi m), compared with theta through a wrapped residual
    centers = (d_s[:, None, :] + TWO_PI * ms[None]) @ E.T  # (n, M, p)
    resid = cmod(th[:, None, :] - params.mu - centers).reshape(-1, p)
    lwn = dens.wn_logpdf_resid(resid, G, ks).reshape(th.shape[0], ms.shape[0])
    return dens._logsumexp(logw + lwn, axis=1).reshape(lead)


def wou_tpd(params, theta, theta_s, t):
    """WOU transition density of ``theta`` at lag ``t`` given ``theta_s``."""
    return np.exp(wou_logtpd(params, theta, theta_s, t))


# ---------------------------------------------------------------------------
# Dispatcher


def log_tpd(kind, model, theta, phi, delta, strategy=dens.DEFAULT_STRATEGY, wou_radii=(2, 1)):
    """Log pseudo-transition density of the approximation ``kind``."""
    if kind == "S":
        th, lead = as_points(theta, model.dim)
        return model.stationary_logdensity(th).reshape(lead)
    if kind in ("E", "UE", "EvM"):
        return euler_logtpd(model, theta, phi, delta, wrapped=kind != "UE", vm_matched=kind == "EvM", strategy=strategy)
    if kind in ("SO", "USO", "SOvM"):
        return so_logtpd(model, theta, phi, delta, wrapped=kind != "USO", vm_matched=kind == "SOvM", strategy=strategy)
    if kind == "WOU":
        if getattr(model, "family", None) != "wn":
            raise ValueError("the WOU approximation is defined for the wrapped normal family only")
        return wou_logtpd(WouParams.from_model(model, *wou_radii), theta, phi, delta)
    raise ValueError(f"unknown approximation kind {kind!r}; expected one of {KINDS}")
