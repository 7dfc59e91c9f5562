"""Likelihood-based estimation for toroidal diffusions.

* :func:`sigma_hf`: quadratic-variation estimate of the diffusion matrix.
* :func:`smle`: maximum likelihood treating observations as iid draws from
  the stationary law (stationary parametrization).
* :func:`starting_values`: composite starting point in the process
  parametrization (SMLE plus the high-frequency diffusion estimate).
* :func:`fit`: derivative-free maximization of any approximate
  log-likelihood (``S``, ``E``, ``SO``, ``WOU``, ``PDE``, ...).

Parameters are optimized in an unconstrained space: angles directly (wrapped
on decode), positive scalars through ``log``, weights through a softmax
against the last component, correlations through ``tanh``, and the
cross-coupling of 2D drift matrices through a scaled ``tanh`` that keeps the
stationary covariance proper.
"""

from dataclasses import asdict, dataclass, field
import time
import warnings

import numpy as np
from scipy.optimize import minimize

from . import densities as dens
from . import models as mdl
from . import pde
from . import tpd
from .torus import as_points, circular_mean, cmod, mean_resultant_length

LOG_FLOOR = np.log(1e-300)
PENALTY = 1e100
LIKELIHOOD_KINDS = tpd.KINDS + ("PDE",)


@dataclass
class OptimizerConfig:
    """Nelder-Mead settings; ``restarts`` extra runs start from the best point."""

    max_evals: int = 2000
    fatol: float = 1e-8
    xatol: float = 1e-6
    restarts: int = 1

    def __post_init__(self):
        if not (self.max_evals > 0 and self.fatol > 0 and self.xatol > 0 and self.restarts >= 0):
            raise ValueError("optimizer tolerances and budgets must be positive")


@dataclass
class FitConfig:
    """Likelihood options shared by all kinds.

    ``initial`` adds the stationary log-density of the first observation
    (``"sdi"``) or nothing (``"none"``).
    """

    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    initial: str = "sdi"
    wn_strategy: dens.WnEvalStrategy = dens.DEFAULT_STRATEGY
    wou_radii: tuple = (2, 1)
    pde_config: pde.PdeLikelihoodConfig = field(default_factory=pde.PdeLikelihoodConfig)


@dataclass
class EstimationResult:
    params: dict
    loglik: float
    iterations: int
    converged: bool
    likelihood_kind: str
    wall_time: float
    family: str = None
    n_floored: int = 0
    start: dict = None
    fixed: dict = None

    @property
    def model(self):
        return build_model(self.family, self.params) if self.likelihood_kind != "SMLE" else None

    def to_dict(self, include_time=True):
        d = {
            "family": self.family,
            "likelihood_kind": self.likelihood_kind,
            "params": _jsonable(self.params),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "n_floored": self.n_floored,
            "start": _jsonable(self.start),
            "fixed": _jsonable(self.fixed),
        }
        if include_time:
            d["wall_time"] = self.wall_time
        return d


def _jsonable(obj):
    if obj is None:
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


# ---------------------------------------------------------------------------
# High-frequency diffusion estimate


def sigma_hf(traj, isotropic=False):
    """``(1 / (N delta)) sum cmod(dTheta) cmod(dTheta)'``; ``isotropic`` returns ``tr / p``."""
    inc = traj.increments()
    S = inc.T @ inc / (inc.shape[0] * traj.delta)
    if isotropic:
        return float(np.trace(S) / traj.dim)
    return S


# ---------------------------------------------------------------------------
# Parameter transforms


@dataclass(frozen=True)
class Group:
    """A named block of parameters and how it maps to unconstrained space."""

    name: str
    size: int
    kind: str  # angle | log | real | corr | simplex | lemma | mvm_offdiag


def _free_size(g):
    return g.size - 1 if g.kind == "simplex" else g.size


def _decode_group(g, z, vals):
    if g.kind == "angle":
        return cmod(z)
    if g.kind == "log":
        return np.exp(z)
    if g.kind == "real":
        return z.copy()
    if g.kind == "corr":
        return np.tanh(z)
    if g.kind == "simplex":
        e = np.concatenate([z, [0.0]])
        e = np.exp(e - e.max())
        return e / e.sum()
    if g.kind == "lemma":
        return _lemma_bound(vals) * np.tanh(z)
    if g.kind == "mvm_offdiag":
        return np.sqrt(vals["alpha1"] * vals["alpha2"]) * np.tanh(z)
    raise ValueError(g.kind)


def _encode_group(g, v, vals):
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if g.kind == "angle":
        return cmod(v)
    if g.kind == "log":
        return np.log(np.maximum(v, 1e-300))
    if g.kind == "real":
        return v.copy()
    if g.kind == "corr":
        return np.arctanh(np.clip(v, -1 + 1e-15, 1 - 1e-15))
    if g.kind == "simplex":
        w = np.maximum(v, 1e-300)
        return np.log(w[:-1] / w[-1])
    if g.kind == "lemma":
        return np.arctanh(np.clip(v / _lemma_bound(vals), -1 + 1e-15, 1 - 1e-15))
    if g.kind == "mvm_offdiag":
        return np.arctanh(np.clip(v / np.sqrt(vals["alpha1"] * vals["alpha2"]), -1 + 1e-15, 1 - 1e-15))
    raise ValueError(g.kind)


def _lemma_bound(vals):
    a1, a2 = float(vals["alpha1"][0]), float(vals["alpha2"][0])
    rho = float(vals.get("rho", np.zeros(1))[0])
    return np.sqrt(rho**2 * (a1 - a2) ** 2 / 4 + a1 * a2)


def process_groups(family, p, m=1):
    """Parameter groups of a family in the process parametrization (dependency order)."""
    if family == "wn" and p == 1:
        return [Group("mu", 1, "angle"), Group("alpha", 1, "log"), Group("sigma", 1, "log")]
    if family == "wn" and p == 2:
        return [Group("mu", 2, "angle"), Group("alpha1", 1, "log"), Group("alpha2", 1, "log"),
                Group("sigma1", 1, "log"), Group("sigma2", 1, "log"), Group("rho", 1, "corr"),
                Group("alpha3", 1, "lemma")]
    if family == "vm" and p == 1:
        return [Group("mu", 1, "angle"), Group("alpha", 1, "log"), Group("sigma", 1, "log")]
    if family == "vm" and p == 2:
        return [Group("mu", 2, "angle"), Group("alpha1", 1, "log"), Group("alpha2", 1, "log"),
                Group("a12", 1, "mvm_offdiag"), Group("sigma", 1, "log")]
    if family == "jp":
        return [Group("mu", 1, "angle"), Group("alpha", 1, "log"), Group("psi", 1, "real"), Group("sigma", 1, "log")]
    if family == "mivm":
        return [Group("M", m * p, "angle"), Group("A", m * p, "log"), Group("weights", m, "simplex"),
                Group("sigma", 1, "log")]
    raise ValueError(f"unsupported family/dimension: {family!r}, p={p}")


def stationary_groups(family, p, m=1):
    """Parameter groups of the stationary law."""
    if family == "wn" and p == 1:
        return [Group("mu", 1, "angle"), Group("var", 1, "log")]
    if family == "wn" and p == 2:
        return [Group("mu", 2, "angle"), Group("sd1", 1, "log"), Group("sd2", 1, "log"), Group("corr", 1, "corr")]
    if family == "vm" and p == 1:
        return [Group("mu", 1, "angle"), Group("kappa", 1, "log")]
    if family == "vm" and p == 2:
        return [Group("mu", 2, "angle"), Group("kappa", 2, "log"), Group("lam", 1, "real")]
    if family == "jp":
        return [Group("mu", 1, "angle"), Group("kappa", 1, "log"), Group("psi", 1, "real")]
    if family == "mivm":
        return [Group("M", m * p, "angle"), Group("K", m * p, "log"), Group("weights", m, "simplex")]
    raise ValueError(f"unsupported family/dimension: {family!r}, p={p}")


class Transform:
    """Bijection between a parameter dict (minus fixed groups) and R^d."""

    def __init__(self, groups, fixed=None):
        self.groups = groups
        self.fixed = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in (fixed or {}).items()}
        unknown = set(self.fixed) - {g.name for g in groups}
        if unknown:
            raise ValueError(f"unknown parameters in fixed mask: {sorted(unknown)}")
        self.free = [g for g in groups if g.name not in self.fixed]
        self.dim = sum(_free_size(g) for g in self.free)

    def decode(self, z):
        vals = {}
        pos = 0
        for g in self.groups:
            if g.name in self.fixed:
                vals[g.name] = self.fixed[g.name].copy()
                continue
            k = _free_size(g)
            vals[g.name] = _decode_group(g, np.asarray(z[pos:pos + k], dtype=float), vals)
            pos += k
        return vals

    def encode(self, vals):
        out = []
        ctx = {}
        for g in self.groups:
            v = self.fixed[g.name] if g.name in self.fixed else np.atleast_1d(np.asarray(vals[g.name], dtype=float))
            ctx[g.name] = v
            if g.name not in self.fixed:
                out.append(_encode_group(g, v, ctx))
        return np.concatenate(out) if out else np.zeros(0)


# ---------------------------------------------------------------------------
# Parameter dicts <-> models


def _scalar(v):
    return float(np.atleast_1d(v)[0])


def build_model(family, vals, p=None, m=None):
    """Model from a process-parameter dict (see :func:`process_groups`)."""
    if family == "wn":
        mu = np.atleast_1d(vals["mu"])
        if mu.size == 1:
            return mdl.WrappedNormalProcess.univariate(mu[0], _scalar(vals["alpha"]), _scalar(vals["sigma"]))
        return mdl.WrappedNormalProcess.from_lemma(
            mu, _scalar(vals["alpha1"]), _scalar(vals["alpha2"]), _scalar(vals["alpha3"]),
            _scalar(vals["sigma1"]), _scalar(vals["sigma2"]), _scalar(vals.get("rho", 0.0)))
    if family == "vm":
        mu = np.atleast_1d(vals["mu"])
        if mu.size == 1:
            return mdl.VonMisesProcess.univariate(mu[0], _scalar(vals["alpha"]), _scalar(vals["sigma"]))
        a1, a2, a12 = _scalar(vals["alpha1"]), _scalar(vals["alpha2"]), _scalar(vals["a12"])
        return mdl.VonMisesProcess(mu, [[a1, a12], [a12, a2]], _scalar(vals["sigma"]))
    if family == "jp":
        return mdl.JonesPewseyProcess(_scalar(vals["mu"]), _scalar(vals["alpha"]), _scalar(vals["psi"]),
                                      _scalar(vals["sigma"]))
    if family == "mivm":
        w = np.atleast_1d(vals["weights"])
        M = np.asarray(vals["M"], float).reshape(w.size, -1)
        A = np.asarray(vals["A"], float).reshape(w.size, -1)
        return mdl.MixtureVonMisesProcess(M, A, w / w.sum(), _scalar(vals["sigma"]))
    raise ValueError(f"unknown family {family!r}")


def params_from_model(model):
    """Process-parameter dict of a model (inverse of :func:`build_model`)."""
    f = model.family
    if f == "wn":
        if model.dim == 1:
            return {"mu": model.mu.copy(), "alpha": np.array([model.A[0, 0]]),
                    "sigma": np.sqrt(model.Sigma[0, 0:1])}
        s1, s2 = np.sqrt(model.Sigma[0, 0]), np.sqrt(model.Sigma[1, 1])
        return {"mu": model.mu.copy(), "alpha1": np.array([model.A[0, 0]]), "alpha2": np.array([model.A[1, 1]]),
                "sigma1": np.array([s1]), "sigma2": np.array([s2]),
                "rho": np.array([model.Sigma[0, 1] / (s1 * s2)]),
                "alpha3": np.array([mdl.lemma_alpha3(model.A, model.Sigma)])}
    if f == "vm":
        if model.dim == 1:
            return {"mu": model.mu.copy(), "alpha": np.array([model.A[0, 0]]), "sigma": np.array([model.sigma])}
        return {"mu": model.mu.copy(), "alpha1": model.A[0, 0:1].copy(), "alpha2": model.A[1, 1:2].copy(),
                "a12": model.A[0, 1:2].copy(), "sigma": np.array([model.sigma])}
    if f == "jp":
        return {"mu": np.array([model.mu]), "alpha": np.array([model.alpha]), "psi": np.array([model.psi]),
                "sigma": np.array([model.sigma])}
    if f == "mivm":
        return {"M": model.M.ravel().copy(), "A": model.A.ravel().copy(), "weights": model.weights.copy(),
                "sigma": np.array([model.sigma])}
    raise ValueError(f"unsupported family {f!r}")


def stationary_logdensity(family, vals, theta, p, m=1):
    """Stationary log-density from a stationary-parameter dict."""
    if family == "wn":
        mu = np.atleast_1d(vals["mu"])
        if p == 1:
            cov = np.atleast_2d(_scalar(vals["var"]))
        else:
            s1, s2, r = _scalar(vals["sd1"]), _scalar(vals["sd2"]), _scalar(vals["corr"])
            cov = np.array([[s1 * s1, r * s1 * s2], [r * s1 * s2, s2 * s2]])
        return dens.wn_logdensity(theta, mu, cov)
    if family == "vm":
        mu = np.atleast_1d(vals["mu"])
        lam = None if p == 1 else np.array([[0, _scalar(vals["lam"])], [_scalar(vals["lam"]), 0]])
        return dens.mvm_logdensity(theta, dens.MvMParams(mu, np.atleast_1d(vals["kappa"]), lam))
    if family == "jp":
        pts, _ = as_points(theta, 1)
        return dens.jp_logdensity(pts[:, 0], _scalar(vals["mu"]), _scalar(vals["kappa"]), _scalar(vals["psi"]))
    if family == "mivm":
        w = np.atleast_1d(vals["weights"])
        prm = dens.MivMParams(np.reshape(vals["M"], (w.size, p)), np.reshape(vals["K"], (w.size, p)), w / w.sum())
        return dens.mivm_logdensity(theta, prm)
    raise ValueError(f"unknown family {family!r}")


# ---------------------------------------------------------------------------
# Optimization engine


def _minimize(objective, z0, config):
    """Nelder-Mead with restarts from the incumbent; returns (z, f, nfev, converged)."""
    if z0.size == 0:
        return z0, objective(z0), 1, True
    best_z, best_f = z0.copy(), objective(z0)
    nfev, converged = 1, False
    budget = config.max_evals
    for _ in range(1 + config.restarts):
        if budget <= 0:
            break
        res = minimize(objective, best_z, method="Nelder-Mead",
                       options={"maxfev": budget, "fatol": config.fatol, "xatol": config.xatol,
                                "adaptive": best_z.size > 3})
        nfev += res.nfev
        budget -= res.nfev
        converged = bool(res.success)
        if res.fun <= best_f:
            best_z, best_f = res.x.copy(), float(res.fun)
    return best_z, best_f, nfev, converged


def _safe_sum(logs):
    logs = np.asarray(logs, dtype=float)
    bad = ~(logs > LOG_FLOOR)
    return float(np.sum(np.where(bad, LOG_FLOOR, logs))), int(bad.sum())


# ---------------------------------------------------------------------------
# Stationary MLE


def _kmeans_circular(x, m, iters=50):
    """Rough component means for mixture starting values (p = 1 or 2)."""
    order = np.argsort(x[:, 0])
    centers = x[order[((2 * np.arange(m) + 1) * len(x)) // (2 * m)]]
    for _ in range(iters):
        score = np.cos(x[:, None, :] - centers[None]).sum(axis=2)
        lab = np.argmax(score, axis=1)
        new = np.array([circular_mean(x[lab == j]) if np.any(lab == j) else centers[j] for j in range(m)])
        centers = np.atleast_2d(new).reshape(m, -1)
    return centers, lab


def smle_start(traj, family, m=1):
    """Moment-type starting values in the stationary parametrization."""
    x = traj.points
    p = traj.dim
    mu = np.atleast_1d(circular_mean(x))
    if family == "wn":
        d = cmod(x - mu)
        S = d.T @ d / len(d)
        if p == 1:
            return {"mu": mu, "var": np.array([max(S[0, 0], 1e-6)])}
        sd = np.sqrt(np.maximum(np.diag(S), 1e-6))
        return {"mu": mu, "sd1": sd[:1], "sd2": sd[1:], "corr": np.array([np.clip(S[0, 1] / (sd[0] * sd[1]), -0.95, 0.95)])}
    kappa = np.atleast_1d(dens.inverse_bessel_ratio(np.minimum(mean_resultant_length(x), 0.999)))
    kappa = np.maximum(kappa, 1e-3)
    if family == "vm":
        return {"mu": mu, "kappa": kappa} if p == 1 else {"mu": mu, "kappa": kappa, "lam": np.zeros(1)}
    if family == "jp":
        return {"mu": mu, "kappa": kappa, "psi": np.array([0.1])}
    if family == "mivm":
        centers, lab = _kmeans_circular(x, m)
        K = np.empty((m, p))
        w = np.empty(m)
        for j in range(m):
            xj = x[lab == j] if np.sum(lab == j) > 1 else x
            K[j] = np.maximum(dens.inverse_bessel_ratio(np.minimum(mean_resultant_length(xj), 0.999)), 1e-3)
            w[j] = max(np.mean(lab == j), 1e-3)
        return {"M": centers.ravel(), "K": K.ravel(), "weights": w / w.sum()}
    raise ValueError(f"unknown family {family!r}")


def smle(traj, family, m=1, config=OptimizerConfig(), start=None):
    """Stationary MLE: maximize ``sum_i log f(Theta_i)`` over the stationary parameters.

    Returns an :class:`EstimationResult` whose ``params`` are in the
    stationary parametrization (e.g. ``mu``, ``var`` for the 1D wrapped
    normal).
    """
    if traj.n_obs < 10:
        raise ValueError("the stationary MLE needs at least 10 observations")
    t0 = time.perf_counter()
    p = traj.dim
    groups = stationary_groups(family, p, m)
    tr = Transform(groups)
    start = smle_start(traj, family, m) if start is None else start
    x = traj.points

    def objective(z):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ll = stationary_logdensity(family, tr.decode(z), x, p, m)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            return PENALTY
        s, _ = _safe_sum(ll)
        return -s if np.isfinite(s) else PENALTY

    z, f, nfev, conv = _minimize(objective, tr.encode(start), config)
    return EstimationResult(tr.decode(z), -f, nfev, conv, "SMLE", time.perf_counter() - t0,
                            family=family, start=start)


def smle_to_process(family, sdi, sigma2, p=None):
    """Process parameters implied by stationary parameters and a diffusion estimate.

    ``sigma2`` is the diffusion matrix (``(p, p)``) for the wrapped normal
    and the isotropic variance for the other families.
    """
    if family == "wn":
        mu = np.atleast_1d(sdi["mu"])
        if mu.size == 1:
            s2 = _scalar(np.asarray(sigma2).ravel()[0])
            alpha = s2 / (2 * _scalar(sdi["var"]))
            return {"mu": mu, "alpha": np.array([alpha]), "sigma": np.array([np.sqrt(s2)])}
        s1, s2_, r = _scalar(sdi["sd1"]), _scalar(sdi["sd2"]), _scalar(sdi["corr"])
        S = np.array([[s1 * s1, r * s1 * s2_], [r * s1 * s2_, s2_ * s2_]])
        return assemble_wn_start(mu, S, np.asarray(sigma2, float))
    s2 = float(np.mean(np.diag(np.atleast_2d(sigma2))))
    if family == "vm":
        kappa = np.atleast_1d(sdi["kappa"])
        if kappa.size == 1:
            return {"mu": np.atleast_1d(sdi["mu"]), "alpha": kappa * s2 / 2, "sigma": np.array([np.sqrt(s2)])}
        a1, a2 = kappa * s2 / 2
        a12 = -_scalar(sdi["lam"]) * s2 / 2
        bound = 0.99 * np.sqrt(a1 * a2)
        return {"mu": np.atleast_1d(sdi["mu"]), "alpha1": np.array([a1]), "alpha2": np.array([a2]),
                "a12": np.array([np.clip(a12, -bound, bound)]), "sigma": np.array([np.sqrt(s2)])}
    if family == "jp":
        return {"mu": np.atleast_1d(sdi["mu"]), "alpha": np.atleast_1d(sdi["kappa"]) * s2 / 2,
                "psi": np.atleast_1d(sdi["psi"]) / s2, "sigma": np.array([np.sqrt(s2)])}
    if family == "mivm":
        return {"M": np.asarray(sdi["M"]).ravel(), "A": np.asarray(sdi["K"]).ravel() * s2 / 2,
                "weights": np.asarray(sdi["weights"]), "sigma": np.array([np.sqrt(s2)])}
    raise ValueError(f"unknown family {family!r}")


def assemble_wn_start(mu, S, Sigma, shrink=0.9):
    """Composite estimate ``A = Sigma S^{-1} / 2`` for the wrapped normal process.

    For ``p = 2`` the result is expressed through the lemma parameters; if the
    implied ``alpha3`` violates the lemma inequality it is shrunk towards 0
    by factors of ``shrink`` until it does not.
    """
    mu = np.atleast_1d(np.asarray(mu, float))
    S = np.atleast_2d(np.asarray(S, float))
    Sigma = np.atleast_2d(np.asarray(Sigma, float))
    if np.linalg.cond(S) > 1e12:
        raise ValueError("stationary covariance estimate is singular")
    A = 0.5 * Sigma @ np.linalg.inv(S)
    if mu.size == 1:
        return {"mu": mu, "alpha": np.array([A[0, 0]]), "sigma": np.sqrt(Sigma[0])}
    s1, s2 = np.sqrt(Sigma[0, 0]), np.sqrt(Sigma[1, 1])
    rho = float(np.clip(Sigma[0, 1] / (s1 * s2), -0.99, 0.99))
    a1, a2 = max(A[0, 0], 1e-3), max(A[1, 1], 1e-3)
    a3 = mdl.lemma_alpha3(A, Sigma)
    bound2 = rho**2 * (a1 - a2) ** 2 / 4 + a1 * a2
    while not a3**2 < bound2:
        a3 *= shrink
    return {"mu": mu, "alpha1": np.array([a1]), "alpha2": np.array([a2]), "alpha3": np.array([a3]),
            "sigma1": np.array([s1]), "sigma2": np.array([s2]), "rho": np.array([rho])}


def starting_values(traj, family, m=1, fixed=None, smle_result=None):
    """Process-parameter starting point: SMLE plus the high-frequency diffusion estimate.

    Fixed numeric diffusion parameters (``sigma``, ``sigma1``, ``sigma2``,
    ``rho``) replace the high-frequency estimate in the conversion.
    """
    fixed = fixed or {}
    p = traj.dim
    res = smle(traj, family, m) if smle_result is None else smle_result
    Sig = sigma_hf(traj)
    if family == "wn" and p == 2:
        s1 = _fixed_num(fixed, "sigma1", np.sqrt(Sig[0, 0]))
        s2 = _fixed_num(fixed, "sigma2", np.sqrt(Sig[1, 1]))
        rho = _fixed_num(fixed, "rho", Sig[0, 1] / np.sqrt(Sig[0, 0] * Sig[1, 1]))
        Sig = np.array([[s1 * s1, rho * s1 * s2], [rho * s1 * s2, s2 * s2]])
    elif "sigma" in fixed and not isinstance(fixed["sigma"], str):
        Sig = np.eye(p) * _scalar(fixed["sigma"]) ** 2
    return smle_to_process(family, res.params, Sig), res


def _fixed_num(fixed, name, default):
    v = fixed.get(name)
    return default if v is None or isinstance(v, str) else _scalar(v)


# ---------------------------------------------------------------------------
# Approximate-likelihood fitting


def log_transitions(kind, model, traj, config=FitConfig()):
    """Per-transition log pseudo-densities ``log p(Theta_i | Theta_{i-1})``, length N."""
    x = traj.points
    if kind == "PDE":
        vals = pde.transition_densities_pde(traj, model, config.pde_config)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.log(vals)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", dens.NumericalWarning)
        return tpd.log_tpd(kind, model, x[1:], x[:-1], traj.delta, config.wn_strategy, config.wou_radii)


def loglik(kind, model, traj, config=FitConfig(), return_floored=False):
    """Approximate log-likelihood: floored transition logs plus the optional initial term."""
    s, floored = _safe_sum(log_transitions(kind, model, traj, config))
    if config.initial == "sdi":
        s += float(model.stationary_logdensity(traj.points[:1])[0])
    elif config.initial != "none":
        raise ValueError("initial must be 'sdi' or 'none'")
    return (s, floored) if return_floored else s


def _groups_for(family, p, m):
    groups = process_groups(family, p, m)
    return groups


def fit(traj, family, likelihood_kind, config=FitConfig(), fixed=None, start=None, m=1):
    """Maximize an approximate log-likelihood over the process parameters.

    Parameters
    ----------
    traj : Trajectory
    family : {"wn", "vm", "jp", "mivm"}
    likelihood_kind : one of ``S, E, UE, EvM, SO, USO, SOvM, WOU, PDE``
    fixed : dict, optional
        Parameter groups held constant, mapped to a value or to ``"smle"``
        (the stationary-MLE-derived starting value). For the 2D wrapped
        normal, ``rho`` is fixed at 0 unless mapped to ``"free"``.
    start : dict, optional
        Process-parameter starting point; by default SMLE plus the
        high-frequency diffusion estimate.
    m : int
        Number of mixture components (``mivm``).
    """
    if likelihood_kind not in LIKELIHOOD_KINDS:
        raise ValueError(f"unknown likelihood kind {likelihood_kind!r}")
    p = traj.dim
    if likelihood_kind == "PDE" and p > 2:
        raise ValueError("the PDE likelihood supports p <= 2")
    if likelihood_kind == "WOU" and (family != "wn" or p > 2):
        raise ValueError("the WOU likelihood needs the wrapped normal family with p <= 2")
    t0 = time.perf_counter()
    fixed = dict(fixed or {})
    if family == "wn" and p == 2:
        if fixed.get("rho") == "free":
            fixed.pop("rho")
        else:
            fixed.setdefault("rho", 0.0)
    if start is None:
        start, _ = starting_values(traj, family, m, fixed)
    start = {k: np.atleast_1d(np.asarray(v, float)) for k, v in start.items()}
    resolved = {}
    for k, v in fixed.items():
        resolved[k] = start[k] if isinstance(v, str) and v == "smle" else v
    if family == "wn" and p == 2 and "alpha3" not in resolved:
        # keep the start feasible if rho was pinned after the start was built
        tmp = dict(start)
        tmp.update({k: np.atleast_1d(v) for k, v in resolved.items()})
        b = _lemma_bound(tmp)
        start["alpha3"] = np.clip(start["alpha3"], -0.99 * b, 0.99 * b)
    tr = Transform(process_groups(family, p, m), resolved)

    def objective(z):
        try:
            model = build_model(family, tr.decode(z))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                ll = loglik(likelihood_kind, model, traj, config)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError, pde.NumericalError):
            return PENALTY
        return -ll if np.isfinite(ll) else PENALTY

    z0 = tr.encode(start)
    z, f, nfev, conv = _minimize(objective, z0, config.optimizer)
    vals = tr.decode(z)
    n_floored = 0
    if f < PENALTY:
        _, n_floored = loglik(likelihood_kind, build_model(family, vals), traj, config, return_floored=True)
    improved = f < objective(z0) or z0.size == 0
    return EstimationResult(vals, -f, nfev, conv and (improved or f < PENALTY), likelihood_kind,
                            time.perf_counter() - t0, family=family, n_floored=n_floored,
                            start=start, fixed=resolved)
