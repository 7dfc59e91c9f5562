"""Wrapped Euler-Maruyama simulation, subsampling and trajectory CSV I/O.

Seeding rule: a run with seed ``s`` draws its Gaussian increments from
``numpy.random.Generator(PCG64(s))`` via ``standard_normal`` (ziggurat),
one ``(chunk, p)`` block at a time. Replicate ``r`` of a batch seeded with
``s`` uses seed ``s + r``, so a replicate simulated alone is bit-identical to
the same replicate simulated within a batch.
"""

from dataclasses import dataclass, field, replace
import json
import os

import numpy as np

from .torus import as_points, cmod, wrap_inplace

#: rows of Gaussian increments drawn per generator call
NOISE_CHUNK = 4096


class SimulationDiverged(FloatingPointError):
    """Drift became non-finite during a simulation."""

    def __init__(self, step):
        super().__init__(f"non-finite drift at step {step}")
        self.step = step


@dataclass
class Trajectory:
    """Equispaced observations ``points[i]`` at times ``i * delta``."""

    points: np.ndarray
    delta: float
    seed: int = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] < 2:
            raise ValueError("a trajectory needs at least two observations")
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if np.any(pts < -np.pi) or np.any(pts >= np.pi):
            raise ValueError("trajectory points must lie in [-pi, pi)")
        self.points = pts
        self.delta = float(self.delta)

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def n_obs(self):
        return self.points.shape[0]

    @property
    def times(self):
        return self.delta * np.arange(self.n_obs)

    def increments(self):
        """Wrapped increments ``cmod(Theta_i - Theta_{i-1})``, shape (N, p)."""
        return cmod(np.diff(self.points, axis=0))


def _n_steps(t_end, dt):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not t_end >= dt * (1 - 1e-12):
        raise ValueError("t_end must be at least dt")
    return int(np.floor(t_end / dt + 1e-9))


class _NoiseStream:
    """Chunked standard-normal draws; the concatenation does not depend on the chunking."""

    def __init__(self, seed, p, sigma_chol, chunk=NOISE_CHUNK):
        self.rng = np.random.Generator(np.random.PCG64(seed))
        self.p = p
        self.chol = sigma_chol
        self.chunk = chunk
        self.buf = np.empty((0, p))
        self.pos = 0

    def take(self, k):
        rows = []
        while k:
            if self.pos == self.buf.shape[0]:
                self.buf = self.rng.standard_normal((self.chunk, self.p)) @ self.chol.T
                self.pos = 0
            m = min(self.buf.shape[0] - self.pos, k)
            rows.append(self.buf[self.pos:self.pos + m])
            self.pos += m
            k -= m
        return np.concatenate(rows)


def euler_maruyama_batch(model, theta0, t_end, dt, seeds, keep_every=1, diffusion=None):
    """Simulate one trajectory per seed with the wrapped Euler scheme.

    Parameters
    ----------
    model : DiffusionModel
    theta0 : array_like, (p,) or (R, p)
        Common or per-replicate initial point.
    t_end, dt : float
        Horizon and Euler step; ``floor(t_end / dt)`` steps are taken.
    seeds : sequence of int
    keep_every : int
        Store every ``keep_every``-th state (the initial state is always kept).
    diffusion : array_like, optional
        Override the model's diffusion matrix (e.g. zero for the ODE limit).

    Returns
    -------
    ndarray, shape (R, n_kept, p)
    """
    p = model.dim
    n = _n_steps(t_end, dt)
    if keep_every < 1:
        raise ValueError("keep_every must be at least 1")
    seeds = [int(s) for s in np.atleast_1d(seeds)]
    R = len(seeds)
    start, _ = as_points(theta0, p)
    state = cmod(np.broadcast_to(start, (R, p)).copy())
    Sigma = model.diffusion_matrix() if diffusion is None else np.atleast_2d(np.asarray(diffusion, float))
    if np.any(Sigma):
        chol = np.linalg.cholesky(Sigma)
    else:
        chol = np.zeros((p, p))
    streams = [_NoiseStream(s, p, chol) for s in seeds]
    n_kept = n // keep_every + 1
    out = np.empty((R, n_kept, p))
    out[:, 0] = state
    sqdt = np.sqrt(dt)
    # pull noise in blocks across replicates for speed, keeping per-seed order
    block = NOISE_CHUNK
    for b0 in range(0, n, block):
        nb = min(block, n - b0)
        noise = np.empty((nb, R, p))
        for r, st in enumerate(streams):
            noise[:, r] = st.take(nb)
        for j in range(nb):
            b = model._drift(state)
            if not np.all(np.isfinite(b)):
                raise SimulationDiverged(b0 + j + 1)
            state = state + b * dt + sqdt * noise[j]
            wrap_inplace(state)
            step = b0 + j + 1
            if step % keep_every == 0:
                out[:, step // keep_every] = state
    return out


def euler_maruyama(model, theta0, t_end, dt, seed=0, keep_every=1, diffusion=None):
    """Single wrapped Euler-Maruyama trajectory (see :func:`euler_maruyama_batch`)."""
    pts = euler_maruyama_batch(model, theta0, t_end, dt, [seed], keep_every, diffusion)[0]
    return Trajectory(pts, dt * keep_every, seed=seed,
                      meta={"t_end": float(t_end), "dt": float(dt), "keep_every": int(keep_every)})


def subsample(traj, stride):
    """Keep observations ``0, stride, 2 stride, ...``; the time step is scaled by ``stride``."""
    if int(stride) != stride or stride < 1:
        raise ValueError("stride must be a positive integer")
    stride = int(stride)
    return replace(traj, points=traj.points[::stride].copy(), delta=traj.delta * stride,
                   meta=dict(traj.meta, stride=traj.meta.get("stride", 1) * stride))


# ---------------------------------------------------------------------------
# CSV


def write_csv(traj, path):
    """Write ``t,theta1[,theta2...]`` rows with 17 significant digits."""
    header = ",".join(["t"] + [f"theta{j + 1}" for j in range(traj.dim)])
    data = np.column_stack([traj.times, traj.points])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def read_csv(path, seed=None):
    """Read a trajectory CSV; the time step is taken from the first two rows."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if not header or header[0] != "t" or any(h != f"theta{j + 1}" for j, h in enumerate(header[1:])):
        raise ValueError(f"{path}: expected header t,theta1[,theta2,...]")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2:
        raise ValueError(f"{path}: need at least two rows")
    delta = data[1, 0] - data[0, 0]
    steps = np.diff(data[:, 0])
    if not np.allclose(steps, delta, rtol=1e-9, atol=1e-12):
        raise ValueError(f"{path}: observations are not equispaced")
    return Trajectory(data[:, 1:], delta, seed=seed)


def write_meta(path, meta):
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
