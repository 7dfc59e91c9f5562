"""Fokker-Planck solvers on periodic grids.

The 1D solver is Crank-Nicolson with a cyclic tridiagonal solve (Thomas
sweep plus a Sherman-Morrison rank-one correction, factorized once). The 2D
solver is the Douglas ADI scheme: an explicit full step followed by implicit
x- and y-corrections, each a batch of cyclic tridiagonal systems.

Grid nodes are ``x_i = -pi + i dx``, ``i = 0..M-1``, ``dx = 2 pi / M``.
Densities are normalized under the periodic trapezoid rule
``sum(u) * dx`` (``dx dy`` in 2D).
"""

from dataclasses import dataclass, field
import math
import warnings

import numba
import numpy as np

from . import densities as dens
from .densities import NumericalWarning
from .torus import TWO_PI, cmod


class NumericalError(FloatingPointError):
    """A solver broke down (zero pivot, non-finite or strongly negative values)."""


# ---------------------------------------------------------------------------
# Grids


@dataclass(frozen=True)
class Grid1D:
    Mx: int

    def __post_init__(self):
        if int(self.Mx) != self.Mx or self.Mx < 8:
            raise ValueError("grids need at least 8 nodes")
        object.__setattr__(self, "Mx", int(self.Mx))

    @property
    def dx(self):
        return TWO_PI / self.Mx

    @property
    def nodes(self):
        return -np.pi + self.dx * np.arange(self.Mx)

    @property
    def cell(self):
        return self.dx

    @property
    def shape(self):
        return (self.Mx,)

    @property
    def dim(self):
        return 1

    def points(self):
        return self.nodes[:, None]


@dataclass(frozen=True)
class Grid2D:
    Mx: int
    My: int

    def __post_init__(self):
        for m in (self.Mx, self.My):
            if int(m) != m or m < 8:
                raise ValueError("grids need at least 8 nodes per axis")
        object.__setattr__(self, "Mx", int(self.Mx))
        object.__setattr__(self, "My", int(self.My))

    @property
    def dx(self):
        return TWO_PI / self.Mx

    @property
    def dy(self):
        return TWO_PI / self.My

    @property
    def x(self):
        return -np.pi + self.dx * np.arange(self.Mx)

    @property
    def y(self):
        return -np.pi + self.dy * np.arange(self.My)

    @property
    def cell(self):
        return self.dx * self.dy

    @property
    def shape(self):
        return (self.Mx, self.My)

    @property
    def dim(self):
        return 2

    def points(self):
        """All nodes as ``(Mx*My, 2)`` in row-major order (y fastest)."""
        X, Y = np.meshgrid(self.x, self.y, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])


def make_grid(p, Mx, My=None):
    return Grid1D(Mx) if p == 1 else Grid2D(Mx, My if My is not None else Mx)


def row_stacked_indices(Mx, My):
    """Positions in the column-stacked vector ``vec(U)`` of the row-stacked ``vec(U')`` entries.

    ``vec(U')[k] = vec(U)[idx[k]]`` with ``idx[k] = (k mod My) Mx + floor(k / My)``.
    """
    k = np.arange(Mx * My)
    return (k % My) * Mx + k // My


# ---------------------------------------------------------------------------
# Cyclic tridiagonal systems
#
# Row i reads  lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = d[i]
# with x[-1] = x[n-1] through corner_upright (row 0) and x[n] = x[0]
# through corner_lowleft (row n-1); lower[0] and upper[n-1] are ignored.


@numba.njit(cache=True)
def _cyclic_factor(lower, diag, upper, cll, cur, piv, cp, z, vlast, den):
    nsys, n = diag.shape
    for s in range(nsys):
        gam = -diag[s, 0] if diag[s, 0] != 0.0 else 1.0
        vl = cur[s] / gam
        vlast[s] = vl
        # Thomas factorization of the corner-free matrix with modified ends
        b0 = diag[s, 0] - gam
        piv[s, 0] = b0
        if b0 == 0.0:
            return s * n + 1
        cp[s, 0] = upper[s, 0] / b0
        for i in range(1, n):
            bi = diag[s, i]
            if i == n - 1:
                bi -= cll[s] * vl
            m = bi - lower[s, i] * cp[s, i - 1]
            if m == 0.0:
                return s * n + i + 1
            piv[s, i] = m
            cp[s, i] = upper[s, i] / m
        # z solves B z = (gam, 0, ..., 0, cll)
        z[s, 0] = gam / piv[s, 0]
        for i in range(1, n):
            rhs = cll[s] if i == n - 1 else 0.0
            z[s, i] = (rhs - lower[s, i] * z[s, i - 1]) / piv[s, i]
        for i in range(n - 2, -1, -1):
            z[s, i] -= cp[s, i] * z[s, i + 1]
        d = 1.0 + z[s, 0] + vl * z[s, n - 1]
        if d == 0.0:
            return -(s + 1)
        den[s] = d
    return 0


@numba.njit(cache=True)
def _cyclic_solve(lower, piv, cp, z, vlast, den, rhs):
    """Solve in place for ``rhs`` of shape (k, nsys, n)."""
    nk, nsys, n = rhs.shape
    for k in range(nk):
        for s in range(nsys):
            r = rhs[k, s]
            r[0] = r[0] / piv[s, 0]
            for i in range(1, n):
                r[i] = (r[i] - lower[s, i] * r[i - 1]) / piv[s, i]
            for i in range(n - 2, -1, -1):
                r[i] -= cp[s, i] * r[i + 1]
            f = (r[0] + vlast[s] * r[n - 1]) / den[s]
            for i in range(n):
                r[i] -= f * z[s, i]


class CyclicFactorization:
    """Reusable factorization of a batch of cyclic tridiagonal systems.

    Arrays are ``(nsys, n)`` (or ``(n,)`` for a single system); corners are
    ``(nsys,)`` or scalars.
    """

    def __init__(self, diag, upper, lower, corner_lowleft, corner_upright):
        diag = np.atleast_2d(np.asarray(diag, dtype=float))
        nsys, n = diag.shape
        if n < 3:
            raise ValueError("cyclic systems need at least three unknowns")
        upper = np.ascontiguousarray(np.broadcast_to(np.asarray(upper, float), (nsys, n)))
        lower = np.ascontiguousarray(np.broadcast_to(np.asarray(lower, float), (nsys, n)))
        cll = np.ascontiguousarray(np.broadcast_to(np.asarray(corner_lowleft, float), (nsys,)))
        cur = np.ascontiguousarray(np.broadcast_to(np.asarray(corner_upright, float), (nsys,)))
        self.lower = lower
        self.piv = np.empty((nsys, n))
        self.cp = np.empty((nsys, n))
        self.z = np.empty((nsys, n))
        self.vlast = np.empty(nsys)
        self.den = np.empty(nsys)
        status = _cyclic_factor(lower, np.ascontiguousarray(diag), upper, cll, cur,
                                self.piv, self.cp, self.z, self.vlast, self.den)
        if status > 0:
            s, i = divmod(status - 1, n)
            raise NumericalError(f"zero pivot in system {s} at row {i}")
        if status < 0:
            raise NumericalError(f"singular rank-one correction in system {-status - 1}")
        self.nsys, self.n = nsys, n

    def solve(self, rhs, inplace=False):
        """Solve for right-hand sides shaped ``(n,)``, ``(nsys, n)`` or ``(k, nsys, n)``."""
        rhs = np.asarray(rhs, dtype=float)
        shape = rhs.shape
        r = rhs if inplace else rhs.copy()
        r = r.reshape(-1, self.nsys, self.n)
        if not r.flags.c_contiguous:
            r = np.ascontiguousarray(r)
        _cyclic_solve(self.lower, self.piv, self.cp, self.z, self.vlast, self.den, r)
        return r.reshape(shape)


def solve_periodic_tridiagonal(diag, upper, lower, corner_lowleft, corner_upright, rhs):
    """Solve one cyclic tridiagonal system (see :class:`CyclicFactorization`)."""
    fac = CyclicFactorization(diag, upper, lower, corner_lowleft, corner_upright)
    return fac.solve(np.asarray(rhs, float)[None]).reshape(np.shape(rhs))


def cyclic_dense(diag, upper, lower, corner_lowleft, corner_upright):
    """Dense matrix of a single cyclic tridiagonal system."""
    n = len(diag)
    M = np.diag(np.asarray(diag, float))
    M[np.arange(n - 1), np.arange(1, n)] = upper[:-1]
    M[np.arange(1, n), np.arange(n - 1)] = lower[1:]
    M[0, n - 1] += corner_upright
    M[n - 1, 0] += corner_lowleft
    return M


# ---------------------------------------------------------------------------
# Solutions


@dataclass
class PdeSolution:
    """Grid densities ``u`` at the stored times, plus the mass after every step.

    ``u`` has shape ``(k, n_saved) + grid.shape`` for ``k`` simultaneous
    initial conditions; ``mass`` is ``(k, Mt + 1)``.
    """

    u: np.ndarray
    times: np.ndarray
    mass: np.ndarray
    dt: float
    grid: object
    min_value: float = 0.0

    @property
    def final(self):
        return self.u[:, -1]

    def to_rows(self, column=0):
        """Long-format rows ``(t, x[, y], u)`` for one initial condition."""
        g = self.grid
        pts = g.points()
        rows = []
        for ti, t in enumerate(self.times):
            vals = self.u[column, ti].reshape(-1)
            rows.append(np.column_stack([np.full(len(vals), t), pts, vals]))
        return np.concatenate(rows)

    def write_csv(self, path, column=0):
        header = "t,x,u" if self.grid.dim == 1 else "t,x,y,u"
        np.savetxt(path, self.to_rows(column), delimiter=",", header=header, comments="", fmt="%.17g")


def _check_undershoot(u):
    lo = float(np.min(u))
    if not np.all(np.isfinite(u)):
        raise NumericalError("non-finite values in the PDE solution")
    if lo < -1e-6:
        raise NumericalError(f"PDE solution undershoots to {lo:.3g}; refine the grid or the time step")
    if lo < -1e-12:
        warnings.warn(f"PDE solution undershoots to {lo:.3g}", NumericalWarning, stacklevel=3)
    return lo


def _save_plan(Mt, save_every):
    if save_every is None:
        return np.array([0, Mt]) if Mt > 0 else np.array([0])
    steps = np.arange(0, Mt + 1, int(save_every))
    return steps if steps[-1] == Mt else np.append(steps, Mt)


# ---------------------------------------------------------------------------
# 1D Crank-Nicolson


def cn_coefficients(b_nodes, sigma2_nodes, dt, dx):
    """``(alpha, beta, gamma)`` of the Crank-Nicolson stencil with ``r = dt / (4 dx^2)``."""
    b = np.asarray(b_nodes, dtype=float)
    s2 = np.broadcast_to(np.asarray(sigma2_nodes, dtype=float), b.shape)
    r = dt / (4 * dx * dx)
    gam = (-np.roll(b, -1) * dx + np.roll(s2, -1)) * r
    beta = s2 * r
    alp = (np.roll(b, 1) * dx + np.roll(s2, 1)) * r
    return alp, beta, gam


@numba.njit(cache=True)
def _cn_run(alp, beta, gam, lower, piv, cp, z, vlast, den, U, Mt, save_steps, saved, mass, dx):
    nk, n = U.shape
    rhs = np.empty((1, 1, n))
    si = 1 if save_steps[0] == 0 else 0
    for k in range(nk):
        mass[k, 0] = U[k].sum() * dx
    for step in range(1, Mt + 1):
        for k in range(nk):
            u = U[k]
            for i in range(n):
                up = u[i + 1] if i < n - 1 else u[0]
                um = u[i - 1] if i > 0 else u[n - 1]
                rhs[0, 0, i] = -gam[i] * up + (2.0 * beta[i] - 1.0) * u[i] - alp[i] * um
            _cyclic_solve(lower, piv, cp, z, vlast, den, rhs)
            for i in range(n):
                u[i] = rhs[0, 0, i]
            mass[k, step] = u.sum() * dx
        if si < save_steps.shape[0] and save_steps[si] == step:
            for k in range(nk):
                saved[k, si] = U[k]
            si += 1


def cn_solve_1d(b_nodes, sigma2_nodes, u0, dt, Mt, save_every=None, check=True):
    """Advance ``Mt`` Crank-Nicolson steps of the 1D Fokker-Planck equation.

    Parameters
    ----------
    b_nodes, sigma2_nodes : array_like, (Mx,)
        Drift and squared diffusion at the grid nodes.
    u0 : array_like, (Mx,) or (k, Mx)
        Initial densities; several are advanced together.
    dt : float
    Mt : int
    save_every : int, optional
        Store every ``save_every``-th step; by default only the first and last.
    """
    b = np.asarray(b_nodes, dtype=float)
    n = b.size
    grid = Grid1D(n)
    dx = grid.dx
    U = np.array(np.atleast_2d(u0), dtype=float)
    if U.shape[1] != n:
        raise ValueError("initial density does not match the grid")
    alp, beta, gam = cn_coefficients(b, sigma2_nodes, dt, dx)
    fac = CyclicFactorization(-2 * beta - 1, gam, alp, gam[-1], alp[0])
    plan = _save_plan(int(Mt), save_every)
    saved = np.empty((U.shape[0], plan.size, n))
    saved[:, 0] = U
    mass = np.empty((U.shape[0], int(Mt) + 1))
    _cn_run(alp, beta, gam, fac.lower, fac.piv, fac.cp, fac.z, fac.vlast, fac.den,
            U, int(Mt), plan, saved, mass, dx)
    lo = _check_undershoot(U) if check else float(U.min())
    return PdeSolution(saved, plan * dt, mass, dt, grid, lo)


def cn_operator_dense(b_nodes, sigma2_nodes, dx):
    """Dense semi-discrete operator ``L`` with ``du/dt = L u`` (used as an oracle)."""
    alp, beta, gam = cn_coefficients(b_nodes, sigma2_nodes, 1.0, dx)
    n = len(beta)
    # coefficients carry r = 1/(4 dx^2); the semi-discrete operator is 2 F / dt
    return 2 * cyclic_dense(-2 * beta, gam, alp, gam[-1], alp[0])


# ---------------------------------------------------------------------------
# 2D Douglas ADI


def adi_coefficients(b_x, b_y, sigma2_x, sigma2_y, sigma_xy, dt, dx, dy):
    """Stencil arrays on the ``(Mx, My)`` grid, all scaled by ``dt/2``."""
    bx = np.asarray(b_x, dtype=float)
    shape = bx.shape
    by = np.broadcast_to(np.asarray(b_y, float), shape)
    sx = np.broadcast_to(np.asarray(sigma2_x, float), shape)
    sy = np.broadcast_to(np.asarray(sigma2_y, float), shape)
    sxy = np.broadcast_to(np.asarray(sigma_xy, float), shape)
    rx = dt / (4 * dx * dx)
    ry = dt / (4 * dy * dy)
    rxy = dt / (8 * dx * dy)
    Gx = (-np.roll(bx, -1, 0) * dx + np.roll(sx, -1, 0)) * rx
    Ax = (np.roll(bx, 1, 0) * dx + np.roll(sx, 1, 0)) * rx
    Bx = sx * rx
    Gy = (-np.roll(by, -1, 1) * dy + np.roll(sy, -1, 1)) * ry
    Ay = (np.roll(by, 1, 1) * dy + np.roll(sy, 1, 1)) * ry
    By = sy * ry
    Cpp = np.roll(sxy, (-1, -1), (0, 1)) * rxy
    Cpm = np.roll(sxy, (-1, 1), (0, 1)) * rxy
    Cmp = np.roll(sxy, (1, -1), (0, 1)) * rxy
    Cmm = np.roll(sxy, (1, 1), (0, 1)) * rxy
    return {k: np.ascontiguousarray(v) for k, v in dict(
        Gx=Gx, Ax=Ax, Bx=Bx, Gy=Gy, Ay=Ay, By=By, Cpp=Cpp, Cpm=Cpm, Cmp=Cmp, Cmm=Cmm).items()}


@numba.njit(cache=True)
def _adi_explicit(U, Gx, Ax, Bx, Gy, Ay, By, Cpp, Cpm, Cmp, Cmm, R1, Lyv):
    """Fill ``R1 = U + 2(Lx+Ly+Lxy) - Lx`` and ``Lyv = Ly``."""
    Mx, My = U.shape
    for i in range(Mx):
        ip = i + 1 if i < Mx - 1 else 0
        im = i - 1 if i > 0 else Mx - 1
        for j in range(My):
            jp = j + 1 if j < My - 1 else 0
            jm = j - 1 if j > 0 else My - 1
            u = U[i, j]
            lx = Gx[i, j] * U[ip, j] - 2.0 * Bx[i, j] * u + Ax[i, j] * U[im, j]
            ly = Gy[i, j] * U[i, jp] - 2.0 * By[i, j] * u + Ay[i, j] * U[i, jm]
            lxy = (Cpp[i, j] * U[ip, jp] - Cpm[i, j] * U[ip, jm]
                   - Cmp[i, j] * U[im, jp] + Cmm[i, j] * U[im, jm])
            R1[i, j] = u + 2.0 * (lx + ly + lxy) - lx
            Lyv[i, j] = ly


@numba.njit(cache=True)
def _sweep_rows(R, lower, ipiv, cp, z, vlast, iden, f):
    """Cyclic solves with unknowns along axis 0 and one system per column.

    Factor arrays are laid out like ``R``; the recursion runs over rows and
    is independent across the contiguous column axis.
    """
    n, ns = R.shape
    for s in range(ns):
        R[0, s] *= ipiv[0, s]
    for i in range(1, n):
        for s in range(ns):
            R[i, s] = (R[i, s] - lower[i, s] * R[i - 1, s]) * ipiv[i, s]
    for i in range(n - 2, -1, -1):
        for s in range(ns):
            R[i, s] -= cp[i, s] * R[i + 1, s]
    for s in range(ns):
        f[s] = (R[0, s] + vlast[s] * R[n - 1, s]) * iden[s]
    for i in range(n):
        for s in range(ns):
            R[i, s] -= f[s] * z[i, s]


@numba.njit(cache=True)
def _sweep_cols(R, lower, ipiv, cp, z, vlast, iden, f):
    """Cyclic solves with unknowns along axis 1 and one system per row."""
    ns, n = R.shape
    for s in range(ns):
        R[s, 0] *= ipiv[s, 0]
    for i in range(1, n):
        for s in range(ns):
            R[s, i] = (R[s, i] - lower[s, i] * R[s, i - 1]) * ipiv[s, i]
    for i in range(n - 2, -1, -1):
        for s in range(ns):
            R[s, i] -= cp[s, i] * R[s, i + 1]
    for s in range(ns):
        f[s] = (R[s, 0] + vlast[s] * R[s, n - 1]) * iden[s]
    for i in range(n):
        for s in range(ns):
            R[s, i] -= f[s] * z[s, i]


@numba.njit(cache=True)
def _adi_run(U, co, fx, fy, Mt, save_steps, saved, mass, cell):
    (Gx, Ax, Bx, Gy, Ay, By, Cpp, Cpm, Cmp, Cmm) = co
    (lx_, px, cx, zx, vx, dnx) = fx
    (ly_, py, cy, zy, vy, dny) = fy
    nk, Mx, My = U.shape
    R1 = np.empty((Mx, My))
    Lyv = np.empty((Mx, My))
    fwork = np.empty(max(Mx, My))
    si = 1 if save_steps[0] == 0 else 0
    for k in range(nk):
        mass[k, 0] = U[k].sum() * cell
    for step in range(1, Mt + 1):
        for k in range(nk):
            u = U[k]
            _adi_explicit(u, Gx, Ax, Bx, Gy, Ay, By, Cpp, Cpm, Cmp, Cmm, R1, Lyv)
            _sweep_rows(R1, lx_, px, cx, zx, vx, dnx, fwork)
            for i in range(Mx):
                for j in range(My):
                    u[i, j] = R1[i, j] - Lyv[i, j]
            _sweep_cols(u, ly_, py, cy, zy, vy, dny, fwork)
            mass[k, step] = u.sum() * cell
        if si < save_steps.shape[0] and save_steps[si] == step:
            for k in range(nk):
                saved[k, si] = U[k]
            si += 1


def _sweep_arrays(fac, transpose):
    """Factor arrays for the sweep kernels, with reciprocal pivots."""
    arrs = [fac.lower, 1.0 / fac.piv, fac.cp, fac.z]
    if transpose:
        arrs = [np.ascontiguousarray(a.T) for a in arrs]
    return tuple(arrs) + (fac.vlast, 1.0 / fac.den)


def adi_factorizations(co):
    # x-sweep: one system per y index, unknowns along x
    fx = CyclicFactorization((1 + 2 * co["Bx"]).T, -co["Gx"].T, -co["Ax"].T, -co["Gx"][-1, :], -co["Ax"][0, :])
    fy = CyclicFactorization(1 + 2 * co["By"], -co["Gy"], -co["Ay"], -co["Gy"][:, -1], -co["Ay"][:, 0])
    return fx, fy


def adi_solve_2d(b_x, b_y, sigma2_x, sigma2_y, sigma_xy, u0, dt, Mt, save_every=None, check=True):
    """Advance ``Mt`` Douglas ADI steps of the 2D Fokker-Planck equation.

    Node arrays are ``(Mx, My)`` (scalars broadcast); ``sigma_xy`` is the
    off-diagonal entry of the diffusion matrix. ``u0`` is ``(Mx, My)`` or
    ``(k, Mx, My)``.
    """
    bx = np.asarray(b_x, dtype=float)
    Mx, My = bx.shape
    grid = Grid2D(Mx, My)
    U = np.array(u0, dtype=float)
    if U.ndim == 2:
        U = U[None]
    if U.shape[1:] != (Mx, My):
        raise ValueError("initial density does not match the grid")
    co = adi_coefficients(bx, b_y, sigma2_x, sigma2_y, sigma_xy, dt, grid.dx, grid.dy)
    fx, fy = adi_factorizations(co)
    plan = _save_plan(int(Mt), save_every)
    saved = np.empty((U.shape[0], plan.size, Mx, My))
    saved[:, 0] = U
    mass = np.empty((U.shape[0], int(Mt) + 1))
    keys = ("Gx", "Ax", "Bx", "Gy", "Ay", "By", "Cpp", "Cpm", "Cmp", "Cmm")
    _adi_run(U, tuple(co[k] for k in keys), _sweep_arrays(fx, True), _sweep_arrays(fy, False),
             int(Mt), plan, saved, mass, grid.cell)
    lo = _check_undershoot(U) if check else float(U.min())
    return PdeSolution(saved, plan * dt, mass, dt, grid, lo)


def fp_operator_dense_2d(b_x, b_y, sigma2_x, sigma2_y, sigma_xy, dx, dy):
    """Dense semi-discrete 2D operator on row-major ``vec`` (oracle for small grids)."""
    bx = np.asarray(b_x, float)
    Mx, My = bx.shape
    by = np.broadcast_to(np.asarray(b_y, float), bx.shape)
    sx = np.broadcast_to(np.asarray(sigma2_x, float), bx.shape)
    sy = np.broadcast_to(np.asarray(sigma2_y, float), bx.shape)
    sxy = np.broadcast_to(np.asarray(sigma_xy, float), bx.shape)
    n = Mx * My
    L = np.zeros((n, n))

    def idx(i, j):
        return (i % Mx) * My + (j % My)

    for i in range(Mx):
        for j in range(My):
            row = idx(i, j)
            # -d/dx (b_x u) + 1/2 d2/dx2 (s_x u), central differences
            L[row, idx(i + 1, j)] += -bx[(i + 1) % Mx, j] / (2 * dx) + sx[(i + 1) % Mx, j] / (2 * dx * dx)
            L[row, idx(i - 1, j)] += bx[(i - 1) % Mx, j] / (2 * dx) + sx[(i - 1) % Mx, j] / (2 * dx * dx)
            L[row, idx(i, j)] += -sx[i, j] / (dx * dx) - sy[i, j] / (dy * dy)
            L[row, idx(i, j + 1)] += -by[i, (j + 1) % My] / (2 * dy) + sy[i, (j + 1) % My] / (2 * dy * dy)
            L[row, idx(i, j - 1)] += by[i, (j - 1) % My] / (2 * dy) + sy[i, (j - 1) % My] / (2 * dy * dy)
            for si, sj, sg in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                L[row, idx(i + si, j + sj)] += sg * sxy[(i + si) % Mx, (j + sj) % My] / (4 * dx * dy)
    return L


# ---------------------------------------------------------------------------
# Model-level helpers


def model_coefficients(model, grid):
    """Drift and diffusion node arrays of ``model`` on ``grid``."""
    V = model.diffusion_matrix()
    if grid.dim == 1:
        b = model.drift(grid.points())[:, 0]
        return b, np.full(grid.Mx, V[0, 0])
    b = model.drift(grid.points()).reshape(grid.Mx, grid.My, 2)
    return b[..., 0], b[..., 1], V[0, 0], V[1, 1], V[0, 1]


def initial_condition(theta0, sigma0, grid):
    """Discretized ``WN(theta0, sigma0^2 I)`` on ``grid``, normalized to unit trapezoid mass.

    Warns when the raw mass deviates from one by more than 1e-4 and rejects
    deviations above 1e-2.
    """
    if not sigma0 > 0:
        raise ValueError("sigma0 must be positive")
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    s2 = np.array([[sigma0**2]])
    if grid.dim == 1:
        u = dens.wn_density(grid.nodes, theta0[0], s2)
    else:
        ux = dens.wn_density(grid.x, theta0[0], s2)
        uy = dens.wn_density(grid.y, theta0[1], s2)
        u = np.outer(ux, uy)
    mass = u.sum() * grid.cell
    dev = abs(mass - 1)
    if dev > 1e-2:
        raise ValueError(f"initial condition mass {mass:.6g} is off by {dev:.3g}; increase sigma0 or refine the grid")
    if dev > 1e-4:
        warnings.warn(f"initial condition mass deviates from one by {dev:.3g}", NumericalWarning, stacklevel=2)
    return u / mass


def default_Mt(delta):
    return max(1, int(math.ceil(100 * delta)))


def solve_model(model, grid, u0, t, Mt=None, save_every=None, check=True):
    """Advance initial densities ``u0`` by time ``t`` under ``model``."""
    Mt = default_Mt(t) if Mt is None else int(Mt)
    dt = t / Mt
    if grid.dim == 1:
        b, s2 = model_coefficients(model, grid)
        return cn_solve_1d(b, s2, u0, dt, Mt, save_every, check)
    bx, by, sx, sy, sxy = model_coefficients(model, grid)
    return adi_solve_2d(bx, by, sx, sy, sxy, u0, dt, Mt, save_every, check)


# ---------------------------------------------------------------------------
# Transition-density matrix


def symmetry_map(model, grid, tol=1e-9):
    """Node reflection ``i -> (s - i) mod M`` about the drift's antisymmetry centre.

    Returns one index array per axis, or ``None`` when the model has no
    antisymmetry centre or the grid is not centred on it.
    """
    center = model.antisymmetry_center
    if center is None:
        return None
    center = np.atleast_1d(center)
    maps = []
    sizes = grid.shape
    for c, M in zip(center, sizes):
        s = 2 * (c + np.pi) / (TWO_PI / M)
        if abs(s - round(s)) > tol:
            return None
        maps.append((int(round(s)) - np.arange(M)) % M)
    return maps


@dataclass
class TpdMatrix:
    """Transition densities between grid nodes at lag ``delta``.

    ``values[:, c]`` is the grid density started from ``WN(node, sigma0^2 I)``
    at source node ``columns[c]`` (sources flattened row-major in 2D). Only
    the requested columns are stored; ``dense()`` expands to the full
    matrix with NaN in the missing columns.
    """

    values: np.ndarray
    columns: np.ndarray
    delta: float
    sigma0: float
    grid: object
    Mt: int
    n_solved: int = 0

    def positions(self, idx):
        pos = np.searchsorted(self.columns, idx)
        if np.any(pos >= self.columns.size) or np.any(self.columns[np.minimum(pos, self.columns.size - 1)] != idx):
            raise KeyError("requested source node was not computed")
        return pos

    def column(self, j):
        return self.values[:, self.positions(np.asarray([j]))[0]]

    def dense(self):
        n = self.values.shape[0]
        P = np.full((n, n), np.nan)
        P[:, self.columns] = self.values
        return P

    def write_csv(self, path):
        src = self.grid.points()[self.columns]
        if self.grid.dim == 1:
            header = ",".join(f"{x:.17g}" for x in src[:, 0])
        else:
            header = ",".join(f"{x:.17g};{y:.17g}" for x, y in src)
        np.savetxt(path, self.values, delimiter=",", header=header, comments="", fmt="%.17g")


def _reflection(model, grid):
    maps = symmetry_map(model, grid)
    if maps is None:
        return None
    if grid.dim == 1:
        return maps[0]
    I, J = np.meshgrid(maps[0], maps[1], indexing="ij")
    return (I * grid.My + J).ravel()


def tpd_matrix(model, delta, grid, sigma0=0.1, symmetry=True, columns=None, Mt=None, batch=64):
    """Transition-density matrix on ``grid`` for lag ``delta``.

    Parameters
    ----------
    columns : array_like of int, optional
        Source nodes needed (flattened); all nodes by default.
    symmetry : bool
        When the drift is antisymmetric about a point the grid is centred on,
        solve only one column of each reflected pair and fill the other by
        ``p(theta | phi) = p(2 mu - theta | 2 mu - phi)``.
    """
    n = int(np.prod(grid.shape))
    want = np.arange(n) if columns is None else np.unique(np.asarray(columns, dtype=int))
    refl = _reflection(model, grid) if symmetry else None
    solve_set = want if refl is None else np.unique(np.minimum(want, refl[want]))
    pts = grid.points()
    Mt = default_Mt(delta) if Mt is None else int(Mt)
    solved = np.empty((n, solve_set.size))
    for b0 in range(0, solve_set.size, batch):
        cols = solve_set[b0:b0 + batch]
        u0 = np.stack([initial_condition(pts[c], sigma0, grid) for c in cols])
        sol = solve_model(model, grid, u0, delta, Mt)
        solved[:, b0:b0 + len(cols)] = sol.final.reshape(len(cols), n).T
    if refl is None:
        values = solved
    else:
        # column j equals column r(j) read at reflected rows
        pos_direct = np.searchsorted(solve_set, want)
        direct = (pos_direct < solve_set.size) & (solve_set[np.minimum(pos_direct, solve_set.size - 1)] == want)
        values = np.empty((n, want.size))
        values[:, direct] = solved[:, pos_direct[direct]]
        other = ~direct
        src = np.searchsorted(solve_set, refl[want[other]])
        values[:, other] = solved[refl][:, src]
    return TpdMatrix(values, want, float(delta), float(sigma0), grid, Mt, int(solve_set.size))


# ---------------------------------------------------------------------------
# Likelihood


def interpolation_nodes(theta, grid):
    """Lower node indices and linear weights per axis, each ``(n, p)``.

    ``l = floor((theta + pi) / dx) mod M``, weights ``(1 - w, w)`` for nodes
    ``l`` and ``l + 1`` with ``w = (theta - x_l) / dx``.
    """
    theta = np.atleast_2d(np.asarray(theta, dtype=float))
    steps = np.array([TWO_PI / m for m in grid.shape])
    sizes = np.array(grid.shape)
    pos = (cmod(theta) + np.pi) / steps
    lo = np.floor(pos).astype(int)
    w = pos - lo
    return lo % sizes, w


def _corners(theta, grid, constant=False):
    """Flattened node indices ``(n, c)`` and weights ``(n, c)`` of the interpolation stencil."""
    lo, w = interpolation_nodes(theta, grid)
    sizes = grid.shape
    if constant:
        near = np.where(w >= 0.5, (lo + 1) % np.array(sizes), lo)
        if grid.dim == 1:
            return near[:, :1], np.ones((len(lo), 1))
        return (near[:, 0] * sizes[1] + near[:, 1])[:, None], np.ones((len(lo), 1))
    if grid.dim == 1:
        idx = np.stack([lo[:, 0], (lo[:, 0] + 1) % sizes[0]], 1)
        return idx, np.stack([1 - w[:, 0], w[:, 0]], 1)
    ix = np.stack([lo[:, 0], (lo[:, 0] + 1) % sizes[0]], 1)
    iy = np.stack([lo[:, 1], (lo[:, 1] + 1) % sizes[1]], 1)
    wx = np.stack([1 - w[:, 0], w[:, 0]], 1)
    wy = np.stack([1 - w[:, 1], w[:, 1]], 1)
    idx = (ix[:, :, None] * sizes[1] + iy[:, None, :]).reshape(-1, 4)
    ww = (wx[:, :, None] * wy[:, None, :]).reshape(-1, 4)
    return idx, ww


@dataclass
class PdeLikelihoodConfig:
    """Knobs of the PDE likelihood.

    ``interpolation`` applies to the conditioning point (``"bilinear"`` or
    ``"constant"``); the arrival point is always interpolated linearly.
    ``initial`` is ``"sdi"`` (stationary log-density of the first
    observation) or ``"none"``.
    """

    Mx: int = 500
    My: int = None
    sigma0: float = 0.1
    Mt: int = None
    interpolation: str = "bilinear"
    initial: str = "sdi"
    symmetry: bool = True
    floor: float = 1e-300


def transition_densities_pde(traj, model, config=PdeLikelihoodConfig()):
    """Interpolated transition densities ``p(Theta_i | Theta_{i-1})``, length N."""
    pts = traj.points
    grid = make_grid(traj.dim, config.Mx, config.My)
    src_idx, src_w = _corners(pts[:-1], grid, constant=config.interpolation == "constant")
    dst_idx, dst_w = _corners(pts[1:], grid)
    tm = tpd_matrix(model, traj.delta, grid, config.sigma0, config.symmetry, src_idx.ravel(), config.Mt)
    cols = tm.positions(src_idx)
    vals = np.einsum("nk,nkl,nl->n", dst_w, tm.values[dst_idx[:, :, None], cols[:, None, :]], src_w)
    return vals


def loglik_pde(traj, model, config=PdeLikelihoodConfig(), return_info=False):
    """PDE-based log-likelihood of a trajectory.

    Interpolated densities are floored at ``config.floor`` before the log;
    the number of floored transitions is reported when ``return_info``.
    """
    vals = transition_densities_pde(traj, model, config)
    if not np.all(np.isfinite(vals)):
        bad = np.flatnonzero(~np.isfinite(vals))
        raise NumericalError(f"non-finite transition densities at transitions {bad[:10].tolist()}")
    floored = vals < config.floor
    ll = float(np.sum(np.log(np.maximum(vals, config.floor))))
    if config.initial == "sdi":
        ll += float(model.stationary_logdensity(traj.points[:1])[0])
    elif config.initial != "none":
        raise ValueError("initial must be 'sdi' or 'none'")
    if return_info:
        return ll, {"floored": int(floored.sum())}
    return ll
