"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure
(including a fit that did not converge; its best point is still written).
Outputs go to ``--outdir`` (default ``$TORUSDIFF_OUTDIR`` or the working
directory) and are never overwritten without ``--force``. Every artifact
gets a ``.meta.json`` sidecar holding the version and the full argument
list, so ``torusdiff rerun <sidecar> --force`` regenerates it.
"""

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import estimation as est
from . import models as mdl
from . import pde
from . import simulate as sim
from . import tpd
from .torus import cmod

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
OUTDIR_ENV = "TORUSDIFF_OUTDIR"


class ConfigError(Exception):
    """Invalid user input; maps to exit code 2."""


class NumericFailure(Exception):
    """Numerical failure after outputs were written; maps to exit code 3."""


# ---------------------------------------------------------------------------
# helpers


def _load_model(spec):
    """Model from a JSON file path or an inline JSON object."""
    text = spec
    if not spec.lstrip().startswith("{"):
        if not os.path.exists(spec):
            raise ConfigError(f"model file not found: {spec}")
        with open(spec) as fh:
            text = fh.read()
    try:
        return mdl.model_from_json(text)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid model {spec}: {exc}") from exc


def _load_traj(path):
    if not os.path.exists(path):
        raise ConfigError(f"trajectory file not found: {path}")
    try:
        return sim.read_csv(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _time_grid(text):
    """``a:b:n`` (n equispaced values, ends included) or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"time grid must be a:b:n, got {text!r}")
        try:
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as exc:
            raise ConfigError(f"bad time grid {text!r}") from exc
        if n < 1 or not 0 < a <= b:
            raise ConfigError(f"bad time grid {text!r}")
        return np.linspace(a, b, n).tolist()
    vals = _floats(text)
    if not vals or min(vals) <= 0:
        raise ConfigError("times must be positive")
    return vals


def _kind(text):
    k = text.strip().upper()
    aliases = {"EVM": "EvM", "SOVM": "SOvM"}
    k = aliases.get(k, k)
    if k not in est.LIKELIHOOD_KINDS:
        raise ConfigError(f"unknown likelihood kind {text!r}; choose from {', '.join(est.LIKELIHOOD_KINDS)}")
    return k


def _parse_fixed(items):
    fixed = {}
    for item in items or []:
        for part in item.split(";"):
            if not part.strip():
                continue
            name, sep, val = part.partition("=")
            if not sep:
                raise ConfigError(f"--fix expects name=value, got {part!r}")
            name, val = name.strip(), val.strip()
            if val in ("smle", "free"):
                fixed[name] = val
            else:
                nums = _floats(val)
                fixed[name] = nums[0] if len(nums) == 1 else nums
    return fixed


def _outdir(args):
    d = args.outdir or os.environ.get(OUTDIR_ENV) or "."
    os.makedirs(d, exist_ok=True)
    return d


def _target(args, default_name):
    path = args.out if getattr(args, "out", None) else os.path.join(_outdir(args), default_name)
    if os.path.exists(path) and not args.force:
        raise ConfigError(f"refusing to overwrite {path} (use --force)")
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    return path


def _meta(args, extra=None):
    meta = {"version": __version__, "command": args.command, "argv": args.argv}
    if extra:
        meta.update(extra)
    return meta


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _sidecar(path, meta):
    _write_json(os.path.splitext(path)[0] + ".meta.json", meta)


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args):
    model = _load_model(args.model)
    if args.theta0 is not None:
        theta0 = np.array(_floats(args.theta0))
        if theta0.size != model.dim:
            raise ConfigError(f"--theta0 needs {model.dim} values")
        theta0 = cmod(theta0)
    else:
        theta0 = model.sample_stationary(1, np.random.default_rng([args.seed, 1]))[0]
    path = _target(args, f"simulate_seed{args.seed}.csv")
    try:
        traj = sim.euler_maruyama(model, theta0, args.t_end, args.dt, seed=args.seed, keep_every=args.keep_every)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sim.write_csv(traj, path)
    _sidecar(path, _meta(args, {"seed": args.seed, "model": model.to_dict(), "theta0": theta0.tolist(),
                                "t_end": args.t_end, "dt": args.dt, "keep_every": args.keep_every,
                                "rows": traj.n_obs}))
    return path


def cmd_fit(args):
    traj = _load_traj(args.traj)
    kind = _kind(args.likelihood)
    fixed = _parse_fixed(args.fix)
    opt = est.OptimizerConfig(args.max_evals, args.fatol, args.xatol, args.restarts)
    pcfg = pde.PdeLikelihoodConfig(Mx=args.Mx, My=args.My, sigma0=args.sigma0, Mt=args.Mt)
    config = est.FitConfig(opt, args.initial, wou_radii=(2, 1), pde_config=pcfg)
    path = _target(args, f"fit_{args.family}_{kind}.json")
    try:
        res = est.fit(traj, args.family, kind, config, fixed=fixed, m=args.components)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = res.to_dict(include_time=args.timing)
    out["meta"] = _meta(args, {"trajectory": os.path.abspath(args.traj), "seed": args.seed,
                               "config": {"optimizer": vars(opt), "initial": args.initial,
                                          "pde": {"Mx": args.Mx, "My": args.My, "sigma0": args.sigma0,
                                                  "Mt": args.Mt}}})
    _write_json(path, out)
    if not res.converged:
        raise NumericFailure(f"optimizer did not converge; best point written to {path}")
    return path


def cmd_tpd(args):
    model = _load_model(args.model)
    kind = _kind(args.kind)
    theta0 = cmod(np.array(_floats(args.theta0)))
    if theta0.size != model.dim:
        raise ConfigError(f"--theta0 needs {model.dim} values")
    grid = pde.make_grid(model.dim, args.Mx, args.My)
    pts = grid.points()
    path = _target(args, f"tpd_{kind}.csv")
    if kind == "PDE":
        u0 = pde.initial_condition(theta0, args.sigma0, grid)[None]
        vals = pde.solve_model(model, grid, u0, args.delta, args.Mt).final[0].ravel()
    else:
        try:
            vals = np.exp(tpd.log_tpd(kind, model, pts, np.broadcast_to(theta0, pts.shape), args.delta))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    header = "x,density" if model.dim == 1 else "x,y,density"
    np.savetxt(path, np.column_stack([pts, vals]), delimiter=",", header=header, comments="", fmt="%.17g")
    _sidecar(path, _meta(args, {"model": model.to_dict(), "kind": kind, "delta": args.delta,
                                "theta0": theta0.tolist(), "grid": list(grid.shape)}))
    return path


def cmd_pde(args):
    model = _load_model(args.model)
    if model.dim > 2:
        raise ConfigError("the PDE solver supports p <= 2")
    grid = pde.make_grid(model.dim, args.Mx, args.My)
    if args.theta0 is None:
        u0 = model.stationary_density(grid.points()).reshape(grid.shape)
        u0 = (u0 / (u0.sum() * grid.cell))[None]
        start = "stationary"
    else:
        theta0 = cmod(np.array(_floats(args.theta0)))
        if theta0.size != model.dim:
            raise ConfigError(f"--theta0 needs {model.dim} values")
        u0 = pde.initial_condition(theta0, args.sigma0, grid)[None]
        start = theta0.tolist()
    Mt = args.Mt or max(1, int(np.ceil(args.mt_per_time * args.t)))
    path = _target(args, f"pde_t{args.t:g}.csv")
    sol = pde.solve_model(model, grid, u0, args.t, Mt, save_every=args.save_every)
    sol.write_csv(path)
    _sidecar(path, _meta(args, {"model": model.to_dict(), "grid": list(grid.shape), "t": args.t, "Mt": Mt,
                                "sigma0": args.sigma0, "start": start,
                                "mass_drift": float(np.abs(sol.mass[0] - sol.mass[0, 0]).max())}))
    return path


def cmd_kl(args):
    model = _load_model(args.model)
    methods = [_kind(m) if m.upper() != "PDE" else "PDE" for m in args.methods.split(",")]
    times = _time_grid(args.t)
    grid = pde.make_grid(model.dim, args.Mx, args.My)
    path = _target(args, "kl.csv")
    curves = dg.kl_curve(model, methods, times, args.sigma0, grid, args.sources, args.mt_per_time)
    dg.write_kl_csv([curves[m] for m in methods], path, label=args.label)
    _sidecar(path, _meta(args, {"model": model.to_dict(), "grid": list(grid.shape), "sigma0": args.sigma0,
                                "sources": curves[methods[0]].n_sources, "mt_per_time": args.mt_per_time,
                                "times": times}))
    return path


def cmd_re(args):
    deltas = _floats(args.deltas)
    try:
        scenarios = [dg.scenario_from_name(s.strip(), d, args.n) for s in args.scenario.split(",") for d in deltas]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    methods = [_kind(m) for m in args.methods.split(",")]
    if args.J < 2:
        raise ConfigError("--J must be at least 2")
    path = _target(args, "re.csv")
    config = est.FitConfig(est.OptimizerConfig(args.max_evals), args.initial)
    table = dg.relative_efficiency(scenarios, methods, args.J, args.seed, config, workers=args.threads or None)
    table.write_csv(path)
    layout = os.path.splitext(path)[0] + "_table.csv"
    table.write_layout(layout)
    meta = _meta(args, {"seed": args.seed, "J": args.J, "n": args.n, "deltas": deltas})
    meta.update(table.to_dict())
    _sidecar(path, meta)
    return path


def cmd_np(args):
    traj = _load_traj(args.traj)
    pts = dg.default_eval_points(traj.dim, args.points)
    kinds = ["drift", "diff"] if args.kind == "both" else [args.kind]
    path = _target(args, "np.csv")
    cols, names, info = [pts], [f"theta{j + 1}" for j in range(traj.dim)], {}
    for k in kinds:
        if args.h:
            h, flagged = args.h, False
        else:
            cv = dg.cv_bandwidth(traj, k)
            h, flagged = cv.h, cv.flagged
        info[k] = {"h": h, "cv_flagged": flagged}
        e = dg.np_drift(traj, h, pts) if k == "drift" else dg.np_diff(traj, h, pts)
        cols.append(e.values)
        names += [f"{k}{j + 1}" for j in range(traj.dim)]
        if k == "drift" and args.model:
            model = _load_model(args.model)
            sp = dg.smooth_parametric(traj, model, h, pts)
            cols.append(sp.values)
            names += [f"parametric{j + 1}" for j in range(traj.dim)]
    np.savetxt(path, np.column_stack(cols), delimiter=",", header=",".join(names), comments="", fmt="%.17g")
    _sidecar(path, _meta(args, {"trajectory": os.path.abspath(args.traj), "bandwidths": info}))
    return path


def cmd_rerun(args):
    if not os.path.exists(args.meta):
        raise ConfigError(f"metadata file not found: {args.meta}")
    with open(args.meta) as fh:
        meta = json.load(fh)
    argv = meta.get("argv") or meta.get("meta", {}).get("argv")
    if not argv:
        raise ConfigError(f"{args.meta} holds no argument list")
    argv = list(argv)
    if args.force and "--force" not in argv:
        argv.append("--force")
    code = main(argv)
    if code:
        raise SystemExit(code)
    return None


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--outdir", help=f"output directory (default ${OUTDIR_ENV} or .)")
    common.add_argument("--out", help="explicit output path")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--threads", type=int, default=0, help="worker cap (default: all cores)")

    p = argparse.ArgumentParser(prog="torusdiff", description="Toroidal diffusion toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="wrapped Euler-Maruyama trajectory")
    s.add_argument("--model", required=True, help="model JSON path or inline JSON")
    s.add_argument("--t-end", type=float, required=True)
    s.add_argument("--dt", type=float, default=1e-3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--keep-every", type=int, default=1)
    s.add_argument("--theta0", help="start point (comma list); default: stationary draw")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", parents=[common], help="approximate maximum likelihood")
    f.add_argument("--traj", required=True)
    f.add_argument("--family", required=True, choices=["wn", "vm", "jp", "mivm"])
    f.add_argument("--likelihood", required=True)
    f.add_argument("--fix", action="append", help="name=value or name=smle (repeatable)")
    f.add_argument("--components", type=int, default=2, help="mixture components (mivm)")
    f.add_argument("--initial", choices=["sdi", "none"], default="sdi")
    f.add_argument("--Mx", type=int, default=500)
    f.add_argument("--My", type=int)
    f.add_argument("--sigma0", type=float, default=0.1)
    f.add_argument("--Mt", type=int)
    f.add_argument("--max-evals", type=int, default=2000)
    f.add_argument("--fatol", type=float, default=1e-8)
    f.add_argument("--xatol", type=float, default=1e-6)
    f.add_argument("--restarts", type=int, default=1)
    f.add_argument("--seed", type=int, help="seed of the trajectory, recorded in the output")
    f.add_argument("--timing", action="store_true", help="include wall time (breaks byte reproducibility)")
    f.set_defaults(func=cmd_fit)

    t = sub.add_parser("tpd", parents=[common], help="transition density on a grid")
    t.add_argument("--model", required=True)
    t.add_argument("--kind", required=True)
    t.add_argument("--delta", type=float, required=True)
    t.add_argument("--theta0", required=True)
    t.add_argument("--Mx", type=int, default=500)
    t.add_argument("--My", type=int)
    t.add_argument("--sigma0", type=float, default=0.1)
    t.add_argument("--Mt", type=int)
    t.set_defaults(func=cmd_tpd)

    q = sub.add_parser("pde", parents=[common], help="Fokker-Planck solution")
    q.add_argument("--model", required=True)
    q.add_argument("--t", type=float, required=True)
    q.add_argument("--Mx", type=int, default=500)
    q.add_argument("--My", type=int)
    q.add_argument("--Mt", type=int)
    q.add_argument("--mt-per-time", type=float, default=1500)
    q.add_argument("--sigma0", type=float, default=0.1)
    q.add_argument("--theta0", help="WN start centre; default: stationary start")
    q.add_argument("--save-every", type=int)
    q.set_defaults(func=cmd_pde)

    k = sub.add_parser("kl", parents=[common], help="smoothed KL curves")
    k.add_argument("--model", required=True)
    k.add_argument("--methods", default="S,E,SO,WOU")
    k.add_argument("--t", required=True, help="a:b:n or comma list")
    k.add_argument("--Mx", type=int, default=1000)
    k.add_argument("--My", type=int)
    k.add_argument("--sigma0", type=float, default=0.1)
    k.add_argument("--sources", type=int)
    k.add_argument("--mt-per-time", type=float, default=1500)
    k.add_argument("--label", default="")
    k.set_defaults(func=cmd_kl)

    r = sub.add_parser("re", parents=[common], help="relative-efficiency Monte Carlo")
    r.add_argument("--scenario", required=True, help="e.g. wn1d_a05_s1 (comma list)")
    r.add_argument("--deltas", required=True)
    r.add_argument("--J", type=int, default=200)
    r.add_argument("--n", type=int, default=250)
    r.add_argument("--methods", default="E,SO,WOU")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--max-evals", type=int, default=2000)
    r.add_argument("--initial", choices=["sdi", "none"], default="sdi")
    r.set_defaults(func=cmd_re)

    n = sub.add_parser("np", parents=[common], help="nonparametric drift/diffusion")
    n.add_argument("--traj", required=True)
    n.add_argument("--kind", choices=["drift", "diff", "both"], default="both")
    n.add_argument("--h", type=float, help="bandwidth (default: cross-validation)")
    n.add_argument("--model", help="fitted model for the smoothed parametric drift")
    n.add_argument("--points", type=int)
    n.set_defaults(func=cmd_np)

    e = sub.add_parser("rerun", help="repeat a run from its .meta.json")
    e.add_argument("meta")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_rerun)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    args.argv = argv
    try:
        path = args.func(args)
    except ConfigError as exc:
        print(f"torusdiff: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"torusdiff: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FloatingPointError, np.linalg.LinAlgError, pde.NumericalError, sim.SimulationDiverged) as exc:
        print(f"torusdiff: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"torusdiff: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    if path:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
