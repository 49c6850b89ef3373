"""Command line interface: ``hybrid-spin {run,compare,sweep,validate-config}``.

Exit codes: 0 success, 1 other package error, 2 configuration error,
3 contract violation, 4 numerical failure, 5 positivity violation,
6 degenerate density.
"""

import argparse
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from . import models as md
from . import spin_algebra as sa
from .config import density_values, dump_config, initial_state, load_config, parse_config
from .errors import ConfigurationError, HybridSpinError
from .integrator import progress_printer, run
from .output import write_snapshot, write_table

THREADS_ENV = "HYBRID_SPIN_THREADS"


# -- running ------------------------------------------------------------------------------


@dataclass
class RunResult:
    config: object
    grid: object
    ctx: object
    times: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    sigma_x: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final_state: object = None
    error: Exception = None
    t_reached: float = math.nan


def sigma_x_field(state):
    """``<sigma_x>`` per node, or ``None`` for states without a quantum factor."""
    if isinstance(state, md.Factored):
        return sa.expectation(state.psi, sa.SIGMA_X)
    if isinstance(state, md.HybridDensity):
        rho_f, Pl = dg.local_density_matrix(state.P)
        return 2.0 * Pl[..., 1]
    return None


def execute(cfg, on_warning=None, keep_going=True):
    """Run one configuration and collect diagnostic rows.

    With ``keep_going=True`` a :class:`HybridSpinError` raised mid-run is
    stored in ``result.error`` together with the rows collected so far;
    otherwise it propagates.
    """
    grid = cfg.build_grid()
    ctx = cfg.build_context(grid)
    state0 = initial_state(cfg, grid)
    rhs = md.rhs_for(cfg.model)
    corrections = cfg.model not in ("ehrenfest",)
    casimirs = tuple(cfg.output.casimirs)

    def diagnostics(state, t):
        rec = dg.record(state, ctx, t, casimirs, corrections=corrections, strict=cfg.abort_on_positivity)
        return rec.row(casimirs), sigma_x_field(state)

    result = RunResult(cfg, grid, ctx)
    try:
        traj = run(state0, rhs, ctx, cfg.integrator_config(), diagnostics, on_warning=on_warning)
        result.t_reached = cfg.integrator.t_end
    except HybridSpinError as exc:
        traj = getattr(exc, "trajectory", None)
        if traj is None or not keep_going:
            raise
        result.error = exc
        result.t_reached = getattr(exc, "t", math.nan)
    result.times = list(traj.times)
    result.rows = [r[0] for r in traj.records]
    result.sigma_x = [r[1] for r in traj.records]
    result.snapshots = list(traj.snapshots)
    result.final_state = traj.final_state
    return result


def _apply_overrides(cfg, output=None, snapshots=None):
    data = cfg.model_dump()
    if output is not None:
        data["output"]["directory"] = output
    if snapshots is not None:
        data["integrator"]["snapshot_stride"] = snapshots
    return type(cfg).model_validate(data)


def _parse_snapshots(text):
    if text is None:
        return None
    if text == "none":
        return 0
    if text.startswith("stride="):
        try:
            n = int(text.split("=", 1)[1])
        except ValueError:
            n = -1
        if n > 0:
            return n
    raise ConfigurationError(f"--snapshots must be 'none' or 'stride=N' with N > 0, got {text!r}")


def _write_run(result, directory):
    cfg = result.config
    columns = dg.columns(tuple(cfg.output.casimirs))
    path = os.path.join(directory, cfg.output.diagnostics)
    write_table(path, result.rows, columns)
    for k, (t, state) in enumerate(result.snapshots):
        write_snapshot(os.path.join(directory, "snapshots", f"snap_{k:05d}.csv"), state, result.grid, t)
    return path


def _report_error(exc, t=None):
    where = f" (t = {t:.6g})" if t is not None and not math.isnan(t) else ""
    print(f"error: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
    return getattr(exc, "exit_code", 1)


def cmd_run(args):
    cfg = _apply_overrides(load_config(args.config), args.output, _parse_snapshots(args.snapshots))
    result = execute(cfg, on_warning=progress_printer())
    path = _write_run(result, cfg.output.directory)
    if not args.quiet:
        print(f"{cfg.model}: {len(result.rows)} diagnostic rows written to {path}")
    if result.error is not None:
        return _report_error(result.error, result.t_reached)
    return 0


# -- compare ------------------------------------------------------------------------------


def _check_comparable(a, b):
    for part in ("grid", "hamiltonian", "initial"):
        if getattr(a, part) != getattr(b, part):
            raise ConfigurationError(f"compare: configurations differ in '{part}'")
    ia, ib = a.integrator, b.integrator
    if (ia.dt, ia.t_end, ia.diagnostic_stride) != (ib.dt, ib.t_end, ib.diagnostic_stride):
        raise ConfigurationError("compare: configurations must share dt, t_end and diagnostic_stride")


def compare_rows(ra, rb):
    """Joint rows of two runs with difference columns.

    ``sx_l2`` is the quadrature L2 distance of the ``<sigma_x>`` fields;
    ``*_max_abs_sx`` the sup norm of each run's field.
    """
    grid = ra.grid
    n = max(len(ra.rows), len(rb.rows))
    out = []
    for k in range(n):
        row = {"t": ra.times[k] if k < len(ra.times) else rb.times[k]}
        fa = ra.rows[k] if k < len(ra.rows) else {}
        fb = rb.rows[k] if k < len(rb.rows) else {}
        for prefix, f in (("a_", fa), ("b_", fb)):
            for c, v in f.items():
                if c != "t":
                    row[prefix + c] = v
        sa_ = ra.sigma_x[k] if k < len(ra.sigma_x) else None
        sb_ = rb.sigma_x[k] if k < len(rb.sigma_x) else None
        row["a_max_abs_sx"] = float(np.max(np.abs(sa_))) if sa_ is not None else math.nan
        row["b_max_abs_sx"] = float(np.max(np.abs(sb_))) if sb_ is not None else math.nan
        if sa_ is not None and sb_ is not None:
            row["sx_l2"] = float(np.sqrt(grid.integrate((sa_ - sb_) ** 2)))
        else:
            row["sx_l2"] = math.nan
        row["purity_diff"] = fa.get("purity", math.nan) - fb.get("purity", math.nan)
        row["energy_diff"] = fa.get("energy", math.nan) - fb.get("energy", math.nan)
        out.append(row)
    return out


def compare_columns(casimirs):
    base = [c for c in dg.columns(casimirs) if c != "t"]
    extra = ["max_abs_sx"]
    return (
        ["t"]
        + ["a_" + c for c in base + extra]
        + ["b_" + c for c in base + extra]
        + ["sx_l2", "purity_diff", "energy_diff"]
    )


def compare(cfg_a, cfg_b, on_warning=None):
    _check_comparable(cfg_a, cfg_b)
    ra = execute(cfg_a, on_warning=on_warning)
    rb = execute(cfg_b, on_warning=on_warning)
    return ra, rb, compare_rows(ra, rb)


def cmd_compare(args):
    cfg_a = load_config(args.config_a)
    cfg_b = load_config(args.config_b)
    directory = args.output or cfg_a.output.directory
    casimirs = tuple(cfg_a.output.casimirs)
    if tuple(cfg_b.output.casimirs) != casimirs:
        raise ConfigurationError("compare: configurations must list the same Casimirs")
    ra, rb, rows = compare(cfg_a, cfg_b, on_warning=progress_printer())
    path = os.path.join(directory, "compare.csv")
    write_table(path, rows, compare_columns(casimirs))
    if not args.quiet:
        last = rows[-1] if rows else {}
        print(f"{cfg_a.model} vs {cfg_b.model}: {len(rows)} rows written to {path}")
        print(
            f"final: sx_l2 = {last.get('sx_l2', math.nan):.3e}, "
            f"purity_diff = {last.get('purity_diff', math.nan):.3e}, "
            f"energy_diff = {last.get('energy_diff', math.nan):.3e}"
        )
    code = 0
    for label, r in (("a", ra), ("b", rb)):
        if r.error is not None:
            print(f"run {label} ({r.config.model}) stopped early", file=sys.stderr)
            code = code or _report_error(r.error, r.t_reached)
    return code


# -- sweep --------------------------------------------------------------------------------


def _scaled_config(cfg, axis, factor):
    data = cfg.model_dump()
    if axis in ("dt", "both"):
        data["integrator"]["dt"] = cfg.integrator.dt / factor
        for key in ("diagnostic_stride", "snapshot_stride"):
            data["integrator"][key] = getattr(cfg.integrator, key) * factor
    if axis in ("grid", "both"):
        data["grid"]["n_theta"] = cfg.grid.n_theta * factor
        data["grid"]["n_phi"] = cfg.grid.n_phi * factor
    return type(cfg).model_validate(data)


def exact_solution(cfg, grid, t):
    """Exact Liouville density for a pure Zeeman Hamiltonian, else ``None``.

    The flow ``n' = B x n`` is the rotation about ``B`` by ``|B| t``, so
    ``rho(t, u) = rho0(R(-|B| t) u)``.
    """
    if cfg.model != "liouville":
        return None
    H = cfg.build_hamiltonian()
    if not (H.is_scalar() and H.is_linear()):
        return None
    B = H.lin[0]
    b = float(np.linalg.norm(B))
    spec = cfg.initial.density
    rho0 = density_values(spec, grid.nodes, cfg.seed)
    norm = grid.integrate(rho0)
    if b == 0:
        return rho0 / norm
    R = sa.rotation_matrix(B / b, -b * t)
    return density_values(spec, grid.nodes @ R.T, cfg.seed) / norm


def _sweep_one(cfg_json):
    cfg = parse_config(cfg_json)
    res = execute(cfg, on_warning=lambda msg: None)
    out = {
        "dt": cfg.integrator.dt,
        "n_theta": cfg.grid.n_theta,
        "n_phi": cfg.grid.n_phi,
        "status": "ok" if res.error is None else type(res.error).__name__,
        "energy_drift": math.nan,
        "observables": None,
        "error": math.nan,
    }
    if res.rows:
        e = [r["energy"] for r in res.rows]
        out["energy_drift"] = float(np.max(np.abs(np.array(e) - e[0])))
    if res.error is None:
        last = res.rows[-1]
        keys = ("mass", "energy", "rho_q0", "rho_qx", "rho_qy", "rho_qz", "n_x", "n_y", "n_z")
        out["observables"] = [last[k] for k in keys]
        exact = exact_solution(cfg, res.grid, cfg.integrator.t_end)
        if exact is not None:
            diff = res.final_state.rho - exact
            out["error"] = float(np.sqrt(res.grid.integrate(diff**2)))
    return out


def _orders(values, factors):
    orders = [math.nan]
    for k in range(1, len(values)):
        a, b = values[k - 1], values[k]
        ratio = factors[k] / factors[k - 1]
        if a > 0 and b > 0 and ratio != 1:
            orders.append(math.log(a / b) / math.log(ratio))
        else:
            orders.append(math.nan)
    return orders


def worker_count():
    env = os.environ.get(THREADS_ENV)
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ConfigurationError(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    return n


def sweep(cfg, axis, factors, workers=1):
    """Convergence table over scaled ``dt`` and/or grid.

    The error column is the L2 distance to the exact solution when one is
    known, otherwise the distance of final scalar observables to those of the
    finest run (which then has no error entry).
    """
    if axis not in ("dt", "grid", "both"):
        raise ConfigurationError(f"sweep axis must be dt, grid or both, got {axis!r}")
    factors = sorted(int(f) for f in factors)
    if not factors or factors[0] < 1:
        raise ConfigurationError("sweep factors must be positive integers")
    jobs = [dump_config(_scaled_config(cfg, axis, f)) for f in factors]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            outs = list(pool.map(_sweep_one, jobs))
    else:
        outs = [_sweep_one(j) for j in jobs]
    if all(math.isnan(o["error"]) for o in outs) and outs[-1]["observables"] is not None:
        ref = np.array(outs[-1]["observables"])
        for o in outs[:-1]:
            if o["observables"] is not None:
                o["error"] = float(np.linalg.norm(np.array(o["observables"]) - ref))
    errs = [o["error"] for o in outs]
    drifts = [o["energy_drift"] for o in outs]
    rows = []
    for f, o, order, dorder in zip(factors, outs, _orders(errs, factors), _orders(drifts, factors)):
        rows.append(
            {
                "factor": f,
                "dt": o["dt"],
                "n_theta": o["n_theta"],
                "n_phi": o["n_phi"],
                "error": o["error"],
                "order": order,
                "energy_drift": o["energy_drift"],
                "drift_order": dorder,
                "status": o["status"],
            }
        )
    return rows


SWEEP_COLUMNS = ["factor", "dt", "n_theta", "n_phi", "error", "order", "energy_drift", "drift_order"]


def cmd_sweep(args):
    cfg = load_config(args.config)
    directory = args.output or cfg.output.directory
    rows = sweep(cfg, args.axis, args.factors, workers=worker_count())
    path = os.path.join(directory, "sweep.csv")
    write_table(path, [{k: v for k, v in r.items() if k != "status"} for r in rows], SWEEP_COLUMNS)
    if not args.quiet:
        print(f"{'factor':>6} {'dt':>10} {'grid':>9} {'error':>10} {'order':>6} {'drift':>10} {'order':>6} status")
        for r in rows:
            print(
                f"{r['factor']:>6} {r['dt']:>10.3e} {r['n_theta']:>4}x{r['n_phi']:<4} {r['error']:>10.3e} "
                f"{r['order']:>6.2f} {r['energy_drift']:>10.3e} {r['drift_order']:>6.2f} {r['status']}"
            )
    return 0 if all(r["status"] == "ok" for r in rows) else 1


def cmd_validate(args):
    cfg = load_config(args.config)
    if not args.quiet:
        print(f"{args.config}: valid {cfg.model} configuration")
    return 0


# -- entry point --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="hybrid-spin", description="Hybrid quantum-classical spin dynamics on S^2.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="integrate one configuration")
    r.add_argument("--config", required=True, help="JSON run configuration")
    r.add_argument("--output", help="output directory (overrides the config)")
    r.add_argument("--snapshots", help="'none' or 'stride=N'")
    r.add_argument("--quiet", action="store_true")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run two models on the same setup")
    c.add_argument("config_a")
    c.add_argument("config_b")
    c.add_argument("--output", help="output directory")
    c.add_argument("--quiet", action="store_true")
    c.set_defaults(func=cmd_compare)

    s = sub.add_parser("sweep", help="convergence table over dt and/or grid")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", choices=["dt", "grid", "both"], default="dt")
    s.add_argument("--factors", type=int, nargs="+", default=[1, 2])
    s.add_argument("--output", help="output directory")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("validate-config", help="check a configuration file")
    v.add_argument("--config", required=True)
    v.add_argument("--quiet", action="store_true")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except HybridSpinError as exc:
        return _report_error(exc)


if __name__ == "__main__":
    sys.exit(main())
