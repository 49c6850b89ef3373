"""Fixed-step explicit time integration of model states."""

import inspect
import sys
import warnings
from functools import partial
from dataclasses import dataclass, field

import numpy as np

from . import spin_algebra as sa
from .errors import ConfigurationError, HybridSpinError, NumericalFailure
from .models import Factored, HybridDensity

SCHEMES = ("RK4", "Heun")
C_CFL = 0.5


@dataclass(frozen=True)
class IntegratorConfig:
    """Step size, horizon and sampling strides.

    ``diagnostic_stride`` and ``snapshot_stride`` count steps; a stride of 0
    disables sampling (the initial and final states are always recorded).
    """

    dt: float
    t_end: float
    scheme: str = "RK4"
    symmetrize: bool = True
    renormalize: bool = False
    diagnostic_stride: int = 1
    snapshot_stride: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not (np.isfinite(self.t_end) and self.t_end >= 0):
            raise ConfigurationError(f"t_end must be non-negative, got {self.t_end}")
        if self.scheme not in SCHEMES:
            raise ConfigurationError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.diagnostic_stride < 0 or self.snapshot_stride < 0:
            raise ConfigurationError("strides must be non-negative")
        n = self.t_end / self.dt
        if abs(n - round(n)) > 1e-9 * max(n, 1.0):
            raise ConfigurationError(f"t_end = {self.t_end} is not a whole number of steps of dt = {self.dt}")

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    records: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    final_state: object = None
    cfl_bound: float = np.inf


def _hermitize(state):
    # Pauli coordinates are Hermitian by construction when real; complex
    # residue can only come from round-off in operator products.
    if isinstance(state, HybridDensity) and np.iscomplexobj(state.P):
        return HybridDensity(np.real(state.P))
    return state


def _renormalize(state):
    if isinstance(state, Factored):
        n = np.sqrt(sa.spinor_norm2(state.psi))
        return Factored(state.rho, state.psi / n[..., None])
    return state


def _check_state(state, t):
    for arr in state.arrays():
        bad = ~np.isfinite(arr)
        if np.any(bad):
            idx = tuple(int(i) for i in np.argwhere(bad)[0][:2])
            raise NumericalFailure(f"non-finite value at node {idx} after step to t = {t:.6g}", node=idx)


def _stage_rhs(rhs):
    try:
        params = inspect.signature(rhs).parameters
    except (TypeError, ValueError):
        return rhs
    return partial(rhs, check_norm=False) if "check_norm" in params else rhs


def step(state, rhs, ctx, dt, scheme="RK4", symmetrize=True, renormalize=False, check=True):
    """Advance ``state`` by one explicit step of ``rhs``.

    State contracts (such as spinor normalization) are checked on the
    incoming state only, and only if ``check`` is set; intermediate stages
    are not on the constraint surface.
    """
    stage = _stage_rhs(rhs)
    first = rhs if check else stage
    if scheme == "RK4":
        k1 = first(state, ctx).derivative
        k2 = stage(state.combine([dt / 2], [k1]), ctx).derivative
        k3 = stage(state.combine([dt / 2], [k2]), ctx).derivative
        k4 = stage(state.combine([dt], [k3]), ctx).derivative
        new = state.combine([dt / 6, dt / 3, dt / 3, dt / 6], [k1, k2, k3, k4])
    elif scheme == "Heun":
        k1 = first(state, ctx).derivative
        k2 = stage(state.combine([dt], [k1]), ctx).derivative
        new = state.combine([dt / 2, dt / 2], [k1, k2])
    else:
        raise ConfigurationError(f"unknown scheme {scheme!r}")
    if symmetrize:
        new = _hermitize(new)
    if renormalize:
        new = _renormalize(new)
    return new


def cfl_bound(calX, grid, c_cfl=C_CFL):
    """Advisory ``dt_max = c min_i h_i / |calX_i|`` with ``h_i`` the local node spacing."""
    speed = np.linalg.norm(np.asarray(calX), axis=2)
    if speed.ndim > 2:
        speed = speed.max(axis=tuple(range(2, speed.ndim)))
    h = np.minimum(grid.dtheta, grid.sin_theta * grid.dphi)
    with np.errstate(divide="ignore"):
        ratio = np.where(speed > 0, h / np.where(speed > 0, speed, 1.0), np.inf)
    return float(c_cfl * np.min(ratio))


def run(state0, rhs, ctx, config, diagnostics=None, on_warning=None):
    """Integrate ``state0`` to ``config.t_end``.

    ``diagnostics(state, t)`` is called every ``diagnostic_stride`` steps and
    at the final time; its return values are collected in the trajectory.
    A :class:`HybridSpinError` raised mid-run carries the partial trajectory
    as ``exc.trajectory`` and the time reached as ``exc.t``.

    State contracts are enforced on ``state0``; afterwards discretization
    drift (such as the spinor norm) is left to the diagnostics.
    """
    traj = Trajectory()
    out0 = rhs(state0, ctx)
    if out0.calX is not None:
        traj.cfl_bound = cfl_bound(out0.calX, ctx.grid)
        if config.dt > traj.cfl_bound:
            msg = f"dt = {config.dt:g} exceeds the advisory CFL bound {traj.cfl_bound:.3g}"
            if on_warning is not None:
                on_warning(msg)
            else:
                warnings.warn(msg, stacklevel=2)

    def sample(state, n, t, final=False):
        if diagnostics is not None and (final or (config.diagnostic_stride and n % config.diagnostic_stride == 0)):
            traj.times.append(t)
            traj.records.append(diagnostics(state, t))
        if config.snapshot_stride and (final or n % config.snapshot_stride == 0):
            traj.snapshots.append((t, state))

    state = state0
    n_steps = config.n_steps
    t = 0.0
    try:
        sample(state, 0, 0.0, final=n_steps == 0)
        for n in range(1, n_steps + 1):
            state = step(state, rhs, ctx, config.dt, config.scheme, config.symmetrize, config.renormalize, check=n == 1)
            t = n * config.dt
            _check_state(state, t)
            final = n == n_steps
            on_stride = config.diagnostic_stride and n % config.diagnostic_stride == 0
            snap = config.snapshot_stride and n % config.snapshot_stride == 0
            if final or on_stride or snap:
                sample(state, n, t, final=final)
    except HybridSpinError as exc:
        # Hand the samples collected so far to the caller.
        traj.final_state = state
        exc.trajectory = traj
        exc.t = t
        raise
    traj.final_state = state
    return traj


def progress_printer(stream=None):
    """Warning callback printing to ``stream`` (standard error by default)."""

    def _print(msg):
        print(f"warning: {msg}", file=stream or sys.stderr)

    return _print
