"""Conserved and monitored quantities of hybrid spin states.

Everything here is read-only: functions take a state (or its fields) plus a
:class:`~hybrid_spin.models.ModelContext` and return numbers or fields. No
diagnostic ever feeds back into the dynamics.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import models as md
from . import spin_algebra as sa
from .errors import ContractViolation, PositivityViolation

TAU_POS = 1e-8
TAU_RHOQ = 1e-10
ENERGY_CROSSCHECK_TOL = 1e-10

_EPS = md._EPS


# -- marginals -----------------------------------------------------------------------------


def classical_density(P):
    """``rho = Tr P``."""
    return sa.op_trace(P)


def quantum_density_matrix(P, grid):
    """``rho_q = int P omega`` in Pauli coordinates."""
    return grid.integrate_op(P)


def purity(rho_q):
    """``Tr(rho_q^2)``."""
    return float(sa.trace_product(rho_q, rho_q))


def mass(P, grid):
    return float(grid.integrate(classical_density(P)))


def as_density(state):
    """Hybrid density ``P`` of a factored or hybrid-density state."""
    if isinstance(state, md.HybridDensity):
        return state.P
    if isinstance(state, md.Factored):
        return md.density_from_factored(state.rho, state.psi).P
    raise TypeError(f"{type(state).__name__} has no hybrid density")


def local_density_matrix(P, floor=md.DENSITY_FLOOR):
    """``(rho_floored, P/rho)`` without the node-fraction abort of the dynamics."""
    rho = classical_density(P)
    lo = floor * max(float(np.max(rho)), np.finfo(float).tiny)
    rho_f = np.maximum(rho, lo)
    return rho_f, P / rho_f[..., None]


# -- energy --------------------------------------------------------------------------------


def _im_trace_triple(A, B, C):
    """``Im Tr(A B C)`` for Hermitian operators: ``2 (a x b) . c``."""
    return 2.0 * np.sum(np.cross(A[..., 1:], B[..., 1:]) * C[..., 1:], axis=-1)


def energy(P, ctx, corrections=True):
    """``h = int (Tr(P H) - hbar Im Tr(P {P, H}) / rho) omega``.

    ``{P, H} = sum_k D_k P X_k``; its traced imaginary part is the real
    density of ``i hbar <{P, H}>``. With ``corrections=False`` only the mean
    field energy ``int Tr(P H)`` is returned.
    """
    grid = ctx.grid
    base = sa.trace_product(P, ctx.H)
    if not corrections:
        return float(grid.integrate(base))
    rho_f, _ = local_density_matrix(P, ctx.floor)
    DP = grid.tangential_gradient(P, check=False)
    im = np.sum(_im_trace_triple(P[:, :, None, :], DP, ctx.X), axis=2)
    return float(grid.integrate(base - ctx.hbar * im / rho_f))


def energy_factored(P, ctx):
    """The same energy written with the local density matrix,
    ``int rho (Tr(P_loc H) - hbar Im Tr(P_loc D P_loc . X)) omega``.

    Equal to :func:`energy` in the continuum; on the grid the two differ by
    the product-rule error of the stencils.
    """
    grid = ctx.grid
    rho_f, Pl = local_density_matrix(P, ctx.floor)
    rho = classical_density(P)
    DPl = grid.tangential_gradient(Pl, check=False)
    im = np.sum(_im_trace_triple(Pl[:, :, None, :], DPl, ctx.X), axis=2)
    return float(grid.integrate(rho * (sa.trace_product(Pl, ctx.H) - ctx.hbar * im)))


# -- D operator and Casimirs -----------------------------------------------------------------


def d_operator(P, grid, hbar=1.0, floor=md.DENSITY_FLOOR):
    """``D = rho P_loc + (hbar/2) u . curl(rho J)`` with ``J = i[P_loc, D P_loc]``."""
    rho = classical_density(P)
    _, Pl = local_density_matrix(P, floor)
    J = md.gauge_potential(grid, Pl)
    return P + 0.5 * hbar * grid.scalar_curl(rho[:, :, None, None] * J, check=False)


def _xlogx(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, -x * np.log(np.where(x > 0, x, 1.0)), 0.0)


CASIMIRS = {
    "x": lambda x: x,
    "x2": lambda x: x * x,
    "entropy": _xlogx,
}


def _phi(phi):
    if callable(phi):
        return phi
    if isinstance(phi, str):
        try:
            return CASIMIRS[phi]
        except KeyError:
            raise ValueError(f"unknown Casimir family {phi!r}") from None
    coeffs = [float(c) for c in phi]
    return lambda x: np.polynomial.polynomial.polyval(x, coeffs)


def casimir(P, grid, phi="x", floor=md.DENSITY_FLOOR, tau=TAU_POS):
    """``C = int rho Tr Phi(P/rho) omega`` by 2x2 spectral calculus.

    ``phi`` is a family name (``"x"``, ``"x2"``, ``"entropy"`` for
    ``-x log x``), a list of polynomial coefficients (lowest degree first) or
    a callable. Eigenvalues of ``P/rho`` below ``-tau`` raise
    :class:`PositivityViolation` for the entropy family; smaller negative
    round-off is clipped to zero there.
    """
    f = _phi(phi)
    rho_f, Pl = local_density_matrix(P, floor)
    hi, lo = sa.hermitian_eigenvalues(Pl)
    if phi == "entropy":
        worst = float(np.min(lo))
        if worst < -tau:
            raise PositivityViolation(f"local density matrix eigenvalue {worst:.3e} below -{tau:g}")
        lo = np.maximum(lo, 0.0)
    rho = classical_density(P)
    return float(grid.integrate(rho * (f(hi) + f(lo))))


def berry_curvature(P, grid, floor=md.DENSITY_FLOOR):
    """``Im{psi^dag, psi}`` of the pure state with Bloch vector ``s = 2 p``.

    Evaluated as ``(1/4) eps_pqr u_r s . (D_p s x D_q s)``, which is gauge
    invariant and needs no spinor phase convention.
    """
    _, Pl = local_density_matrix(P, floor)
    s = 2.0 * Pl[..., 1:]
    Ds = grid.tangential_gradient(s, check=False)
    return 0.25 * np.einsum("abm,mnl,abpn,abql,pqr,abr->ab", s, _EPS, Ds, Ds, _EPS, grid.nodes)


def omega_field(P, grid, hbar=1.0, floor=md.DENSITY_FLOOR):
    """``Omega = 1 + hbar Im{psi^dag, psi}``."""
    return 1.0 + hbar * berry_curvature(P, grid, floor)


def omega_casimir(P, grid, hbar=1.0, phi=np.log, floor=md.DENSITY_FLOOR):
    """``int rho Phi(Omega/rho) omega``; the default ``Phi = log`` needs ``Omega > 0``."""
    rho = classical_density(P)
    rho_f, _ = local_density_matrix(P, floor)
    om = omega_field(P, grid, hbar, floor)
    if phi is np.log and np.min(om) <= 0:
        raise PositivityViolation(f"Omega field is not positive (min {np.min(om):.3e})")
    return float(grid.integrate(rho * _phi(phi)(om / rho_f)))


# -- connections ---------------------------------------------------------------------------


def berry_connection(psi, grid, hbar=1.0):
    """``A_B = <psi, -i hbar D psi>``, real for normalized ``psi``."""
    Dpsi = grid.tangential_gradient(psi)
    return hbar * np.imag(np.sum(np.conj(psi)[:, :, None, :] * Dpsi, axis=-1))


# -- bracket oracle ------------------------------------------------------------------------


def energy_derivative(P, ctx):
    """``dh/dP = calH - (hbar / 2 rho) <G> 1`` with ``G = i sum_k [D_k P, X_k]``."""
    grid = ctx.grid
    calX, calH, _, rho_f, Pl, _ = md.hybrid_generators(P, ctx)
    DP = grid.tangential_gradient(P, check=False)
    G = np.sum(sa.commutator_i(DP, ctx.X), axis=2)
    shift = 0.5 * ctx.hbar * sa.trace_product(Pl, G) / rho_f
    out = calH.copy()
    out[..., 0] -= shift
    return out


def linear_functional(A, P, grid):
    """``f(P) = int Tr(A P) omega`` for an operator field ``A``."""
    return float(grid.integrate(sa.trace_product(A, P)))


def bracket_eval(A, P, ctx, dh=None):
    """``{{f, h}}`` for the linear functional of the operator field ``A``.

    ``int (u . <D A> x <D dh> - <(i/hbar)[A, dh]>) rho omega`` with
    ``<B> = Tr(P_loc B)`` and ``dh = dh/dP``.
    """
    grid = ctx.grid
    if dh is None:
        dh = energy_derivative(P, ctx)
    rho = classical_density(P)
    _, Pl = local_density_matrix(P, ctx.floor)
    A = np.broadcast_to(np.asarray(A, dtype=float), P.shape)
    eA = sa.trace_product(Pl[:, :, None, :], grid.tangential_gradient(A, check=False))
    eH = sa.trace_product(Pl[:, :, None, :], grid.tangential_gradient(dh, check=False))
    classical = grid.dot_u(np.cross(eA, eH, axis=2))
    quantum = sa.trace_product(Pl, sa.commutator_i(A, dh)) / ctx.hbar
    return float(grid.integrate((classical - quantum) * rho))


def observable_field(spec, grid):
    """Operator field of a linear observable given as a Hamiltonian-like polynomial."""
    return spec.eval(grid.nodes)


# -- identities ----------------------------------------------------------------------------


def _coupling_parts(hamiltonian, grid):
    H = hamiltonian.eval(grid.nodes)
    if np.any(H[..., 2]) or np.any(hamiltonian.lin[3]) or np.any(hamiltonian.quad[3]):
        raise ContractViolation("identity needs H = H0 + H_I sigma_x + gamma sigma_z with constant gamma")
    return H[..., 1], float(hamiltonian.const[3])


def sigma_x_rate(P, ctx, convention="derived"):
    """Right side of the material-derivative identity for ``<sigma_x>``.

    ``convention="derived"``: ``-(2 gamma/hbar) <sigma_y> - rho^-1 {H_I, rho(<sigma_x>^2 - 1)}``,
    which follows from ``i[calH, P]`` with Pauli commutators.
    ``convention="printed"``: ``gamma <sigma_y> + rho^-1 {H_I, rho(<sigma_x>^2 - 1)}``.
    """
    grid = ctx.grid
    H_I, gamma = _coupling_parts(ctx.hamiltonian, grid)
    rho_f, Pl = local_density_matrix(P, ctx.floor)
    sx = 2.0 * Pl[..., 1]
    sy = 2.0 * Pl[..., 2]
    brk = grid.lie_poisson_bracket(H_I, rho_f * (sx * sx - 1.0)) / rho_f
    if convention == "derived":
        return -2.0 * gamma / ctx.hbar * sy - brk
    if convention == "printed":
        return gamma * sy + brk
    raise ValueError(f"unknown convention {convention!r}")


def ehrenfest_identity_residual(P, ctx, rhs=md.nonlinear_rhs, convention="derived"):
    """Pointwise residual of ``d<sigma_x>/dt + calX . D<sigma_x> = rate``.

    The time derivative comes from the model right-hand side, so the residual
    measures spatial consistency only.
    """
    grid = ctx.grid
    out = rhs(md.HybridDensity(P), ctx)
    dP = out.derivative.P
    rho_f, Pl = local_density_matrix(P, ctx.floor)
    sx = 2.0 * Pl[..., 1]
    dsx = (2.0 * dP[..., 1] - sx * sa.op_trace(dP)) / rho_f
    adv = np.sum(out.calX * grid.tangential_gradient(sx), axis=2)
    return dsx + adv - sigma_x_rate(P, ctx, convention)


def marginal_rate(P, ctx):
    """``(i hbar)^-1 int [H, D] omega``, the predicted ``d rho_q/dt``."""
    D = d_operator(P, ctx.grid, ctx.hbar, ctx.floor)
    return -ctx.grid.integrate_op(sa.commutator_i(ctx.H, D)) / ctx.hbar


# -- records -------------------------------------------------------------------------------

DEFAULT_CASIMIRS = ("x", "x2", "entropy")


@dataclass
class DiagnosticRecord:
    """One row of the diagnostics table; fields that do not apply are NaN."""

    t: float = math.nan
    mass: float = math.nan
    energy: float = math.nan
    energy_alt: float = math.nan
    purity: float = math.nan
    rho_q0: float = math.nan
    rho_qx: float = math.nan
    rho_qy: float = math.nan
    rho_qz: float = math.nan
    n_x: float = math.nan
    n_y: float = math.nan
    n_z: float = math.nan
    omega_casimir: float = math.nan
    rho_min: float = math.nan
    rho_max: float = math.nan
    P_min_eig: float = math.nan
    P_max_eig: float = math.nan
    rho_q_min_eig: float = math.nan
    norm_drift: float = math.nan
    tangency: float = math.nan
    casimirs: dict = field(default_factory=dict)

    def row(self, casimir_names=DEFAULT_CASIMIRS):
        d = asdict(self)
        cas = d.pop("casimirs")
        for name in casimir_names:
            d[f"casimir_{name}"] = cas.get(name, math.nan)
        return d


def columns(casimir_names=DEFAULT_CASIMIRS):
    return list(DiagnosticRecord().row(casimir_names))


def _safe(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PositivityViolation:
        return math.nan


def record(state, ctx, t=0.0, casimir_names=DEFAULT_CASIMIRS, corrections=True, strict=False):
    """Diagnostics of any model state.

    ``corrections`` selects the energy functional (with or without the hbar
    term). With ``strict=False`` a positivity failure inside a log-type
    Casimir is recorded as NaN instead of raised.
    """
    grid = ctx.grid
    rec = DiagnosticRecord(t=float(t))
    u = grid.nodes
    if isinstance(state, (md.ClassicalDensity, md.Koopman, md.HybridSpinor)):
        if isinstance(state, md.ClassicalDensity):
            rho = state.rho
        elif isinstance(state, md.Koopman):
            rho = np.abs(state.chi) ** 2
        else:
            rho = sa.spinor_norm2(state.upsilon)
            rho_q = grid.integrate_op(sa.projector(state.upsilon))
            rec.purity = purity(rho_q)
            rec.rho_q0, rec.rho_qx, rec.rho_qy, rec.rho_qz = map(float, rho_q)
            rec.rho_q_min_eig = float(sa.hermitian_eigenvalues(rho_q)[1])
        rec.mass = float(grid.integrate(rho))
        rec.energy = float(grid.integrate(rho * ctx.H[..., 0]))
        rec.n_x, rec.n_y, rec.n_z = map(float, grid.integrate(rho[..., None] * u))
        rec.rho_min, rec.rho_max = float(np.min(rho)), float(np.max(rho))
        return rec

    P = as_density(state)
    rho = classical_density(P)
    rho_q = quantum_density_matrix(P, grid)
    hi, lo = sa.hermitian_eigenvalues(P)
    rec.mass = float(grid.integrate(rho))
    rec.energy = energy(P, ctx, corrections)
    rec.energy_alt = energy_factored(P, ctx) if corrections else rec.energy
    rec.purity = purity(rho_q)
    rec.rho_q0, rec.rho_qx, rec.rho_qy, rec.rho_qz = map(float, rho_q)
    rec.n_x, rec.n_y, rec.n_z = map(float, grid.integrate(rho[..., None] * u))
    rec.rho_min, rec.rho_max = float(np.min(rho)), float(np.max(rho))
    rec.P_min_eig, rec.P_max_eig = float(np.min(lo)), float(np.max(hi))
    rec.rho_q_min_eig = float(sa.hermitian_eigenvalues(rho_q)[1])
    wrap = (lambda f, *a, **k: f(*a, **k)) if strict else _safe
    rec.casimirs = {name: wrap(casimir, P, grid, name, ctx.floor) for name in casimir_names}
    rec.omega_casimir = wrap(omega_casimir, P, grid, ctx.hbar, floor=ctx.floor)
    if isinstance(state, md.Factored):
        rec.norm_drift = float(np.max(np.abs(sa.spinor_norm2(state.psi) - 1.0)))
    if corrections:
        calX = md.hybrid_generators(P, ctx)[0] if _has_floor_room(rho, ctx) else None
    else:
        calX = md.hybrid_generators(P, ctx, corrections=False)[0] if _has_floor_room(rho, ctx) else None
    if calX is not None:
        scale = max(float(np.max(np.abs(calX))), np.finfo(float).tiny)
        rec.tangency = float(np.max(np.abs(grid.dot_u(calX)))) / scale
    return rec


def _has_floor_room(rho, ctx):
    rmax = float(np.max(rho))
    return rmax > 0 and float(np.mean(rho < ctx.floor * rmax)) <= ctx.max_floor_fraction


def relative_drift(values, reference=None):
    """``max_t |v(t) - v(0)| / |reference|`` (``reference`` defaults to ``|v(0)|``).

    Quantities whose initial value is zero, such as the entropy of a pure
    state, need an explicit nonzero reference (the mass is used in the
    acceptance suite).
    """
    v = np.asarray(values, dtype=float)
    ref = abs(v[0]) if reference is None else abs(reference)
    if ref == 0:
        ref = 1.0
    return float(np.max(np.abs(v - v[0])) / ref)
