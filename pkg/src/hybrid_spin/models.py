"""Right-hand sides of the classical, Koopman, Ehrenfest and hybrid spin models.

Every model state is a small frozen dataclass of node fields; every
right-hand side is a pure function ``rhs(state, ctx) -> RhsOutput`` where
``ctx`` is a :class:`ModelContext` holding the grid, the Hamiltonian and the
cached Hamiltonian fields.

Notation: ``X`` is the operator-valued Hamiltonian vector field
``(D H) x u`` with shape ``(nt, np, 3, 4)``, ``P`` a local density matrix,
``rho = Tr(P_density)`` the classical density.
"""

import warnings
from dataclasses import dataclass, fields
from functools import cached_property

import numpy as np

from . import spin_algebra as sa
from .errors import ContractViolation, DegenerateDensity, NotFactorable

NORM_TOL = 1e-8
RANK_TOL = 1e-8
DENSITY_FLOOR = 1e-10
MAX_FLOOR_FRACTION = 0.01


# -- states ------------------------------------------------------------------------


class ModelState:
    """Mixin giving dataclass states linear-combination arithmetic."""

    def arrays(self):
        return tuple(getattr(self, f.name) for f in fields(self))

    @classmethod
    def from_arrays(cls, arrays):
        return cls(*arrays)

    def combine(self, coeffs, others):
        """``self + sum_k coeffs[k] * others[k]`` fieldwise."""
        out = []
        for i, base in enumerate(self.arrays()):
            acc = base
            for c, other in zip(coeffs, others):
                acc = acc + c * other.arrays()[i]
            out.append(acc)
        return self.from_arrays(out)

    def is_finite(self):
        return all(np.all(np.isfinite(a)) for a in self.arrays())


@dataclass(frozen=True)
class ClassicalDensity(ModelState):
    rho: np.ndarray
    kind = "classical"


@dataclass(frozen=True)
class Koopman(ModelState):
    chi: np.ndarray
    kind = "koopman"


@dataclass(frozen=True)
class HybridSpinor(ModelState):
    upsilon: np.ndarray
    kind = "hybrid_spinor"


@dataclass(frozen=True)
class Factored(ModelState):
    rho: np.ndarray
    psi: np.ndarray
    kind = "factored"


@dataclass(frozen=True)
class HybridDensity(ModelState):
    P: np.ndarray
    kind = "hybrid_density"

    @property
    def rho(self):
        return sa.op_trace(self.P)


@dataclass(frozen=True)
class RhsOutput:
    """Time derivative plus the auxiliary fields built along the way."""

    derivative: ModelState
    calX: np.ndarray = None
    calH: np.ndarray = None
    Xi: np.ndarray = None
    floor_fraction: float = 0.0


# -- context ------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ModelContext:
    """Grid, Hamiltonian and numerical options shared by all right-hand sides.

    ``conservative`` selects the mean-free divergence, which makes the
    discrete mass ``sum(w rho)`` exactly invariant.
    """

    grid: object
    hamiltonian: object
    hbar: float = 1.0
    conservative: bool = True
    floor: float = DENSITY_FLOOR
    max_floor_fraction: float = MAX_FLOOR_FRACTION
    vector_field_form: str = "bivector"

    @cached_property
    def H(self):
        return self.hamiltonian.eval(self.grid.nodes)

    @cached_property
    def X(self):
        X = self.hamiltonian.vector_field(self.grid.nodes)
        return self.grid.project_tangent(X)

    @cached_property
    def dX(self):
        return self.hamiltonian.vector_field_jacobian(self.grid.nodes)

    @cached_property
    def phase(self):
        return self.hamiltonian.phase_term(self.grid.nodes)

    def div(self, F):
        return self.grid.surface_divergence(F, conservative=self.conservative)


# -- classical layer -----------------------------------------------------------------


def _warn_if_not_scalar(ctx, name):
    if not ctx.hamiltonian.is_scalar():
        warnings.warn(f"{name}: Pauli-vector part of the Hamiltonian is ignored", stacklevel=3)


def liouville_rhs(state, ctx):
    """``d rho/dt = -Div(rho X_H0)`` in flux form."""
    _warn_if_not_scalar(ctx, "liouville_rhs")
    X0 = ctx.X[..., 0]
    return RhsOutput(ClassicalDensity(-ctx.div(state.rho[:, :, None] * X0)), calX=X0)


def _classical_bracket(ctx, f):
    """``{H0, f} = -X_H0 . Df`` for a scalar (real or complex) field."""
    X0 = ctx.X[..., 0]
    Df = ctx.grid.tangential_gradient(f)
    return -np.sum(X0 * Df, axis=2)


def kvn_rhs(state, ctx):
    """``d chi/dt = {H, chi}``."""
    _warn_if_not_scalar(ctx, "kvn_rhs")
    return RhsOutput(Koopman(_classical_bracket(ctx, state.chi)), calX=ctx.X[..., 0])


def kvh_rhs(state, ctx):
    """``d chi/dt = {H, chi} + (i/hbar)(n.grad H - H) chi``."""
    _warn_if_not_scalar(ctx, "kvh_rhs")
    dchi = _classical_bracket(ctx, state.chi)
    phase = ctx.phase[..., 0]
    if np.any(phase):
        dchi = dchi + 1j / ctx.hbar * (phase * state.chi)
    return RhsOutput(Koopman(dchi), calX=ctx.X[..., 0])


def hybrid_kvh_rhs(state, ctx):
    """``d Y/dt = {H, Y} + (i/hbar)(n.grad H - H) Y`` for a spinor field ``Y``.

    The bracket acts componentwise in spin space,
    ``{H, Y}_a = u . (D H_ab x D Y_b) = -sum_k (X_k D_k Y)_a``.
    """
    Y = state.upsilon
    DY = ctx.grid.tangential_gradient(Y)
    dY = -np.sum(sa.apply_op(ctx.X, DY), axis=2)
    if np.any(ctx.phase):
        dY = dY + 1j / ctx.hbar * sa.apply_op(ctx.phase, Y)
    return RhsOutput(HybridSpinor(dY), calX=None)


def kvh_density(chi, grid, hbar=1.0):
    """Inspection-only classical density ``|chi|^2 + div(n|chi|^2) + hbar Im{chi*, chi}``.

    The radial flux is evaluated with radially constant extension, so
    ``div(n f) = 3 f`` on the unit sphere.
    """
    a2 = np.abs(chi) ** 2
    return 4.0 * a2 + hbar * np.imag(grid.lie_poisson_bracket(np.conj(chi), chi))


def hybrid_kvh_d_operator(upsilon, grid, hbar=1.0):
    """Inspection-only ``Y Y^dag + div(n Y Y^dag) + i hbar {Y, Y^dag}`` in Pauli coordinates.

    Same radial convention as :func:`kvh_density`.
    """
    DY = grid.tangential_gradient(upsilon)  # (nt, np, 3, 2)
    DYc = np.conj(DY)
    # {Y, Y^dag}_ab = u . (D Y_a x D Y_b^*)
    cr = np.cross(DY[:, :, :, :, None], DYc[:, :, :, None, :], axisa=2, axisb=2, axisc=2)
    brk = np.einsum("ijk,ijkab->ijab", grid.nodes, cr)
    outer = np.einsum("...a,...b->...ab", upsilon, np.conj(upsilon))
    M = 4.0 * outer + 1j * hbar * brk
    return sa.from_matrix(M, tol=1e-10)


# -- hybrid density machinery -------------------------------------------------------------


def regularize_density(rho, floor=DENSITY_FLOOR, max_fraction=MAX_FLOOR_FRACTION):
    """Floor ``rho`` at ``floor * max(rho)``; return ``(rho_floored, fraction_floored)``."""
    rmax = float(np.max(rho))
    if not rmax > 0:
        raise DegenerateDensity("classical density has no positive values")
    lo = floor * rmax
    below = rho < lo
    frac = float(np.mean(below))
    if frac > max_fraction:
        raise DegenerateDensity(
            f"density below floor on {100 * frac:.2f}% of nodes (limit {100 * max_fraction:.2f}%)"
        )
    return np.maximum(rho, lo), frac


def _expect_vector(P, F):
    """``Tr(P F_k)`` for a local density matrix ``P`` and operator-valued vector ``F``."""
    return sa.trace_product(P[:, :, None, :], F)


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


_EPS = _levi_civita()


def gauge_potential(grid, P):
    """``J = i[P, DP]``, an operator-valued tangent vector ``(nt, np, 3, 4)``."""
    DP = grid.tangential_gradient(P, check=False)
    return sa.commutator_i(P[:, :, None, :], DP)


def hybrid_vector_field(grid, X, dX, P, rho, hbar, form="bivector"):
    """Hybrid vector field ``calX`` and ``Xi = J x u``.

    ``form="direct"`` evaluates
    ``<X> - (hbar/2 rho) Tr((rho Xi).D X - X.D(rho Xi))`` term by term.
    ``form="bivector"`` uses the equivalent split
    ``rho calX = Tr(D_op X) - (hbar/2) D b x u`` with
    ``D_op = rho P + (hbar/2) curl(rho J)`` and ``b = Tr(u . (X x rho Xi))``.
    The second term is a skew gradient, whose discrete divergence vanishes
    identically, so third derivatives of ``P`` never reach the density
    equation. The two forms agree to stencil accuracy.
    """
    J = gauge_potential(grid, P)
    Xi = grid.cross_u(J)
    rXi = rho[:, :, None, None] * Xi
    if form == "direct":
        t1 = 2.0 * np.einsum("...jp,...jkp->...k", rXi, dX)
        DrXi = grid.tangential_gradient(rXi, check=False)
        t2 = 2.0 * np.einsum("...jp,...jkp->...k", X, DrXi)
        calX = _expect_vector(P, X) - hbar / (2.0 * rho[:, :, None]) * (t1 - t2)
    elif form == "bivector":
        D_op = rho[:, :, None] * P + 0.5 * hbar * grid.scalar_curl(rho[:, :, None, None] * J, check=False)
        b = 2.0 * np.einsum("abc,ija,ijbp,ijcp->ij", _EPS, grid.nodes, X, rXi)
        skew = grid.cross_u(grid.tangential_gradient(b, check=False))
        calX = (sa.trace_product(D_op[:, :, None, :], X) - 0.5 * hbar * skew) / rho[:, :, None]
    else:
        raise ValueError(f"unknown vector-field form {form!r}")
    return grid.project_tangent(calX), Xi


def effective_generator(grid, X, H, P_density, rho, hbar):
    """``calH = H + (i hbar/rho)({P,H} + {H,P} + [{ln rho, H}, P]/2)`` for the hybrid density ``P``."""
    DPd = grid.tangential_gradient(P_density, check=False)
    brk = np.sum(sa.commutator_i(DPd, X), axis=2)
    Dl = grid.tangential_gradient(np.log(rho), check=False)
    Y = np.einsum("...k,...kp->...p", Dl, X)
    return H + hbar / rho[:, :, None] * (brk + 0.5 * sa.commutator_i(Y, P_density))


def hybrid_generators(P_density, ctx, corrections=True):
    """``(calX, calH, Xi, rho, P, floor_fraction)`` for a hybrid density field.

    With ``corrections=False`` all hbar terms are dropped (Ehrenfest limit).
    """
    grid = ctx.grid
    rho = sa.op_trace(P_density)
    rho_f, frac = regularize_density(rho, ctx.floor, ctx.max_floor_fraction)
    P = P_density / rho_f[:, :, None]
    X = ctx.X
    if not corrections:
        return _expect_vector(P, X), ctx.H, None, rho_f, P, frac
    calX, Xi = hybrid_vector_field(grid, X, ctx.dX, P, rho_f, ctx.hbar, ctx.vector_field_form)
    calH = effective_generator(grid, X, ctx.H, P_density, rho_f, ctx.hbar)
    return calX, calH, Xi, rho_f, P, frac


def nonlinear_rhs(state, ctx):
    """``dP/dt = -Div(calX P) - (1/hbar) i[calH, P]`` for the hybrid density ``P``."""
    Pd = state.P
    calX, calH, Xi, _, _, frac = hybrid_generators(Pd, ctx)
    flux = calX[:, :, :, None] * Pd[:, :, None, :]
    dP = -ctx.div(flux) - sa.commutator_i(calH, Pd) / ctx.hbar
    return RhsOutput(HybridDensity(dP), calX=calX, calH=calH, Xi=Xi, floor_fraction=frac)


def ehrenfest_density_rhs(state, ctx):
    """Ehrenfest flow written for a hybrid density: the hbar-free limit of :func:`nonlinear_rhs`."""
    Pd = state.P
    calX, calH, _, _, _, frac = hybrid_generators(Pd, ctx, corrections=False)
    flux = calX[:, :, :, None] * Pd[:, :, None, :]
    dP = -ctx.div(flux) - sa.commutator_i(calH, Pd) / ctx.hbar
    return RhsOutput(HybridDensity(dP), calX=calX, calH=calH, floor_fraction=frac)


# -- factored flows ---------------------------------------------------------------------


def _check_normalized(psi, tol=NORM_TOL):
    dev = np.max(np.abs(sa.spinor_norm2(psi) - 1.0))
    if dev > tol:
        raise ContractViolation(f"spinor field not normalized (max |norm^2 - 1| = {dev:.3e})")


def _factored_update(state, ctx, calX, K):
    flux = state.rho[:, :, None] * calX
    drho = -ctx.div(flux)
    Dpsi = ctx.grid.tangential_gradient(state.psi)
    dpsi = -np.einsum("...k,...ka->...a", calX, Dpsi) - 1j / ctx.hbar * sa.apply_op(K, state.psi)
    return Factored(drho, dpsi)


def ehrenfest_rhs(state, ctx, check_norm=True):
    """``d rho/dt = -Div(rho <X>)``, ``d psi/dt = -<X>.D psi - (i/hbar) H psi``."""
    if check_norm:
        _check_normalized(state.psi)
    P = sa.projector(state.psi)
    calX = _expect_vector(P, ctx.X)
    return RhsOutput(_factored_update(state, ctx, calX, ctx.H), calX=calX, calH=ctx.H)


def factored_nonlinear_rhs(state, ctx, check_norm=True):
    """Nonlinear model in ``(rho, psi)`` variables.

    ``d rho/dt = -Div(rho calX)`` and
    ``d psi/dt = -calX.D psi - (i/hbar) K psi`` with
    ``K = H + hbar (i sum_k [D_k P, X_k] + (i/2)[P, D ln rho . X])``,
    the generator whose conjugation action equals that of ``calH``.
    """
    if check_norm:
        _check_normalized(state.psi)
    grid = ctx.grid
    rho_f, frac = regularize_density(state.rho, ctx.floor, ctx.max_floor_fraction)
    P = sa.projector(state.psi)
    X = ctx.X
    calX, Xi = hybrid_vector_field(grid, X, ctx.dX, P, rho_f, ctx.hbar, ctx.vector_field_form)
    DP = grid.tangential_gradient(P, check=False)
    brk = np.sum(sa.commutator_i(DP, X), axis=2)
    Dl = grid.tangential_gradient(np.log(rho_f), check=False)
    Y = np.einsum("...k,...kp->...p", Dl, X)
    K = ctx.H + ctx.hbar * (brk + 0.5 * sa.commutator_i(P, Y))
    return RhsOutput(_factored_update(state, ctx, calX, K), calX=calX, calH=K, Xi=Xi, floor_fraction=frac)


# -- conversions ----------------------------------------------------------------------------


def density_from_factored(rho, psi):
    """``P = rho psi psi^dag``."""
    return HybridDensity(np.asarray(rho)[..., None] * sa.projector(psi))


def factored_from_density(P_density, rank_tol=RANK_TOL):
    """Split a pointwise rank-1 hybrid density into ``(rho, psi)``.

    The spinor phase is fixed so that its larger-magnitude component is real
    and positive. Raises :class:`NotFactorable` when the smaller eigenvalue
    exceeds ``rank_tol`` times the larger one anywhere.
    """
    Pd = np.asarray(P_density)
    hi, lo = sa.hermitian_eigenvalues(Pd)
    scale = np.maximum(np.abs(hi), np.finfo(float).tiny)
    bad = np.abs(lo) > rank_tol * scale
    if np.any(bad):
        idx = tuple(np.argwhere(bad)[0])
        raise NotFactorable(f"hybrid density is not rank one at node {idx} (eigenvalues {hi[idx]:.3e}, {lo[idx]:.3e})")
    rho = sa.op_trace(Pd)
    safe = np.where(rho > 0, rho, 1.0)
    s = Pd[..., 1:] * (2.0 / safe)[..., None]
    s = s / np.maximum(np.linalg.norm(s, axis=-1), np.finfo(float).tiny)[..., None]
    sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
    # psi psi^dag = (1 + s.sigma)/2: |c0|^2 = (1+sz)/2, conj(c0) c1 = (sx + i sy)/2
    up = sz >= 0
    a0 = np.sqrt(np.maximum(0.5 * (1 + sz), 0.0))
    a1 = np.sqrt(np.maximum(0.5 * (1 - sz), 0.0))
    z = 0.5 * (sx + 1j * sy)
    with np.errstate(invalid="ignore", divide="ignore"):
        c1_up = np.where(a0 > 0, z / np.where(a0 > 0, a0, 1.0), 0.0)
        c0_dn = np.where(a1 > 0, np.conj(z) / np.where(a1 > 0, a1, 1.0), 0.0)
    c0 = np.where(up, a0 + 0j, c0_dn)
    c1 = np.where(up, c1_up, a1 + 0j)
    psi = np.stack([c0, c1], axis=-1)
    psi = np.where((rho > 0)[..., None], psi, np.array([1.0 + 0j, 0.0]))
    return Factored(rho, psi)


MODELS = {
    "liouville": (liouville_rhs, ClassicalDensity),
    "kvn": (kvn_rhs, Koopman),
    "kvh": (kvh_rhs, Koopman),
    "hybrid_kvh": (hybrid_kvh_rhs, HybridSpinor),
    "ehrenfest": (ehrenfest_rhs, Factored),
    "nonlinear": (nonlinear_rhs, HybridDensity),
    "nonlinear_factored": (factored_nonlinear_rhs, Factored),
}


def rhs_for(model):
    try:
        return MODELS[model][0]
    except KeyError:
        raise ValueError(f"unknown model {model!r}") from None
