"""Hybrid Hamiltonians ``H(n) = H0(n) 1 + Hvec(n).sigma`` with exact gradients.

Every Pauli component is a polynomial of degree <= 2 in the ambient
coordinates, ``c + b.n + n^T A n``, so the ambient gradient ``b + 2 A n`` and
the radial derivative ``n . grad`` are available in closed form.
"""

from dataclasses import dataclass, field

import numpy as np

from . import spin_algebra as sa
from .errors import ConfigurationError


@dataclass(frozen=True)
class HybridHamiltonian:
    """Polynomial operator-valued Hamiltonian.

    ``const[k]``, ``lin[k]`` and ``quad[k]`` are the coefficients of Pauli
    component ``k`` (0 = identity, 1..3 = sigma_x..sigma_z); ``quad[k]`` is
    symmetrised on construction.
    """

    const: np.ndarray
    lin: np.ndarray
    quad: np.ndarray
    name: str = "polynomial"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        const = np.asarray(self.const, dtype=float).reshape(4)
        lin = np.asarray(self.lin, dtype=float).reshape(4, 3)
        quad = np.asarray(self.quad, dtype=float).reshape(4, 3, 3)
        quad = 0.5 * (quad + np.swapaxes(quad, -1, -2))
        for arr in (const, lin, quad):
            if not np.all(np.isfinite(arr)):
                raise ConfigurationError("Hamiltonian coefficients must be finite")
            arr.setflags(write=False)
        object.__setattr__(self, "const", const)
        object.__setattr__(self, "lin", lin)
        object.__setattr__(self, "quad", quad)

    def __add__(self, other):
        return HybridHamiltonian(
            self.const + other.const,
            self.lin + other.lin,
            self.quad + other.quad,
            name=f"{self.name}+{other.name}",
        )

    def scaled(self, c):
        return HybridHamiltonian(c * self.const, c * self.lin, c * self.quad, name=f"{c}*{self.name}")

    def conjugated(self, axis, angle):
        """``U H U^dag`` for the constant spin rotation ``U`` about ``axis`` by ``angle``."""
        lin = sa.unitary_conjugate(self.lin.T, axis, angle).T
        quad = np.moveaxis(sa.unitary_conjugate(np.moveaxis(self.quad, 0, -1), axis, angle), -1, 0)
        return HybridHamiltonian(sa.unitary_conjugate(self.const, axis, angle), lin, quad, name=self.name)

    # -- evaluation ---------------------------------------------------------------

    def eval(self, u):
        """Pauli coordinates of ``H(u)``; ``u`` has shape ``(..., 3)``."""
        u = np.asarray(u, dtype=float)
        return (
            self.const
            + np.einsum("...j,kj->...k", u, self.lin)
            + np.einsum("...i,kij,...j->...k", u, self.quad, u)
        )

    def eval_field(self, grid):
        return self.eval(grid.nodes)

    def ambient_gradient(self, u):
        """``grad H`` with shape ``(..., 3, 4)`` (Cartesian, Pauli)."""
        u = np.asarray(u, dtype=float)
        return self.lin.T + 2 * np.einsum("kij,...j->...ik", self.quad, u)

    def tangential_gradient(self, u):
        g = self.ambient_gradient(u)
        u = np.asarray(u, dtype=float)
        return g - u[..., :, None] * np.einsum("...i,...ik->...k", u, g)[..., None, :]

    def tangential_gradient_field(self, grid):
        return self.tangential_gradient(grid.nodes)

    def vector_field(self, u):
        """Operator-valued Hamiltonian vector field ``X = grad H x u``, shape ``(..., 3, 4)``.

        Only the tangential part of the gradient survives the cross product,
        so this equals ``(D H) x u``.
        """
        u = np.asarray(u, dtype=float)
        g = self.ambient_gradient(u)
        ub = np.broadcast_to(u[..., :, None], g.shape)
        return np.cross(g, ub, axisa=-2, axisb=-2, axisc=-2)

    def vector_field_jacobian(self, u):
        """``T[j, k] = d_j X_k`` of the ambient extension ``X(n) = grad H(n) x n``.

        Shape ``(..., 3, 3, 4)``. Contracting with a tangent vector ``V_j``
        gives ``(V . grad) X``, which for tangent ``V`` only uses derivatives
        along the sphere.
        """
        u = np.asarray(u, dtype=float)
        g = self.ambient_gradient(u)
        eps = _levi_civita()
        # d_j X_k = eps_klm (2 A_lj n_m) + eps_klj g_l
        term1 = 2 * np.einsum("klm,plj,...m->...jkp", eps, self.quad, u)
        term2 = np.einsum("klj,...lp->...jkp", eps, g)
        return term1 + term2

    def radial_action(self, u):
        """``n . grad H`` at ``u`` (Euler: ``k H_k`` per homogeneous degree ``k``)."""
        u = np.asarray(u, dtype=float)
        return np.einsum("...i,...ik->...k", u, self.ambient_gradient(u))

    def phase_term(self, u):
        """``n . grad H - H``, the Koopman-van Hove Lagrangian.

        Evaluated degree by degree through Euler's identity (``-c + n^T A n``),
        so it is exactly zero for linear Hamiltonians rather than a
        cancellation residue.
        """
        u = np.asarray(u, dtype=float)
        return -self.const + np.einsum("...i,kij,...j->...k", u, self.quad, u)

    def is_scalar(self):
        """True when the Pauli-vector part vanishes identically."""
        return not (np.any(self.const[1:]) or np.any(self.lin[1:]) or np.any(self.quad[1:]))

    def is_decoupled(self):
        """True when the Pauli-vector part is constant, ``H = H_C(n) 1 + H_Q``."""
        return not (np.any(self.lin[1:]) or np.any(self.quad[1:]))

    def is_linear(self):
        """True when every component is homogeneous of degree one."""
        return not (np.any(self.const) or np.any(self.quad))


def _levi_civita():
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1.0
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1.0
    return eps


def _empty():
    return np.zeros(4), np.zeros((4, 3)), np.zeros((4, 3, 3))


def zero():
    c, b, A = _empty()
    return HybridHamiltonian(c, b, A, name="zero")


def zeeman(B):
    """Classical Zeeman coupling ``H0 = B . n``."""
    c, b, A = _empty()
    b[0] = np.asarray(B, dtype=float)
    return HybridHamiltonian(c, b, A, name="zeeman", params={"B": list(map(float, B))})


def quantum_larmor(omega):
    """Constant quantum precession ``omega . sigma``."""
    c, b, A = _empty()
    c[1:] = np.asarray(omega, dtype=float)
    return HybridHamiltonian(c, b, A, name="quantum_larmor", params={"omega": list(map(float, omega))})


def anisotropy(A_matrix):
    """Quadratic classical anisotropy ``H0 = n^T A n``."""
    c, b, A = _empty()
    A[0] = np.asarray(A_matrix, dtype=float)
    return HybridHamiltonian(c, b, A, name="anisotropy", params={"A": np.asarray(A_matrix, float).tolist()})


def constant(value):
    c, b, A = _empty()
    c[0] = float(value)
    return HybridHamiltonian(c, b, A, name="constant", params={"value": float(value)})


def coupled(h0=None, alpha=1.0, axis=(0.0, 0.0, 1.0), gamma=0.0):
    """``H0(n) + alpha (axis . n) sigma_x + gamma sigma_z``."""
    axis = np.asarray(axis, dtype=float)
    norm = np.linalg.norm(axis)
    if norm == 0:
        raise ConfigurationError("coupling axis must be nonzero")
    c, b, A = _empty()
    b[1] = alpha * axis / norm
    c[3] = gamma
    H = HybridHamiltonian(c, b, A, name="coupled")
    if h0 is not None:
        H = h0 + H
    return HybridHamiltonian(
        H.const,
        H.lin,
        H.quad,
        name="coupled",
        params={"alpha": float(alpha), "axis": (axis / norm).tolist(), "gamma": float(gamma)},
    )


def polynomial(const=None, lin=None, quad=None):
    c, b, A = _empty()
    if const is not None:
        c = np.asarray(const, dtype=float)
    if lin is not None:
        b = np.asarray(lin, dtype=float)
    if quad is not None:
        A = np.asarray(quad, dtype=float)
    return HybridHamiltonian(c, b, A, name="polynomial")


FAMILIES = {
    "zero": zero,
    "zeeman": zeeman,
    "quantum_larmor": quantum_larmor,
    "anisotropy": anisotropy,
    "constant": constant,
    "polynomial": polynomial,
}


def from_spec(spec):
    """Build a Hamiltonian from a config mapping ``{"family": ..., **params}``.

    A list of such mappings is summed. ``coupled`` accepts an optional nested
    ``h0`` spec.
    """
    if isinstance(spec, (list, tuple)):
        if not spec:
            return zero()
        terms = [from_spec(s) for s in spec]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total
    spec = dict(spec)
    family = spec.pop("family", None)
    try:
        if family == "coupled":
            h0 = spec.pop("h0", None)
            return coupled(h0=from_spec(h0) if h0 is not None else None, **spec)
        if family not in FAMILIES:
            raise ConfigurationError(f"unknown Hamiltonian family {family!r}")
        return FAMILIES[family](**spec)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for Hamiltonian family {family!r}: {exc}") from None
