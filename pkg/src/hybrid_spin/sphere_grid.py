"""Offset latitude-longitude discretization of the unit sphere.

Nodes sit at cell centres ``theta_i = (i + 1/2) pi / n_theta`` and
``phi_j = 2 pi j / n_phi``; no node touches a pole. Fields are numpy arrays
whose first two axes are ``(n_theta, n_phi)`` (node-major, theta outer) and
whose trailing axes hold the per-node value (scalar, spinor, Pauli 4-vector,
...). Vector-valued fields carry their ambient Cartesian component on axis 2.

Derivatives are 4th-order centred differences. ``phi`` is periodic; ``theta``
is continued through each pole along the great circle, i.e. the ghost value
at ``(-theta, phi)`` is the node value at ``(theta, phi + pi)``. This is exact
for scalars and for Cartesian components, which is why vectors are kept in
ambient components.
"""

import numpy as np

from .errors import ConfigurationError, ContractViolation, NumericalFailure

TANGENCY_TOL = 1e-8


def _check_finite(f, what):
    if not np.all(np.isfinite(f)):
        bad = np.argwhere(~np.isfinite(np.asarray(f)))[0]
        raise NumericalFailure(f"non-finite value in {what} at index {tuple(bad)}", node=tuple(bad[:2]))


class SphereGrid:
    """Quadrature nodes, weights and tangential difference operators on S^2."""

    def __init__(self, n_theta, n_phi):
        if int(n_theta) != n_theta or int(n_phi) != n_phi:
            raise ConfigurationError("grid sizes must be integers")
        n_theta, n_phi = int(n_theta), int(n_phi)
        if n_theta < 8:
            raise ConfigurationError(f"n_theta must be >= 8, got {n_theta}")
        if n_phi < 16:
            raise ConfigurationError(f"n_phi must be >= 16, got {n_phi}")
        if n_phi % 2:
            raise ConfigurationError(f"n_phi must be even for the pole continuation, got {n_phi}")
        self.n_theta = n_theta
        self.n_phi = n_phi
        self.dtheta = np.pi / n_theta
        self.dphi = 2 * np.pi / n_phi
        self.theta = (np.arange(n_theta) + 0.5) * self.dtheta
        self.phi = np.arange(n_phi) * self.dphi

        th, ph = np.meshgrid(self.theta, self.phi, indexing="ij")
        st, ct, sp, cp = np.sin(th), np.cos(th), np.sin(ph), np.cos(ph)
        self.nodes = np.stack([st * cp, st * sp, ct], axis=-1)
        self.e_theta = np.stack([ct * cp, ct * sp, -st], axis=-1)
        self.e_phi = np.stack([-sp, cp, np.zeros_like(sp)], axis=-1)
        self.sin_theta = st
        self.weights = st * self.dtheta * self.dphi
        for arr in (self.nodes, self.e_theta, self.e_phi, self.sin_theta, self.weights):
            arr.setflags(write=False)

    @property
    def shape(self):
        return (self.n_theta, self.n_phi)

    @property
    def size(self):
        return self.n_theta * self.n_phi

    def __repr__(self):
        return f"SphereGrid({self.n_theta}, {self.n_phi})"

    def __eq__(self, other):
        return isinstance(other, SphereGrid) and self.shape == other.shape

    def __hash__(self):
        return hash(self.shape)

    # -- broadcasting helpers ------------------------------------------------

    def _expand(self, arr, field, vector_axis=True):
        """Reshape a ``(nt, np[, 3])`` geometry array to broadcast against ``field``."""
        extra = field.ndim - 2 - (1 if vector_axis else 0)
        return arr.reshape(arr.shape + (1,) * extra)

    def dot_u(self, F):
        """``u . F`` for a vector field with Cartesian components on axis 2."""
        return np.sum(self._expand(self.nodes, F) * F, axis=2)

    def cross(self, F, G):
        """Pointwise cross product over axis 2."""
        return np.cross(F, G, axisa=2, axisb=2, axisc=2)

    def cross_u(self, F):
        """``F x u`` with ``u`` the node normal."""
        u = np.broadcast_to(self._expand(self.nodes, F), F.shape)
        return np.cross(F, u, axisa=2, axisb=2, axisc=2)

    # -- stencils ---------------------------------------------------------------

    def _pad_theta(self, f):
        half = self.n_phi // 2
        top = np.roll(f[1::-1], half, axis=1)
        bottom = np.roll(f[:-3:-1], half, axis=1)
        return np.concatenate([top, f, bottom], axis=0)

    def d_theta(self, f):
        """4th-order ``d/dtheta`` with the antipodal pole continuation."""
        p = self._pad_theta(np.asarray(f))
        # Paired differences make the stencil exactly zero on constants.
        return (8 * (p[3:-1] - p[1:-3]) - (p[4:] - p[:-4])) / (12 * self.dtheta)

    def d_phi(self, f):
        """4th-order periodic ``d/dphi``."""
        f = np.asarray(f)
        return (
            8 * (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) - (np.roll(f, -2, axis=1) - np.roll(f, 2, axis=1))
        ) / (12 * self.dphi)

    # -- differential operators ----------------------------------------------------------

    def tangential_gradient(self, f, check=True):
        """Surface gradient ``e_theta d_theta f + e_phi d_phi f / sin(theta)``.

        ``f`` has shape ``(nt, np, *rest)``; the result has shape
        ``(nt, np, 3, *rest)`` with Cartesian components on axis 2.
        """
        f = np.asarray(f)
        if check:
            _check_finite(f, "gradient input")
        ft = self.d_theta(f)[:, :, None]
        fp = self.d_phi(f)[:, :, None] / self._expand(self.sin_theta, f, vector_axis=False)[:, :, None]
        et = self._expand(self.e_theta, ft)
        ep = self._expand(self.e_phi, fp)
        return et * ft + ep * fp

    def project_tangent(self, F):
        """``(1 - u u^T) F`` pointwise."""
        u = self._expand(self.nodes, F)
        return F - u * self.dot_u(F)[:, :, None]

    def check_tangent(self, F, tol=TANGENCY_TOL):
        scale = np.max(np.abs(F), initial=0.0)
        resid = np.max(np.abs(self.dot_u(F)), initial=0.0)
        if resid > tol * max(scale, np.finfo(float).tiny):
            raise ContractViolation(f"vector field is not tangential (|u.F| = {resid:.3e}, max |F| = {scale:.3e})")

    def _components(self, F):
        Ft = np.sum(self._expand(self.e_theta, F) * F, axis=2)
        Fp = np.sum(self._expand(self.e_phi, F) * F, axis=2)
        return Ft, Fp

    def surface_divergence(self, F, check=True, conservative=False):
        """Intrinsic divergence ``(d_theta(sin F_theta) + d_phi F_phi) / sin``.

        With ``conservative=True`` the quadrature-weighted mean of the result is
        removed so that ``integrate(Div F) == 0`` to round-off. The removed
        constant is a pole-boundary truncation term of the midpoint rule; it
        is negligible when the flux is small near the poles.
        """
        F = np.asarray(F)
        if check:
            _check_finite(F, "divergence input")
            self.check_tangent(F)
        Ft, Fp = self._components(F)
        st = self._expand(self.sin_theta, Ft, vector_axis=False)
        div = (self.d_theta(st * Ft) + self.d_phi(Fp)) / st
        if conservative:
            w = self._expand(self.weights, div, vector_axis=False)
            div = div - np.sum(w * div, axis=(0, 1)) / np.sum(self.weights)
        return div

    def scalar_curl(self, F, check=True):
        """Normal component ``u . curl F`` of a tangential field."""
        F = np.asarray(F)
        if check:
            _check_finite(F, "curl input")
            self.check_tangent(F)
        Ft, Fp = self._components(F)
        st = self._expand(self.sin_theta, Ft, vector_axis=False)
        return (self.d_theta(st * Fp) - self.d_phi(Ft)) / st

    def lie_poisson_bracket(self, f, g):
        """``u . (Df x Dg)`` for scalar (real or complex) fields of equal shape."""
        Df = self.tangential_gradient(f)
        Dg = self.tangential_gradient(g)
        return self.dot_u(self.cross(Df, Dg))

    def hamiltonian_vector_field(self, grad):
        """``X = (DH) x u``, projected to remove round-off normal residue."""
        return self.project_tangent(self.cross_u(np.asarray(grad)))

    # -- quadrature -----------------------------------------------------------------

    def integrate(self, f):
        """Midpoint quadrature ``sum_ij w_ij f_ij`` over the first two axes.

        The reduction is numpy's pairwise summation over the node-major
        flattened array, which is deterministic for a fixed grid.
        """
        f = np.asarray(f)
        flat = f.reshape((self.size,) + f.shape[2:])
        return np.sum(self.weights.reshape((self.size,) + (1,) * (f.ndim - 2)) * flat, axis=0)

    def integrate_op(self, F):
        """Quadrature of an operator field; returns Pauli coordinates."""
        return self.integrate(F)

    def area(self):
        return float(np.sum(self.weights))


def build_grid(n_theta, n_phi):
    return SphereGrid(n_theta, n_phi)
