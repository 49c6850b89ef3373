"""Pointwise 2x2 operator algebra in Pauli coordinates.

An operator ``a0*1 + a.sigma`` is stored as the last axis ``[a0, ax, ay, az]``
of an array, so every function here broadcasts over any leading grid shape.
Real coefficient arrays are Hermitian operators; complex coefficient arrays
represent general 2x2 matrices (products of Hermitian operators need them).

Spinors are complex arrays with a trailing axis of length 2.
"""

import numpy as np

from .errors import ContractViolation

HERMITIAN_TOL = 1e-12

SIGMA = np.array(
    [
        [[1, 0], [0, 1]],
        [[0, 1], [1, 0]],
        [[0, -1j], [1j, 0]],
        [[1, 0], [0, -1]],
    ],
    dtype=complex,
)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])
SIGMA_X = np.array([0.0, 1.0, 0.0, 0.0])
SIGMA_Y = np.array([0.0, 0.0, 1.0, 0.0])
SIGMA_Z = np.array([0.0, 0.0, 0.0, 1.0])


def pauli_compose(a0, a):
    """Build ``a0*1 + a.sigma`` from its scalar part and Pauli vector."""
    a0 = np.asarray(a0)
    a = np.asarray(a)
    return np.concatenate([a0[..., None], a], axis=-1)


def pauli_decompose(A):
    """Return ``(a0, a)`` for an operator in Pauli coordinates."""
    A = np.asarray(A)
    return A[..., 0], A[..., 1:]


def to_matrix(A):
    """Dense ``(..., 2, 2)`` complex matrices from Pauli coordinates."""
    return np.einsum("...k,kij->...ij", np.asarray(A, dtype=complex), SIGMA)


def from_matrix(M, hermitian=True, tol=HERMITIAN_TOL):
    """Pauli coordinates of dense 2x2 matrices.

    With ``hermitian=True`` the result is real and a
    :class:`ContractViolation` is raised if the input deviates from
    Hermiticity by more than ``tol`` (max absolute entry deviation).
    """
    M = np.asarray(M, dtype=complex)
    coeffs = 0.5 * np.einsum("...ij,kji->...k", M, SIGMA)
    if not hermitian:
        return coeffs
    dev = np.max(np.abs(M - np.conj(np.swapaxes(M, -1, -2))), initial=0.0)
    if dev > tol:
        raise ContractViolation(f"matrix is not Hermitian (deviation {dev:.3e})")
    return coeffs.real.copy()


def op_add(A, B):
    return np.asarray(A) + np.asarray(B)


def op_scale(c, A):
    return np.asarray(c)[..., None] * np.asarray(A) if np.ndim(c) else c * np.asarray(A)


def op_product(A, B):
    """Matrix product ``AB`` in Pauli coordinates (complex in general).

    Uses ``(a0 + a.s)(b0 + b.s) = a0 b0 + a.b + (a0 b + b0 a + i a x b).s``.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    a0, a = A[..., 0], A[..., 1:]
    b0, b = B[..., 0], B[..., 1:]
    scalar = a0 * b0 + np.sum(a * b, axis=-1)
    vector = a0[..., None] * b + b0[..., None] * a + 1j * np.cross(a, b)
    return pauli_compose(scalar, vector)


def commutator_i(A, B):
    """``i[A, B]``; Hermitian for Hermitian arguments.

    In Pauli coordinates this is a pure vector ``-2 (a x b)``.
    """
    A = np.asarray(A)
    B = np.asarray(B)
    vec = -2.0 * np.cross(A[..., 1:], B[..., 1:])
    return pauli_compose(np.zeros(vec.shape[:-1], dtype=vec.dtype), vec)


def op_trace(A):
    return 2.0 * np.asarray(A)[..., 0]


def trace_product(A, B):
    """``Tr(AB)``; real when both operators are Hermitian."""
    return 2.0 * np.sum(np.asarray(A) * np.asarray(B), axis=-1)


def hermitian_eigenvalues(A):
    """Eigenvalues ``(a0 + |a|, a0 - |a|)``, larger first."""
    A = np.asarray(A)
    r = np.linalg.norm(A[..., 1:], axis=-1)
    return A[..., 0] + r, A[..., 0] - r


def spectral_apply(A, func):
    """Apply a scalar function to a Hermitian operator through its spectrum.

    The 2x2 closed form is ``f(A) = (f+ + f-)/2 + (f+ - f-)/2 * a_hat.sigma``.
    Degenerate points (``a = 0``) are handled without dividing by zero.
    """
    A = np.asarray(A, dtype=float)
    lam_hi, lam_lo = hermitian_eigenvalues(A)
    f_hi = func(lam_hi)
    f_lo = func(lam_lo)
    r = np.linalg.norm(A[..., 1:], axis=-1)
    safe = np.where(r > 0, r, 1.0)
    direction = np.where((r > 0)[..., None], A[..., 1:] / safe[..., None], 0.0)
    return pauli_compose(0.5 * (f_hi + f_lo), 0.5 * (f_hi - f_lo)[..., None] * direction)


def spectral_trace(A, func):
    """``Tr f(A) = f(lambda+) + f(lambda-)``."""
    lam_hi, lam_lo = hermitian_eigenvalues(A)
    return func(lam_hi) + func(lam_lo)


def apply_op(A, psi):
    """Matrix-vector product ``A psi`` for operators in Pauli coordinates."""
    A = np.asarray(A)
    psi = np.asarray(psi)
    a0, ax, ay, az = A[..., 0], A[..., 1], A[..., 2], A[..., 3]
    c0, c1 = psi[..., 0], psi[..., 1]
    return np.stack(
        [(a0 + az) * c0 + (ax - 1j * ay) * c1, (ax + 1j * ay) * c0 + (a0 - az) * c1],
        axis=-1,
    )


def spinor_norm2(psi):
    return np.sum(np.abs(psi) ** 2, axis=-1)


def expectation(psi, A):
    """``<psi, A psi>`` (real for Hermitian ``A``); ``psi`` need not be normalized."""
    return np.real(np.sum(np.conj(psi) * apply_op(A, psi), axis=-1))


def projector(psi):
    """``psi psi^dagger`` in Pauli coordinates."""
    psi = np.asarray(psi)
    c0, c1 = psi[..., 0], psi[..., 1]
    z = np.conj(c0) * c1
    norm2 = np.abs(c0) ** 2 + np.abs(c1) ** 2
    return np.stack(
        [0.5 * norm2, z.real, z.imag, 0.5 * (np.abs(c0) ** 2 - np.abs(c1) ** 2)], axis=-1
    )


def rotation_matrix(axis, angle):
    """SO(3) rotation by ``angle`` about ``axis`` (Rodrigues)."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def su2_matrix(axis, angle):
    """Spin-space unitary ``exp(-i angle axis.sigma / 2)``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    return np.cos(angle / 2) * SIGMA[0] - 1j * np.sin(angle / 2) * np.einsum(
        "k,kij->ij", k, SIGMA[1:]
    )


def unitary_conjugate(A, axis, angle):
    """``U A U^dagger`` for ``U = exp(-i angle axis.sigma/2)``.

    Conjugation leaves the scalar part alone and rotates the Pauli vector.
    """
    A = np.asarray(A)
    R = rotation_matrix(axis, angle)
    return pauli_compose(A[..., 0], A[..., 1:] @ R.T)


def unitary_apply(psi, axis, angle):
    return np.asarray(psi) @ su2_matrix(axis, angle).T
