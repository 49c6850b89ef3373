import warnings

import numpy as np
import pytest
from conftest import hybrid_density, smooth_density, smooth_spinor, vmf

from hybrid_spin import diagnostics as dg
from hybrid_spin import hamiltonians as hm
from hybrid_spin import models as md
from hybrid_spin import spin_algebra as sa
from hybrid_spin.errors import ContractViolation, DegenerateDensity, NotFactorable
from hybrid_spin.integrator import step
from hybrid_spin.sphere_grid import SphereGrid

COUPLED = hm.coupled(h0=hm.zeeman([0, 0, 1]), alpha=1.0, gamma=1.0)
DECOUPLED = hm.zeeman([0.2, 0.0, 1.0]) + hm.quantum_larmor([0.0, 0.0, 0.8])


def ctx_for(grid, H, **kw):
    return md.ModelContext(grid, H, **kw)


def rates(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


# -- classical layer ------------------------------------------------------------------------


def test_liouville_uniform_density_is_equilibrium(grid32):
    ctx = ctx_for(grid32, hm.zeeman([0.3, 0.1, 1.0]))
    rho = np.full(grid32.shape, 1 / (4 * np.pi))
    assert np.abs(md.liouville_rhs(md.ClassicalDensity(rho), ctx).derivative.rho).max() < 1e-13


def test_liouville_constant_hamiltonian_is_exactly_static(grid16):
    ctx = ctx_for(grid16, hm.constant(2.0))
    out = md.liouville_rhs(md.ClassicalDensity(vmf(grid16, [1, 0, 0], 4)), ctx)
    assert np.all(out.derivative.rho == 0.0)


def test_liouville_is_transport(grid32):
    ctx = ctx_for(grid32, hm.zeeman([0.3, 0.1, 1.0]), conservative=False)
    rho = vmf(grid32, [1, 0, 0], 4)
    d = md.liouville_rhs(md.ClassicalDensity(rho), ctx).derivative.rho
    X0 = ctx.X[..., 0]
    adv = -np.sum(X0 * grid32.tangential_gradient(rho), axis=2)
    assert np.abs(d - adv).max() < 3e-4 * np.abs(adv).max()


def test_liouville_mass_rate_is_roundoff(grid32):
    ctx = ctx_for(grid32, hm.anisotropy(np.diag([0.5, -0.2, 1.0])) + hm.zeeman([1, 0, 0]))
    d = md.liouville_rhs(md.ClassicalDensity(vmf(grid32, [0.3, 1, 0], 6)), ctx).derivative.rho
    assert abs(grid32.integrate(d)) < 1e-15


def test_liouville_warns_for_operator_hamiltonian(grid16):
    ctx = ctx_for(grid16, COUPLED)
    with pytest.warns(UserWarning):
        md.liouville_rhs(md.ClassicalDensity(vmf(grid16, [1, 0, 0], 2)), ctx)


def test_kvn_keeps_real_wavefunction_real(grid16):
    ctx = ctx_for(grid16, hm.zeeman([0, 0, 1]))
    chi = np.sqrt(vmf(grid16, [1, 0, 0], 3)).astype(complex)
    d = md.kvn_rhs(md.Koopman(chi), ctx).derivative.chi
    assert np.all(d.imag == 0.0)


@pytest.mark.parametrize("H", [hm.constant(1.5), hm.zero()])
def test_kvn_constant_hamiltonian(grid16, H):
    chi = np.sqrt(vmf(grid16, [1, 0, 0], 3)).astype(complex)
    assert np.all(md.kvn_rhs(md.Koopman(chi), ctx_for(grid16, H)).derivative.chi == 0.0)


def test_kvn_constant_wavefunction(grid16):
    ctx = ctx_for(grid16, hm.zeeman([0.3, 0, 1]))
    chi = np.full(grid16.shape, 0.5 + 0.1j)
    assert np.all(md.kvn_rhs(md.Koopman(chi), ctx).derivative.chi == 0.0)


@pytest.mark.parametrize("B", [(0, 0, 1), (0.3, -0.4, 1.2), (1, 1, 1)])
def test_kvh_equals_kvn_bitwise_for_linear_hamiltonian(grid16, B):
    ctx = ctx_for(grid16, hm.zeeman(B))
    chi = np.sqrt(vmf(grid16, [1, 0, 0], 3)) * np.exp(0.4j * grid16.nodes[..., 2])
    a = md.kvn_rhs(md.Koopman(chi), ctx).derivative.chi
    b = md.kvh_rhs(md.Koopman(chi), ctx).derivative.chi
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("hbar", [1.0, 0.3])
def test_kvh_constant_hamiltonian_is_global_phase(grid16, hbar):
    c = 1.7
    ctx = ctx_for(grid16, hm.constant(c), hbar=hbar)
    chi = np.sqrt(vmf(grid16, [1, 0, 0], 3)).astype(complex)
    d = md.kvh_rhs(md.Koopman(chi), ctx).derivative.chi
    np.testing.assert_allclose(d, -1j * c / hbar * chi, atol=1e-15)
    assert np.abs(np.real(np.conj(chi) * d)).max() < 1e-15


def test_kvh_anisotropy_phase_multiplier(grid16):
    A = np.diag([0.5, -0.2, 1.0])
    ctx = ctx_for(grid16, hm.anisotropy(A))
    chi = np.sqrt(vmf(grid16, [1, 0, 0], 3)).astype(complex)
    d = md.kvh_rhs(md.Koopman(chi), ctx).derivative.chi
    brk = md.kvn_rhs(md.Koopman(chi), ctx).derivative.chi
    H0 = ctx.H[..., 0]
    np.testing.assert_allclose(d - brk, 1j * H0 * chi, atol=1e-14)


def test_hybrid_kvh_constant_operator_hamiltonian(grid16):
    gamma = 0.9
    ctx = ctx_for(grid16, hm.quantum_larmor([0, 0, gamma]))
    chi = np.sqrt(vmf(grid16, [1, 0, 0], 3)).astype(complex)
    Y = np.stack([chi, np.zeros_like(chi)], axis=-1)
    d = md.hybrid_kvh_rhs(md.HybridSpinor(Y), ctx).derivative.upsilon
    np.testing.assert_allclose(d, -1j * gamma * sa.apply_op(sa.SIGMA_Z, Y), atol=1e-15)
    assert np.abs(np.real(np.sum(np.conj(Y) * d, axis=-1))).max() < 1e-15


@pytest.mark.parametrize("H", [hm.zeeman([0.3, 0, 1]), hm.anisotropy(np.diag([0.5, -0.2, 1.0])) + hm.constant(0.3)])
def test_hybrid_kvh_reduces_to_kvh_per_component(grid16, H):
    ctx = ctx_for(grid16, H)
    u = grid16.nodes
    Y = np.stack([np.exp(0.3j * u[..., 0]) * (1 + u[..., 2]), 0.5 * np.exp(-0.2j * u[..., 1])], axis=-1)
    d = md.hybrid_kvh_rhs(md.HybridSpinor(Y), ctx).derivative.upsilon
    for a in range(2):
        np.testing.assert_allclose(d[..., a], md.kvh_rhs(md.Koopman(Y[..., a]), ctx).derivative.chi, rtol=0, atol=1e-14)


def test_hybrid_kvh_coupling_mixes_components(grid32):
    ctx = ctx_for(grid32, hm.coupled(alpha=1.0))
    chi = np.sqrt(vmf(grid32, [1, 0, 0], 3)).astype(complex)
    Y = np.stack([chi, np.zeros_like(chi)], axis=-1)
    d = md.hybrid_kvh_rhs(md.HybridSpinor(Y), ctx).derivative.upsilon
    # {n_z sigma_x, Y}_1 = {n_z, chi} = u . (e_z x D chi)
    want = grid32.lie_poisson_bracket(grid32.nodes[..., 2], chi)
    np.testing.assert_allclose(d[..., 1], want, atol=1e-5 * np.abs(want).max())
    assert np.abs(d[..., 1]).max() > 0.1


def test_kvh_inspection_densities_are_hermitian(grid16):
    chi = np.sqrt(vmf(grid16, [1, 0, 0], 3)) * np.exp(0.4j * grid16.nodes[..., 2])
    rc = md.kvh_density(chi, grid16)
    assert np.isrealobj(rc)
    Y = np.stack([chi, 0.3 * chi * grid16.nodes[..., 0]], axis=-1)
    D = md.hybrid_kvh_d_operator(Y, grid16)
    assert np.isrealobj(D)
    np.testing.assert_allclose(sa.op_trace(D), md.kvh_density(Y[..., 0], grid16) + md.kvh_density(Y[..., 1], grid16), atol=1e-12)


# -- Ehrenfest --------------------------------------------------------------------------------


def test_ehrenfest_decoupled_transport_is_classical(grid32):
    ctx = ctx_for(grid32, DECOUPLED)
    state = md.Factored(smooth_density(grid32), smooth_spinor(grid32))
    out = md.ehrenfest_rhs(state, ctx)
    np.testing.assert_allclose(out.calX, ctx.X[..., 0], atol=1e-15)
    liou = md.liouville_rhs(md.ClassicalDensity(state.rho), ctx_for(grid32, hm.zeeman([0.2, 0.0, 1.0])))
    np.testing.assert_allclose(out.derivative.rho, liou.derivative.rho, atol=1e-14)


def test_ehrenfest_eigenstate_keeps_density_static(grid16):
    ctx = ctx_for(grid16, hm.quantum_larmor([0, 0, 1.0]))
    psi = np.zeros(grid16.shape + (2,), complex)
    psi[..., 0] = 1
    out = md.ehrenfest_rhs(md.Factored(vmf(grid16, [1, 0, 0], 3), psi), ctx)
    assert np.all(out.derivative.rho == 0.0)


def test_ehrenfest_preserves_zero_sigma_x(grid32):
    ctx = ctx_for(grid32, hm.coupled(h0=hm.zeeman([0, 0, 1]), alpha=1.0, gamma=0.0))
    psi = np.zeros(grid32.shape + (2,), complex)
    psi[..., 0] = 1
    state = md.Factored(vmf(grid32, [1, 0, 0], 3), psi)
    d = md.ehrenfest_rhs(state, ctx).derivative
    rate = 2 * np.real(np.conj(psi[..., 0]) * d.psi[..., 1] + np.conj(d.psi[..., 0]) * psi[..., 1])
    assert np.abs(rate).max() < 1e-15


def test_ehrenfest_requires_normalized_spinor(grid16):
    ctx = ctx_for(grid16, COUPLED)
    psi = 1.01 * smooth_spinor(grid16)
    with pytest.raises(ContractViolation):
        md.ehrenfest_rhs(md.Factored(smooth_density(grid16), psi), ctx)


@pytest.mark.parametrize("rhs", [md.ehrenfest_rhs, md.factored_nonlinear_rhs])
def test_spinor_norm_is_conserved_along_characteristics(grid32, rhs):
    ctx = ctx_for(grid32, COUPLED)
    state = md.Factored(smooth_density(grid32), smooth_spinor(grid32))
    out = rhs(state, ctx)
    material = out.derivative.psi + np.einsum("ijk,ijka->ija", out.calX, grid32.tangential_gradient(state.psi))
    rate = 2 * np.real(np.sum(np.conj(state.psi) * material, axis=-1))
    assert np.abs(rate).max() < 1e-14


def test_ehrenfest_density_form_matches_factored(grid32):
    ctx = ctx_for(grid32, COUPLED)
    rho, psi = smooth_density(grid32), smooth_spinor(grid32)
    a = md.ehrenfest_rhs(md.Factored(rho, psi), ctx)
    b = md.ehrenfest_density_rhs(md.density_from_factored(rho, psi), ctx)
    np.testing.assert_allclose(a.calX, b.calX, atol=1e-14)
    np.testing.assert_allclose(sa.op_trace(b.derivative.P), a.derivative.rho, atol=1e-13)


# -- nonlinear model ---------------------------------------------------------------------------


def test_nonlinear_constant_P_decoupled_has_no_corrections(grid32):
    ctx = ctx_for(grid32, DECOUPLED)
    psi = np.broadcast_to(np.array([0.6, 0.8j]), grid32.shape + (2,))
    P = md.density_from_factored(smooth_density(grid32), psi).P
    out = md.nonlinear_rhs(md.HybridDensity(P), ctx)
    assert np.abs(out.Xi).max() < 1e-13
    np.testing.assert_allclose(out.calX, ctx.X[..., 0], atol=1e-13)
    np.testing.assert_allclose(out.calH, ctx.H, atol=1e-13)


def test_nonlinear_scalar_hamiltonian_reduces_to_liouville():
    H = hm.zeeman([0.3, 0.0, 1.0]) + hm.anisotropy(np.diag([0.2, 0.0, -0.1]))

    def err(n):
        g = SphereGrid(n, 2 * n)
        ctx = ctx_for(g, H)
        rho = smooth_density(g)
        P = md.density_from_factored(rho, smooth_spinor(g)).P
        out = md.nonlinear_rhs(md.HybridDensity(P), ctx)
        np.testing.assert_allclose(out.calX, ctx.X[..., 0], atol=1e-15)
        np.testing.assert_array_equal(out.calH, ctx.H)
        d = out.derivative.P
        liou = md.liouville_rhs(md.ClassicalDensity(rho), ctx).derivative.rho
        np.testing.assert_allclose(sa.op_trace(d), liou, atol=1e-13)
        # the normalized operator P / rho is only advected
        Pl = P / rho[..., None]
        dPl = (d - Pl * sa.op_trace(d)[..., None]) / rho[..., None]
        adv = -np.einsum("ijk,ijkp->ijp", ctx.X[..., 0], g.tangential_gradient(Pl))
        return np.abs(dPl - adv).max()

    e = [err(n) for n in (16, 32)]
    assert rates(e)[0] > 2.7


def test_nonlinear_rhs_conserves_mass_and_is_hermitian(grid32):
    ctx = ctx_for(grid32, COUPLED)
    out = md.nonlinear_rhs(md.HybridDensity(hybrid_density(grid32).P), ctx)
    dP = out.derivative.P
    assert np.isrealobj(dP)
    assert abs(grid32.integrate(sa.op_trace(dP))) < 1e-15
    assert np.abs(grid32.dot_u(out.calX)).max() < 1e-15


@pytest.mark.parametrize("axis, angle", [((1, 0, 0), np.pi / 3), ((0.3, -1, 0.5), 1.1)])
def test_nonlinear_unitary_covariance(grid16, axis, angle):
    H = hm.coupled(h0=hm.zeeman([0, 0, 1]), alpha=1.0, gamma=0.7) + hm.quantum_larmor([0.2, -0.1, 0.0])
    Hc = H.conjugated(axis, angle)
    P = hybrid_density(grid16).P
    a = md.nonlinear_rhs(md.HybridDensity(P), ctx_for(grid16, H)).derivative.P
    b = md.nonlinear_rhs(md.HybridDensity(sa.unitary_conjugate(P, axis, angle)), ctx_for(grid16, Hc)).derivative.P
    np.testing.assert_allclose(b, sa.unitary_conjugate(a, axis, angle), atol=1e-12 * np.abs(a).max())


def test_vector_field_forms_agree_at_fourth_order():
    def err(n):
        g = SphereGrid(n, 2 * n)
        P = hybrid_density(g).P
        a = md.hybrid_generators(P, ctx_for(g, COUPLED, vector_field_form="direct"))[0]
        b = md.hybrid_generators(P, ctx_for(g, COUPLED, vector_field_form="bivector"))[0]
        return np.abs(a - b).max()

    e = [err(n) for n in (16, 32, 64)]
    assert np.all(rates(e) > 3.5)


def test_unknown_vector_field_form(grid16):
    with pytest.raises(ValueError):
        md.hybrid_generators(hybrid_density(grid16).P, ctx_for(grid16, COUPLED, vector_field_form="other"))


def test_generators_match_energy_functional_derivative():
    """Directional derivative of the discrete energy against the closed form."""

    def err(n):
        g = SphereGrid(n, 2 * n)
        ctx = ctx_for(g, COUPLED)
        P = hybrid_density(g).P
        u = g.nodes
        rho = sa.op_trace(P)
        dl = np.stack([np.cos(u[..., 0]), 0.3 * u[..., 1] * u[..., 2], np.sin(u[..., 2]), 0.2 * u[..., 0]], -1)
        dl = dl * rho[..., None]
        eps = 1e-6
        num = (dg.energy(P + eps * dl, ctx) - dg.energy(P - eps * dl, ctx)) / (2 * eps)
        ana = g.integrate(sa.trace_product(dg.energy_derivative(P, ctx), dl))
        return abs(num - ana)

    e = [err(n) for n in (16, 32, 64)]
    assert e[1] < 1e-6
    assert np.all(rates(e) > 3.5)


def test_factored_form_matches_density_form():
    def err(n):
        g = SphereGrid(n, 2 * n)
        ctx = ctx_for(g, COUPLED)
        rho, psi = smooth_density(g), smooth_spinor(g)
        a = md.nonlinear_rhs(md.density_from_factored(rho, psi), ctx).derivative.P
        d = md.factored_nonlinear_rhs(md.Factored(rho, psi), ctx).derivative
        h = 1e-7
        dproj = (sa.projector(psi + h * d.psi) - sa.projector(psi - h * d.psi)) / (2 * h)
        b = d.rho[..., None] * sa.projector(psi) + rho[..., None] * dproj
        return np.abs(a - b).max() / np.abs(a).max()

    e = [err(n) for n in (16, 32, 64)]
    assert e[2] < 1e-4
    assert np.all(rates(e) > 2.7)


def test_spectral_transport_converges():
    def drift(n):
        g = SphereGrid(n, 2 * n)
        ctx = ctx_for(g, COUPLED)
        s = md.HybridDensity(hybrid_density(g).P)
        for _ in range(20):
            s = step(s, md.nonlinear_rhs, ctx, 1e-3)
        hi, lo = sa.hermitian_eigenvalues(s.P / sa.op_trace(s.P)[..., None])
        return np.abs(lo).max()

    e = [drift(n) for n in (16, 32)]
    assert e[1] < 3e-5
    assert rates(e)[0] > 2.7


def test_degenerate_density_aborts(grid16):
    ctx = ctx_for(grid16, COUPLED)
    P = hybrid_density(grid16).P
    P[:4] = 0.0
    with pytest.raises(DegenerateDensity):
        md.nonlinear_rhs(md.HybridDensity(P), ctx)


def test_sparse_floor_is_reported(grid16):
    ctx = ctx_for(grid16, hm.zeeman([0, 0, 1]))
    P = hybrid_density(grid16).P
    P[0, 0] = 0.0
    out = md.nonlinear_rhs(md.HybridDensity(P), ctx)
    assert out.floor_fraction == pytest.approx(1 / grid16.size)


def test_regularize_density_floor():
    rho = np.array([[1.0, 1e-12], [0.5, 0.2]])
    rf, frac = md.regularize_density(rho, 1e-10, 0.5)
    assert rf[0, 1] == 1e-10 and frac == 0.25
    with pytest.raises(DegenerateDensity):
        md.regularize_density(-rho)


# -- conversions --------------------------------------------------------------------------------


def test_factored_from_density_spin_up(grid16):
    rho = smooth_density(grid16)
    P = rho[..., None] * 0.5 * (sa.IDENTITY + sa.SIGMA_Z)
    f = md.factored_from_density(P)
    np.testing.assert_allclose(f.rho, rho)
    np.testing.assert_allclose(f.psi, np.broadcast_to([1, 0], grid16.shape + (2,)), atol=1e-15)


def test_factored_roundtrip(grid16):
    rho, psi = smooth_density(grid16), smooth_spinor(grid16)
    P = md.density_from_factored(rho, psi).P
    f = md.factored_from_density(P)
    np.testing.assert_allclose(md.density_from_factored(f.rho, f.psi).P, P, atol=1e-12)
    np.testing.assert_allclose(sa.spinor_norm2(f.psi), 1.0, atol=1e-14)
    big = np.argmax(np.abs(f.psi), axis=-1)
    lead = np.take_along_axis(f.psi, big[..., None], axis=-1)[..., 0]
    assert np.all(lead.imag == 0) and np.all(lead.real > 0)


def test_maximally_mixed_is_not_factorable(grid16):
    P = np.broadcast_to(0.5 * sa.IDENTITY, grid16.shape + (4,))
    with pytest.raises(NotFactorable):
        md.factored_from_density(P)


def test_rhs_registry():
    assert md.rhs_for("nonlinear") is md.nonlinear_rhs
    with pytest.raises(ValueError):
        md.rhs_for("bogus")


def test_state_combine():
    a = md.Factored(np.ones((2, 2)), np.ones((2, 2, 2), complex))
    b = a.combine([2.0], [a])
    assert np.all(b.rho == 3.0) and np.all(b.psi == 3.0)
    assert b.is_finite()
