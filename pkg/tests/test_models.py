"""Model builders: parameter containers, gauges, adiabatic elimination."""

import numpy as np
import pytest

from catflip import fock, models
from catflip.units import KHZ, MHZ


def test_two_mode_params_validation():
    with pytest.raises(ValueError):
        models.TwoModeParams(g2=1.0, eps_b=1.0, kappa_b=0.0)
    p = models.TwoModeParams(g2=1 * MHZ, eps_b=2 * MHZ, kappa_b=10 * MHZ)
    assert p.kappa_a == 0.0 and p.n_th == 0.0


def test_single_mode_params_validation():
    with pytest.raises(ValueError):
        models.SingleModeParams(eps_2=-1.0, kappa_2=1.0)
    with pytest.raises(ValueError):
        models.SingleModeParams(eps_2=1.0, kappa_2=-1.0)
    # kappa_2 = 0 is legitimate: the purely Kerr end of a nonlinear budget
    models.SingleModeParams(eps_2=1.0, kappa_2=0.0, K_a=1.0)


def test_adiabatic_map_round_trip():
    m = models.AdiabaticMap(g2=1 * MHZ, kappa_b=8 * MHZ)
    assert abs(m.kappa_2 - 4.0 * abs(1 * MHZ) ** 2 / (8 * MHZ)) < 1e-14
    eps_2 = 3 * MHZ
    eps_b = m.eps_b_from_eps2(eps_2)
    back = m.eps2_from_eps_b(eps_b)
    assert abs(back - eps_2) < 1e-10 * abs(eps_2)


def test_two_mode_params_for_nbar():
    nbar = 4.0
    p = models.two_mode_params_for_nbar(nbar, g2=1 * MHZ, kappa_b=8 * MHZ)
    m = models.AdiabaticMap(g2=1 * MHZ, kappa_b=8 * MHZ)
    eps_2 = m.eps2_from_eps_b(p.eps_b)
    assert abs(abs(eps_2) / m.kappa_2 - nbar) < 1e-10


def test_build_single_mode_gauges():
    p = models.SingleModeParams(eps_2=4 * MHZ, kappa_2=1 * MHZ)
    for gauge, steering in (("imag", "im_a"), ("real", "re_a")):
        m = models.build_single_mode(p, 20, gauge=gauge)
        lobe = m.meta["lobe"]
        assert abs(abs(lobe) - 2.0) < 1e-12
        if gauge == "imag":
            assert abs(lobe - 2.0j) < 1e-12
        else:
            assert abs(lobe - 2.0) < 1e-12
        assert m.meta["steering"] == steering
        assert m.meta["kappa_stab"] == pytest.approx(1 * MHZ)
        assert "two_photon_loss" in m.meta["stabilizing_labels"]
    with pytest.raises(ValueError):
        models.build_single_mode(p, 20, gauge="other")


def test_single_mode_jump_labels():
    p = models.SingleModeParams(
        eps_2=2 * MHZ, kappa_2=1 * MHZ, kappa_a=10 * KHZ, kappa_phi=5 * KHZ, n_th=0.1
    )
    m = models.build_single_mode(p, 12)
    labels = [lbl for _, lbl in m.jumps]
    assert labels == ["two_photon_loss", "memory_loss", "memory_gain", "memory_dephasing"]
    p0 = models.SingleModeParams(eps_2=2 * MHZ, kappa_2=1 * MHZ)
    labels0 = [lbl for _, lbl in models.build_single_mode(p0, 12).jumps]
    assert labels0 == ["two_photon_loss"]


def test_single_mode_hamiltonian_matrix():
    # H = (c a†^2 + conj(c) a^2)/2 with c = -i eps_2 in the default gauge
    eps_2 = 3 * MHZ
    p = models.SingleModeParams(eps_2=eps_2, kappa_2=1 * MHZ)
    m = models.build_single_mode(p, 8)
    a = fock.annihilation(8).to_dense()
    want = 0.5 * (-1j * eps_2) * (a.conj().T @ a.conj().T) + 0.5 * (1j * eps_2) * (a @ a)
    assert np.max(np.abs(m.hamiltonian.to_dense() - want)) < 1e-12


def test_single_mode_kerr_term():
    p = models.SingleModeParams(eps_2=1 * MHZ, kappa_2=1 * MHZ, K_a=0.3 * MHZ)
    m = models.build_single_mode(p, 8)
    a = fock.annihilation(8).to_dense()
    base = models.build_single_mode(
        models.SingleModeParams(eps_2=1 * MHZ, kappa_2=1 * MHZ), 8
    ).hamiltonian.to_dense()
    extra = m.hamiltonian.to_dense() - base
    want = 0.5 * (0.3 * MHZ) * (a.conj().T @ a.conj().T @ a @ a)
    assert np.max(np.abs(extra - want)) < 1e-12


def test_build_two_mode_structure():
    p = models.TwoModeParams(
        g2=1 * MHZ, eps_b=2 * MHZ, kappa_b=8 * MHZ, kappa_a=10 * KHZ, chi=0.5 * MHZ
    )
    m = models.build_two_mode(p, (10, 4))
    assert m.space.mode_dims == (10, 4)
    assert m.hamiltonian.is_hermitian()
    labels = [lbl for _, lbl in m.jumps]
    assert "buffer_loss" in labels and "memory_loss" in labels


def test_two_mode_hamiltonian_matrix():
    g2 = 1.5 * MHZ
    eps_b = 2 * MHZ
    p = models.TwoModeParams(g2=g2, eps_b=eps_b, kappa_b=8 * MHZ)
    m = models.build_two_mode(p, (6, 3))
    a = fock.lift(fock.annihilation(6), m.space, 0).to_dense()
    b = fock.lift(fock.annihilation(3), m.space, 1).to_dense()
    want = (
        g2 * (a.conj().T @ a.conj().T) @ b
        + np.conj(g2) * (a @ a) @ b.conj().T
        + eps_b * b.conj().T
        + np.conj(eps_b) * b
    )
    assert np.max(np.abs(m.hamiltonian.to_dense() - want)) < 1e-10


def test_model_spec_rejects_nonhermitian():
    space = fock.HilbertSpace((4,))
    a = fock.annihilation(4)
    with pytest.raises(ValueError):
        models.ModelSpec(space=space, hamiltonian=a, jumps=[], meta={})


def test_effective_operator_chi_zero_limit():
    # chi -> 0 reduces the effective jump to sqrt(kappa_2) (a^2 - alpha^2)
    p = models.SingleModeParams(eps_2=2 * MHZ, kappa_2=0.5 * MHZ)
    g2 = 1 * MHZ
    kappa_b = 4 * abs(g2) ** 2 / (0.5 * MHZ)
    m = models.build_effective_operator_model(p, 14, g2=g2, kappa_b=kappa_b, chi=0.0)
    a = fock.annihilation(14).to_dense()
    alpha2 = (2 * MHZ) / (0.5 * MHZ)
    want = 1j * np.sqrt(0.5 * MHZ) * (a @ a - alpha2 * np.eye(14))
    got = m.jumps[0][0].to_dense()
    assert np.max(np.abs(got - want)) < 1e-10
    assert np.max(np.abs(m.hamiltonian.to_dense())) < 1e-12


def test_effective_operator_chi_shapes():
    p = models.SingleModeParams(eps_2=2 * MHZ, kappa_2=0.5 * MHZ)
    g2 = 1 * MHZ
    kappa_b = 4 * abs(g2) ** 2 / (0.5 * MHZ)
    chi = 0.3 * MHZ
    cutoff = fock.fock_cutoff(2.0)
    m = models.build_effective_operator_model(p, cutoff, g2=g2, kappa_b=kappa_b, chi=chi)
    assert m.hamiltonian.is_hermitian()
    # the dressed jump keeps the (a^2 - alpha^2) kernel: cat lobes stay dark
    alpha2 = (2 * MHZ) / (0.5 * MHZ)
    lobe = fock.coherent_state(np.sqrt(alpha2), cutoff)
    resid = np.linalg.norm(m.jumps[0][0].apply(lobe.amplitudes))
    scale = np.linalg.norm(m.jumps[0][0].apply(fock.fock_state(m.space, [2]).amplitudes))
    assert resid < 1e-5 * scale


def test_theta_split():
    theta, xi = 0.7, 0.2 * MHZ
    kappa_2, k_a = models.theta_split(theta, xi)
    assert kappa_2 == pytest.approx(xi * np.cos(theta))
    assert k_a == pytest.approx(xi * np.sin(theta))
    assert np.isclose(np.hypot(kappa_2, k_a), xi)
    with pytest.raises(ValueError):
        models.theta_split(-0.1, xi)


def test_eps_b_for_gauge_stays_real():
    for gauge in models.GAUGES:
        eps_b = models.eps_b_for_gauge(2 * MHZ, 1 * MHZ, 8 * MHZ, gauge)
        assert complex(eps_b).imag == 0.0


def test_gauge_consistency_two_mode_vs_single():
    # both routes must place the lobes at the same points
    nbar = 3.0
    g2, kappa_b = 1 * MHZ, 8 * MHZ
    for gauge in models.GAUGES:
        p2 = models.two_mode_params_for_nbar(nbar, g2=g2, kappa_b=kappa_b, gauge=gauge)
        m2 = models.build_two_mode(p2, (6, 3))
        amap = models.adiabatic_map(g2, kappa_b)
        p1 = models.SingleModeParams(eps_2=nbar * amap.kappa_2, kappa_2=amap.kappa_2)
        m1 = models.build_single_mode(p1, 6, gauge=gauge)
        assert abs(m2.meta["lobe"] - m1.meta["lobe"]) < 1e-9
