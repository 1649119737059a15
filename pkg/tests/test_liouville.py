"""Vectorized Lindblad generators, spectra, and the asymptotic flip rate."""

import math

import numpy as np
import pytest
import scipy.linalg as sla

from catflip import fock, liouville, models
from catflip.units import KHZ, MHZ


def _random_model(rng, d):
    h = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    h = 0.5 * (h + h.conj().T)
    space = fock.HilbertSpace((d,))
    jumps = []
    for k in range(int(rng.integers(1, 3))):
        l = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        jumps.append((fock.Operator(space, l), f"ch{k}"))
    return models.ModelSpec(space, fock.Operator(space, h), jumps, {})


def _qubit_damping(kappa):
    space = fock.HilbertSpace((2,))
    a = fock.annihilation(2)
    h = fock.Operator(space, np.zeros((2, 2), dtype=complex))
    return models.ModelSpec(space, h, [(math.sqrt(kappa) * a, "loss")], {})


def test_vec_convention():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    lhs = liouville.vec(a @ x @ b)
    rhs = np.kron(b.T, a) @ liouville.vec(x)
    assert np.max(np.abs(lhs - rhs)) < 1e-12
    assert np.max(np.abs(liouville.unvec(liouville.vec(x), 4) - x)) == 0.0


def test_build_matches_direct_lindblad_seeded():
    rng = np.random.default_rng(42)
    for _ in range(10):
        d = int(rng.integers(2, 7))
        m = _random_model(rng, d)
        liouv = liouville.build_liouvillian(m)
        rho = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = rho + rho.conj().T
        got = liouv.apply_to_matrix(rho)
        want = liouville.apply_lindblad(m, rho)
        scale = max(np.max(np.abs(want)), 1.0)
        assert np.max(np.abs(got - want)) < 1e-10 * scale


def test_trace_preservation_seeded():
    rng = np.random.default_rng(43)
    for _ in range(10):
        m = _random_model(rng, int(rng.integers(2, 7)))
        liouv = liouville.build_liouvillian(m)
        scale = max(liouv.norm_scale(), 1.0)
        assert liouv.identity_left_null_residual() < 1e-10 * scale


def test_qubit_damping_spectrum_exact():
    kappa = 0.8
    liouv = liouville.build_liouvillian(_qubit_damping(kappa))
    dec = liouville.spectrum(liouv)
    want = np.array([0.0, -kappa / 2.0, -kappa / 2.0, -kappa])
    assert np.max(np.abs(np.real(dec.eigenvalues) - want)) < 1e-12
    assert np.max(np.abs(np.imag(dec.eigenvalues))) < 1e-12
    assert dec.complete


def test_qubit_dephasing_degenerate_steady_state():
    space = fock.HilbertSpace((2,))
    n = fock.number(2)
    h = fock.Operator(space, np.zeros((2, 2), dtype=complex))
    m = models.ModelSpec(space, h, [(math.sqrt(0.5) * fock.Operator(space, n.to_dense()), "deph")], {})
    liouv = liouville.build_liouvillian(m)
    res = liouville.steady_state(liouv)
    assert res.degenerate
    assert res.basis is not None and len(res.basis) >= 2
    vals = np.sort(np.real(liouville.spectrum(liouv).eigenvalues))[::-1]
    assert np.max(np.abs(vals - np.array([0.0, 0.0, -0.25, -0.25]))) < 1e-12


def test_thermal_qubit_steady_state():
    # detailed balance: p1/p0 = n_th/(1+n_th)
    kappa, n_th = 1.3, 0.4
    space = fock.HilbertSpace((2,))
    a = fock.annihilation(2)
    h = fock.Operator(space, np.zeros((2, 2), dtype=complex))
    m = models.ModelSpec(
        space,
        h,
        [
            (math.sqrt(kappa * (1 + n_th)) * a, "down"),
            (math.sqrt(kappa * n_th) * a.dag(), "up"),
        ],
        {},
    )
    res = liouville.steady_state(liouville.build_liouvillian(m))
    assert not res.degenerate
    p1 = float(np.real(res.rho.mat[1, 1]))
    assert abs(p1 - n_th / (1 + 2 * n_th)) < 1e-10


def test_steady_state_matches_long_time_evolution():
    p = models.SingleModeParams(eps_2=1 * MHZ, kappa_2=0.5 * MHZ, kappa_a=20 * KHZ)
    m = models.build_single_mode(p, 10)
    liouv = liouville.build_liouvillian(m)
    res = liouville.steady_state(liouv)
    assert res.residual < 1e-8 * max(liouv.norm_scale(), 1.0)
    assert abs(res.rho.trace() - 1.0) < 1e-10
    assert np.linalg.eigvalsh(res.rho.mat).min() > -1e-9
    prop = sla.expm(liouv.mat.toarray() * 50.0)
    rho0 = liouville.vec(np.eye(10, dtype=complex) / 10.0)
    evolved = liouville.unvec(np.linalg.matrix_power(prop, 40) @ rho0, 10)
    assert np.max(np.abs(evolved - res.rho.mat)) < 1e-6


def test_spectrum_sorting_and_biorthonormality():
    rng = np.random.default_rng(11)
    m = _random_model(rng, 5)
    liouv = liouville.build_liouvillian(m)
    dec = liouville.spectrum(liouv)
    re = np.real(dec.eigenvalues)
    assert np.all(np.diff(re) < 1e-12)
    assert dec.biorthonormality_residual() < 1e-10
    d = 5
    assert np.max(np.abs(dec.sigmas[dec.zero_index] - np.eye(d))) < 1e-9
    assert abs(np.trace(dec.etas[dec.zero_index]) - 1.0) < 1e-9
    for j in range(dec.count):
        if j != dec.zero_index:
            assert abs(np.linalg.norm(dec.etas[j]) - 1.0) < 1e-9


def test_spectrum_reconstructs_generator():
    rng = np.random.default_rng(12)
    m = _random_model(rng, 4)
    liouv = liouville.build_liouvillian(m)
    dec = liouville.spectrum(liouv)
    assert dec.complete
    rho = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    want = liouville.apply_lindblad(m, rho)
    got = np.zeros_like(want)
    for lam, eta, sig in zip(dec.eigenvalues, dec.etas, dec.sigmas):
        got = got + lam * eta * np.sum(np.conj(sig) * rho)
    scale = max(np.max(np.abs(want)), 1.0)
    assert np.max(np.abs(got - want)) < 1e-7 * scale


def test_bitflip_rate_qubit_exact():
    rate = liouville.bitflip_rate(liouville.build_liouvillian(_qubit_damping(0.8)))
    assert abs(rate.rate - 0.4) < 1e-12
    assert not rate.oscillatory


def test_bitflip_rate_oscillatory_flag():
    space = fock.HilbertSpace((2,))
    a = fock.annihilation(2)
    h = fock.Operator(space, 3.0 * fock.number(2).to_dense())
    m = models.ModelSpec(space, h, [(math.sqrt(0.5) * a, "loss")], {})
    rate = liouville.bitflip_rate(liouville.build_liouvillian(m))
    assert rate.oscillatory
    assert abs(rate.eigenvalue.imag) > 1.0


def test_bitflip_rate_rejects_model():
    p = models.SingleModeParams(eps_2=1 * MHZ, kappa_2=1 * MHZ)
    m = models.build_single_mode(p, 8)
    with pytest.raises(TypeError):
        liouville.bitflip_rate(m)


def test_bitflip_rate_matches_decay_fit():
    # spectral gap vs log-slope of the steering coordinate, same model
    p = models.SingleModeParams(eps_2=2 * MHZ, kappa_2=1 * MHZ, kappa_a=10 * KHZ)
    m = models.build_single_mode(p, 14)
    liouv = liouville.build_liouvillian(m)
    rate = liouville.bitflip_rate(liouv)
    assert rate.rate > 0 and not rate.oscillatory
    lobe = m.meta["lobe"]
    ket = fock.coherent_state(lobe, 14)
    rho = np.outer(ket.amplitudes, ket.amplitudes.conj())
    a = fock.annihilation(14)
    quad = fock.Operator(ket.space, (a.to_dense() - a.dag().to_dense()) / 2j)
    t1, span = 8.0, 24.0
    prop1 = sla.expm(liouv.mat.toarray() * t1)
    prop2 = np.linalg.matrix_power(prop1, 4)  # t1 + span
    v0 = liouville.vec(rho)
    y1 = liouville.expectation(liouville.unvec(prop1 @ v0, 14), quad).real
    y2 = liouville.expectation(liouville.unvec(prop2 @ v0, 14), quad).real
    fitted = math.log(y1 / y2) / span
    assert abs(fitted - rate.rate) < 1e-4 * rate.rate


def test_bitflip_rate_gauge_invariant():
    # the two drive gauges are unitarily equivalent at any cutoff
    rates = []
    for gauge in models.GAUGES:
        p = models.SingleModeParams(eps_2=2 * MHZ, kappa_2=1 * MHZ, kappa_a=10 * KHZ)
        m = models.build_single_mode(p, 12, gauge=gauge)
        rates.append(liouville.bitflip_rate(liouville.build_liouvillian(m)).rate)
    assert abs(rates[0] - rates[1]) < 1e-9 * abs(rates[0])


def test_spectral_cache_round_trip(tmp_path):
    rng = np.random.default_rng(21)
    m = _random_model(rng, 4)
    dec = liouville.spectrum(liouville.build_liouvillian(m))
    path = tmp_path / "dec.bin"
    dec.save(path, key=b"abc")
    back = liouville.SpectralDecomposition.load(path, key=b"abc")
    assert np.array_equal(back.eigenvalues, dec.eigenvalues)
    assert np.array_equal(back.etas, dec.etas)
    assert back.zero_index == dec.zero_index
    with pytest.raises(liouville.SpectralCacheError):
        liouville.SpectralDecomposition.load(path, key=b"other")
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(liouville.SpectralCacheError):
        liouville.SpectralDecomposition.load(path, key=b"abc")


def test_restricted_basis_isometry():
    r = liouville.restricted_basis(20, 6, 0.0, 2 * MHZ)
    assert r.shape == (20, 6)
    assert np.max(np.abs(r.conj().T @ r - np.eye(6))) < 1e-12
    with pytest.raises(ValueError):
        liouville.restricted_basis(8, 9, 0.0, 1.0)


def test_restricted_model_keeps_gap():
    # the diagnostic basis takes the lobe photon number and a phase set
    # so its low manifold contains the model's lobes (theta 0 for the
    # imag gauge, pi for real)
    p = models.SingleModeParams(eps_2=2 * MHZ, kappa_2=1 * MHZ, kappa_a=10 * KHZ)
    m = models.build_single_mode(p, 16)
    full = liouville.bitflip_rate(liouville.build_liouvillian(m)).rate
    r = liouville.restricted_basis(16, 10, 0.0, 2.0)
    small = liouville.bitflip_rate(liouville.build_liouvillian(liouville.restrict_model(m, r))).rate
    assert abs(small - full) < 0.05 * full


def test_expectation_matches_trace():
    rng = np.random.default_rng(31)
    d = 6
    rho = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    op = fock.Operator(fock.HilbertSpace((d,)), rng.normal(size=(d, d)))
    want = np.trace(rho @ op.to_dense())
    assert abs(liouville.expectation(rho, op) - want) < 1e-10


def test_reflection_symmetry_residuals():
    p_sym = models.SingleModeParams(eps_2=2 * MHZ, kappa_2=1 * MHZ, kappa_a=10 * KHZ)
    m_sym = models.build_single_mode(p_sym, 10)
    assert liouville.reflection_symmetry_check(m_sym) < 1e-10
