"""Truncated Fock-space algebra: operators, states, Wigner, partial trace."""

import math

import numpy as np
import pytest

from catflip import fock


def test_annihilation_entries():
    a = fock.annihilation(3).to_dense()
    expected = np.zeros((3, 3), dtype=complex)
    expected[0, 1] = 1.0
    expected[1, 2] = math.sqrt(2.0)
    assert np.array_equal(a, expected)


def test_annihilation_kills_vacuum():
    a = fock.annihilation(6)
    vac = fock.fock_state(a.space, [0])
    assert np.all(a.apply(vac.amplitudes) == 0)


def test_annihilation_rejects_small_cutoff():
    with pytest.raises(ValueError):
        fock.annihilation(1)


def test_commutator_reflects_truncation():
    # [a, a^dag] = diag(1, ..., 1, 1-N) on an N-dimensional truncation
    for n in (2, 5, 9):
        a = fock.annihilation(n)
        comm = (a @ a.dag() - a.dag() @ a).to_dense()
        want = np.eye(n, dtype=complex)
        want[-1, -1] = 1.0 - n
        assert np.max(np.abs(comm - want)) < 1e-12


def test_number_diagonal_exact():
    for n in (2, 7, 13):
        nd = fock.number(n).to_dense()
        assert np.array_equal(np.diag(nd), np.arange(n, dtype=complex))
        assert np.count_nonzero(nd - np.diag(np.diag(nd))) == 0


def test_tensor_identity():
    i2 = fock.identity(fock.HilbertSpace((2,)))
    i3 = fock.identity(fock.HilbertSpace((3,)))
    t = fock.tensor(i2, i3)
    assert t.space.mode_dims == (2, 3)
    assert np.array_equal(t.to_dense(), np.eye(6, dtype=complex))


def test_tensor_mixed_product():
    a = fock.annihilation(4)
    b = fock.annihilation(3)
    ia = fock.identity(a.space)
    ib = fock.identity(b.space)
    lhs = (fock.tensor(a, ib) @ fock.tensor(ia, b)).to_dense()
    rhs = fock.tensor(a, b).to_dense()
    assert np.max(np.abs(lhs - rhs)) < 1e-14


def test_tensor_matrix_elements():
    a = fock.annihilation(4)
    b = fock.annihilation(3)
    op = fock.tensor(a.dag() @ a.dag(), b)
    space = op.space
    bra = fock.fock_state(space, [2, 0]).amplitudes
    ket = fock.fock_state(space, [0, 1]).amplitudes
    val = np.vdot(bra, op.apply(ket))
    assert abs(val - math.sqrt(2.0)) < 1e-12
    rev = np.vdot(ket, op.apply(bra))
    assert abs(rev) == 0.0


def test_tensor_associativity_seeded():
    rng = np.random.default_rng(101)
    for _ in range(10):
        dims = rng.integers(2, 4, size=3)
        ops = [
            fock.Operator(
                fock.HilbertSpace((int(d),)),
                rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)),
            )
            for d in dims
        ]
        left = fock.tensor(fock.tensor(ops[0], ops[1]), ops[2])
        right = fock.tensor(ops[0], fock.tensor(ops[1], ops[2]))
        assert left.space.mode_dims == right.space.mode_dims
        assert np.max(np.abs(left.to_dense() - right.to_dense())) < 1e-12


def test_lift_matches_tensor():
    space = fock.HilbertSpace((3, 4, 2))
    a = fock.annihilation(4)
    lifted = fock.lift(a, space, 1).to_dense()
    manual = fock.tensor(
        fock.identity(fock.HilbertSpace((3,))), a, fock.identity(fock.HilbertSpace((2,)))
    ).to_dense()
    assert np.array_equal(lifted, manual)


def test_coherent_vacuum():
    ket = fock.coherent_state(0.0, 8)
    want = np.zeros(8, dtype=complex)
    want[0] = 1.0
    assert np.max(np.abs(ket.amplitudes - want)) == 0.0


def test_coherent_moments_seeded():
    rng = np.random.default_rng(77)
    for _ in range(8):
        alpha = complex(rng.normal(), rng.normal())
        cutoff = fock.fock_cutoff(alpha)
        ket = fock.coherent_state(alpha, cutoff)
        n_op = fock.number(cutoff)
        a_op = fock.annihilation(cutoff)
        assert abs(ket.expect(n_op) - abs(alpha) ** 2) < 1e-8
        assert abs(ket.expect(a_op) - alpha) < 1e-8
        assert abs(ket.norm() - 1.0) < 1e-12


def test_coherent_truncation_warning():
    with pytest.warns(fock.TruncationWarning):
        ket = fock.coherent_state(3.0, 10)
    assert ket.truncation_warning


def test_fock_cutoff_rule():
    # cutoff = ceil(|alpha|^2 + 6 |alpha| + 10)
    assert fock.fock_cutoff(0.0) == 10
    assert fock.fock_cutoff(2.0) == 26
    assert fock.fock_cutoff(1j * 3.0) == 37


def test_parity_on_fock_states():
    space = fock.HilbertSpace((5,))
    p = fock.parity(space, 0)
    zero = fock.fock_state(space, [0])
    one = fock.fock_state(space, [1])
    assert np.array_equal(p.apply(zero.amplitudes), zero.amplitudes)
    assert np.array_equal(p.apply(one.amplitudes), -one.amplitudes)
    sq = (p @ p).to_dense()
    assert np.array_equal(sq, np.eye(5, dtype=complex))


def test_parity_even_cat():
    cutoff = fock.fock_cutoff(2.0)
    cat = fock.even_cat(2.0, cutoff)
    p = fock.parity(cat.space, 0)
    assert abs(cat.expect(p) - 1.0) < 1e-10
    odd = fock.odd_cat(2.0, cutoff)
    assert abs(odd.expect(p) + 1.0) < 1e-10


def test_parity_multimode_embedding():
    space = fock.HilbertSpace((3, 2))
    p = fock.parity(space, 1)
    ket = fock.fock_state(space, [2, 1])
    assert np.array_equal(p.apply(ket.amplitudes), -ket.amplitudes)


def test_displacement_generates_coherent():
    alpha = 0.7 - 0.4j
    cutoff = fock.fock_cutoff(alpha)
    d = fock.displacement(alpha, cutoff)
    vac = fock.fock_state(fock.HilbertSpace((cutoff,)), [0])
    moved = d.apply(vac.amplitudes)
    ket = fock.coherent_state(alpha, cutoff)
    assert np.max(np.abs(moved - ket.amplitudes)) < 1e-8


def test_wigner_vacuum_value():
    vac = fock.fock_state(fock.HilbertSpace((12,)), [0])
    res = fock.wigner(vac, xs=np.array([0.0]), ys=np.array([0.0]))
    assert abs(res.values[0, 0] - 2.0 / math.pi) < 1e-10


def test_wigner_coherent_matches_gaussian():
    # W(alpha) = (2/pi) exp(-2 |alpha - alpha0|^2) for a coherent state
    alpha0 = 0.9 + 0.3j
    ket = fock.coherent_state(alpha0, fock.fock_cutoff(alpha0))
    xs = np.array([0.0, 0.9, 1.5])
    ys = np.array([-0.5, 0.3])
    res = fock.wigner(ket, xs=xs, ys=ys)
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            want = (2.0 / math.pi) * math.exp(-2.0 * abs(x + 1j * y - alpha0) ** 2)
            assert abs(res.values[j, i] - want) < 1e-8


def test_wigner_normalization_seeded():
    rng = np.random.default_rng(33)
    for _ in range(3):
        d = 6
        m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = m @ m.conj().T
        rho /= np.trace(rho)
        state = fock.DensityMatrix(fock.HilbertSpace((d,)), rho)
        res = fock.wigner(state, points=81)
        assert abs(res.integral() - 1.0) < 1e-3
        assert not res.normalization_warning


def test_wigner_cat_negativity():
    cat = fock.even_cat(2.0, fock.fock_cutoff(2.0))
    res = fock.wigner(cat, points=81)
    assert res.values.min() < -0.05


def test_wigner_small_grid_warns():
    ket = fock.coherent_state(2.0, fock.fock_cutoff(2.0))
    with pytest.warns(fock.TruncationWarning):
        res = fock.wigner(ket, xs=np.linspace(-0.5, 0.5, 11), ys=np.linspace(-0.5, 0.5, 11))
    assert res.normalization_warning


def test_partial_trace_product_state():
    alpha, beta = 1.2, -0.6
    ka = fock.coherent_state(alpha, 14)
    kb = fock.coherent_state(beta, 10)
    joint = np.kron(ka.amplitudes, kb.amplitudes)
    ket = fock.Ket(fock.HilbertSpace((14, 10)), joint)
    red = fock.partial_trace(ket, 0)
    want = np.outer(ka.amplitudes, ka.amplitudes.conj())
    assert np.max(np.abs(red.mat - want)) < 1e-10
    assert abs(red.trace() - 1.0) < 1e-12


def test_partial_trace_bell_block():
    space = fock.HilbertSpace((2, 2))
    amp = np.zeros(4, dtype=complex)
    amp[0] = amp[3] = 1.0 / math.sqrt(2.0)
    red = fock.partial_trace(fock.Ket(space, amp), 1)
    assert np.max(np.abs(red.mat - 0.5 * np.eye(2))) < 1e-12


def test_partial_trace_properties_seeded():
    rng = np.random.default_rng(5150)
    for _ in range(6):
        dims = (int(rng.integers(2, 4)), int(rng.integers(2, 4)), int(rng.integers(2, 3)))
        d = int(np.prod(dims))
        m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        rho = m @ m.conj().T
        rho /= np.trace(rho)
        state = fock.DensityMatrix(fock.HilbertSpace(dims), rho)
        keep = int(rng.integers(0, 3))
        red = fock.partial_trace(state, keep)
        assert red.space.mode_dims == (dims[keep],)
        assert abs(red.trace() - 1.0) < 1e-12
        assert np.linalg.eigvalsh(red.mat).min() > -1e-10


def test_partial_trace_rejects_bad_modes():
    rho = fock.DensityMatrix(fock.HilbertSpace((2, 2)), np.eye(4) / 4.0)
    with pytest.raises(ValueError):
        fock.partial_trace(rho, 5)
    with pytest.raises(ValueError):
        fock.partial_trace(rho, (0, 0))


def test_ket_normalization_guard():
    ket = fock.Ket(fock.HilbertSpace((4,)), np.array([2.0, 0, 0, 0], dtype=complex))
    with pytest.raises(ValueError):
        ket.check_normalized()
    assert abs(ket.normalized().norm() - 1.0) < 1e-12


def test_density_matrix_validate():
    good = fock.DensityMatrix(fock.HilbertSpace((3,)), np.diag([0.5, 0.3, 0.2]).astype(complex))
    good.validate()
    bad = fock.DensityMatrix(fock.HilbertSpace((3,)), np.diag([1.2, -0.2, 0.0]).astype(complex))
    with pytest.raises(ValueError):
        bad.validate()
