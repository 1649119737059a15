"""Mean-field flow: fixed points, transverse stability, locking checks."""

import math

import numpy as np
import pytest

from catflip import semiclassical as sc
from catflip.models import TwoModeParams
from catflip.units import KHZ, MHZ


def _params(**kw):
    base = dict(g2=0.6 * MHZ, eps_b=6 * MHZ, kappa_b=10 * MHZ)
    base.update(kw)
    return TwoModeParams(**base)


def _eom_reference(y, p):
    # direct transcription of the flow, complex arithmetic throughout
    alpha = complex(y[0], y[1])
    beta = complex(y[2], y[3])
    g2 = abs(p.g2)
    eps = -abs(p.eps_b)
    d_alpha = (
        -0.5 * p.kappa_a * alpha
        + 1j * p.K_a * abs(alpha) ** 2 * alpha
        + 1j * p.chi * abs(beta) ** 2 * alpha
        - 2j * g2 * beta * np.conj(alpha)
    )
    d_beta = (
        -0.5 * p.kappa_b * beta
        + 1j * p.K_b * abs(beta) ** 2 * beta
        + 1j * p.chi * abs(alpha) ** 2 * beta
        - 1j * g2 * alpha * alpha
        - 1j * eps
    )
    return np.array([d_alpha.real, d_alpha.imag, d_beta.real, d_beta.imag])


def test_state_round_trips():
    s = sc.SemiclassicalState(1.0, -2.0, 0.5, 3.0)
    assert s.alpha == 1.0 - 2.0j and s.beta == 0.5 + 3.0j
    assert sc.SemiclassicalState.from_array(s.as_array()) == s
    assert sc.SemiclassicalState.from_modes(1 - 2j, 0.5 + 3j) == s


def test_eom_matches_reference_seeded():
    rng = np.random.default_rng(17)
    for _ in range(12):
        p = _params(
            kappa_a=float(rng.uniform(0, 0.1)) * MHZ,
            K_a=float(rng.uniform(-0.5, 0.5)) * MHZ,
            K_b=float(rng.uniform(-0.5, 0.5)) * MHZ,
            chi=float(rng.uniform(-0.5, 0.5)) * MHZ,
        )
        y = rng.normal(scale=2.0, size=4)
        got = sc.eom(sc.SemiclassicalState(*y), p).as_array()
        want = _eom_reference(y, p)
        assert np.max(np.abs(got - want)) < 1e-12 * max(1.0, np.max(np.abs(want)))


def test_locked_plane_matches_full_flow():
    rng = np.random.default_rng(18)
    p = _params(kappa_a=20 * KHZ)
    for _ in range(8):
        x_a, y_b = rng.normal(scale=2.0, size=2)
        dx, dy = sc.locked_plane_eom(x_a, y_b, p)
        full = sc.eom(sc.SemiclassicalState(x_a, 0.0, 0.0, y_b), p)
        assert abs(dx - full.x_a) < 1e-12
        assert abs(dy - full.y_b) < 1e-12
        # the plane is flow-invariant: transverse components vanish on it
        assert abs(full.y_a) < 1e-12 and abs(full.x_b) < 1e-12


def test_fixed_points_are_stationary():
    p = _params(kappa_a=20 * KHZ)
    fps = sc.fixed_points(p)
    assert fps.exists
    for point in (*fps.stable_points, fps.saddle):
        assert sc.flow_norm(point, p) < 1e-10


def test_fixed_points_existence_threshold():
    g2, kappa_b, kappa_a = 0.6 * MHZ, 10 * MHZ, 0.4 * MHZ
    crit = kappa_a * kappa_b / (8 * g2)
    below = TwoModeParams(g2=g2, eps_b=0.9 * crit, kappa_b=kappa_b, kappa_a=kappa_a)
    above = TwoModeParams(g2=g2, eps_b=1.1 * crit, kappa_b=kappa_b, kappa_a=kappa_a)
    assert not sc.fixed_points(below).exists
    assert sc.fixed_points(above).exists


def test_transverse_jacobian_closed_form():
    # kappa_a = 0: lambda_pm = -(g2 y_b + kb/4) pm sqrt((kb/4 - g2 y_b)^2 - 4 g2^2 x_a^2)
    p = _params()
    g2 = abs(p.g2)
    rng = np.random.default_rng(19)
    for _ in range(10):
        x_a, y_b = rng.normal(scale=2.0, size=2)
        ts = sc.transverse_jacobian(x_a, y_b, p)
        want = np.array(
            [
                -(g2 * y_b + p.kappa_b / 4) + np.sqrt(complex((p.kappa_b / 4 - g2 * y_b) ** 2 - 4 * g2**2 * x_a**2)),
                -(g2 * y_b + p.kappa_b / 4) - np.sqrt(complex((p.kappa_b / 4 - g2 * y_b) ** 2 - 4 * g2**2 * x_a**2)),
            ]
        )
        got = np.sort_complex(ts.eigenvalues)
        assert np.max(np.abs(got - np.sort_complex(want))) < 1e-10 * max(1.0, np.max(np.abs(want)))
        direct = np.sort_complex(np.linalg.eigvals(ts.jacobian))
        assert np.max(np.abs(got - direct)) < 1e-9 * max(1.0, np.max(np.abs(direct)))


def test_transverse_jacobian_matches_finite_difference():
    p = _params(kappa_a=30 * KHZ)
    x_a, y_b = 1.7, -0.4
    ts = sc.transverse_jacobian(x_a, y_b, p)
    h = 1e-6

    def flow_t(y_a, x_b):
        d = sc.eom(sc.SemiclassicalState(x_a, y_a, x_b, y_b), p)
        return np.array([d.y_a, d.x_b])

    fd = np.empty((2, 2))
    fd[:, 0] = (flow_t(h, 0.0) - flow_t(-h, 0.0)) / (2 * h)
    fd[:, 1] = (flow_t(0.0, h) - flow_t(0.0, -h)) / (2 * h)
    assert np.max(np.abs(fd - ts.jacobian)) < 1e-5 * max(1.0, np.max(np.abs(ts.jacobian)))


def test_plane_instability_condition():
    p = _params()
    g2 = abs(p.g2)
    thresh = p.kappa_b / (4 * g2)
    xs = np.linspace(0.0, 6.0, 25)
    beyond = -1.05 * thresh
    assert sc.transverse_jacobian(0.0, beyond, p).plane_unstable
    assert all(sc.transverse_jacobian(x, beyond, p).unstable_here for x in xs)
    inside = -0.95 * thresh
    assert not sc.transverse_jacobian(0.0, inside, p).plane_unstable
    assert not all(sc.transverse_jacobian(x, inside, p).unstable_here for x in xs)
    assert not sc.transverse_jacobian(0.0, abs(beyond), p).plane_unstable


def test_adiabatic_beta_is_slaved():
    p = _params(chi=0.2 * MHZ)
    for alpha in (0.0, 1.5, 1.0 - 0.7j):
        beta = sc.adiabatic_beta(alpha, p)
        d = sc.eom(sc.SemiclassicalState(alpha.real if isinstance(alpha, complex) else alpha,
                                         alpha.imag if isinstance(alpha, complex) else 0.0,
                                         beta.real, beta.imag), p)
        # alpha held fixed: only the buffer equation must vanish
        assert math.hypot(d.x_b, d.y_b) < 1e-9
    p0 = _params()
    assert abs(abs(sc.adiabatic_beta(0.0, p0)) - 2 * abs(p0.eps_b) / p0.kappa_b) < 1e-12


def test_integrate_plane_invariance():
    p = _params(kappa_a=20 * KHZ)
    fps = sc.fixed_points(p)
    start = sc.SemiclassicalState(0.4 * fps.x_a_st, 0.0, 0.0, 1.2 * fps.y_b_st)
    horizon = 100.0 / p.kappa_b
    res = sc.integrate(start, p, (0.0, horizon), t_eval=np.linspace(0.0, horizon, 64))
    assert res.states.shape == (64, 4)
    assert np.max(np.abs(res.states[:, 1])) < 1e-9
    assert np.max(np.abs(res.states[:, 2])) < 1e-9
    # the plane flow contracts onto a lobe
    assert abs(abs(res.states[-1, 0]) - fps.x_a_st) < 1e-3 * fps.x_a_st


def test_locking_report_margins():
    p = _params(kappa_a=20 * KHZ, chi=1 * KHZ)
    rep = sc.locking_conditions(p)
    assert rep.satisfied_raw and rep.satisfied
    strong = sc.locking_conditions(_params(kappa_a=20 * KHZ, chi=2 * MHZ))
    assert not strong.satisfied_raw
    lobe = sc.fixed_points(p).x_a_st ** 2
    assert rep.lobe_deflection == pytest.approx(abs(p.chi) * lobe)
    assert rep.delta_lock == pytest.approx(
        min(4 * abs(p.g2) ** 2 * lobe / p.kappa_b, p.kappa_b / 4)
    )


def test_locking_with_explicit_photon_number():
    p = _params(kappa_a=20 * KHZ, chi=1 * KHZ)
    rep = sc.locking_conditions(p, n_a=4.0)
    assert rep.lobe_deflection == pytest.approx(4.0 * abs(p.chi))
    assert rep.vacuum_deflection > 0


def test_adiabaticity_report():
    p = _params(kappa_a=20 * KHZ, chi=10 * KHZ)
    rep = sc.adiabaticity_check(p, alpha=2.0)
    assert rep.ratios["memory_loss"] == pytest.approx(p.kappa_a / p.kappa_b)
    assert rep.ratios["detuning"] == 0.0
    assert rep.worst in rep.ratios
    fast = sc.adiabaticity_check(
        TwoModeParams(g2=2 * MHZ, eps_b=20 * MHZ, kappa_b=2 * MHZ), alpha=3.0
    )
    assert not fast.satisfied
