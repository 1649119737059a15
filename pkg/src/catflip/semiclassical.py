"""Semiclassical mean-field flow of the memory+buffer model.

Replacing the mode operators by c-numbers alpha = x_a + i y_a and
beta = x_b + i y_b turns the master equation into the 4D flow

    d alpha/dt = -(kappa_a/2) alpha + i K_a |alpha|^2 alpha
                 + i chi |beta|^2 alpha - 2 i g2 beta alpha*
    d beta/dt  = -(kappa_b/2) beta + i K_b |beta|^2 beta
                 + i chi |alpha|^2 beta - i g2 alpha^2 - i eps_b

Everything in this module works in the rotated frame where the buffer
drive is real and negative (eps_b = -|eps_b|), which places the memory
lobes on the real axis and the buffer rest state on the imaginary axis.
The plane {y_a = 0, x_b = 0} is then invariant for K_a = K_b = chi = 0
(phase locking), and its transverse stability controls whether
switching trajectories stay pinned to it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .models import TwoModeParams


class StiffnessError(RuntimeError):
    """The adaptive integrator could not proceed (step size underflow)."""


@dataclass(frozen=True)
class SemiclassicalState:
    x_a: float
    y_a: float
    x_b: float
    y_b: float

    @property
    def alpha(self) -> complex:
        return complex(self.x_a, self.y_a)

    @property
    def beta(self) -> complex:
        return complex(self.x_b, self.y_b)

    def as_array(self) -> np.ndarray:
        return np.array([self.x_a, self.y_a, self.x_b, self.y_b], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "SemiclassicalState":
        x_a, y_a, x_b, y_b = (float(v) for v in arr)
        return cls(x_a, y_a, x_b, y_b)

    @classmethod
    def from_modes(cls, alpha: complex, beta: complex) -> "SemiclassicalState":
        return cls(alpha.real, alpha.imag, beta.real, beta.imag)


def _gauge_eps(p: TwoModeParams) -> float:
    # real-negative drive in the rotated frame used throughout this module
    return -abs(p.eps_b)


def eom(state: SemiclassicalState, p: TwoModeParams) -> SemiclassicalState:
    """Flow field at a point, returned as a state-shaped derivative."""
    g2 = abs(p.g2)
    alpha = state.alpha
    beta = state.beta
    eps = _gauge_eps(p)
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
    return SemiclassicalState(d_alpha.real, d_alpha.imag, d_beta.real, d_beta.imag)


def flow_norm(state: SemiclassicalState, p: TwoModeParams) -> float:
    return float(np.linalg.norm(eom(state, p).as_array()))


def locked_plane_eom(x_a: float, y_b: float, p: TwoModeParams) -> tuple[float, float]:
    """Reduced flow on the invariant plane {y_a = 0, x_b = 0} for K = chi = 0."""
    g2 = abs(p.g2)
    dx_a = x_a * (2.0 * g2 * y_b - 0.5 * p.kappa_a)
    dy_b = -0.5 * p.kappa_b * y_b - g2 * x_a * x_a + abs(p.eps_b)
    return dx_a, dy_b


@dataclass
class FlowResult:
    times: np.ndarray
    states: np.ndarray  # (n, 4) columns x_a, y_a, x_b, y_b


def integrate(
    state0: SemiclassicalState,
    p: TwoModeParams,
    t_span: tuple[float, float],
    t_eval=None,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    method: str = "DOP853",
) -> FlowResult:
    """Adaptive integration of the flow; raises StiffnessError on failure."""

    def rhs(_t, y):
        d = eom(SemiclassicalState(*y), p)
        return [d.x_a, d.y_a, d.x_b, d.y_b]

    sol = solve_ivp(rhs, t_span, state0.as_array(), t_eval=t_eval, rtol=rtol, atol=atol, method=method)
    if not sol.success:
        raise StiffnessError(f"integration stalled: {sol.message}")
    return FlowResult(sol.t, sol.y.T)


def adiabatic_beta(alpha: complex, p: TwoModeParams) -> complex:
    """Buffer amplitude slaved to the memory field.

    beta_ad = i (g2 alpha^2 + eps) / (-kappa_b/2 + i chi |alpha|^2) with the
    real-negative drive of this module's frame; at alpha = 0, chi = 0 it
    reduces to |beta| = 2 |eps_b| / kappa_b.
    """
    g2 = abs(p.g2)
    eps = _gauge_eps(p)
    return 1j * (g2 * alpha * alpha + eps) / (-0.5 * p.kappa_b + 1j * p.chi * abs(alpha) ** 2)


@dataclass(frozen=True)
class FixedPointSet:
    """Stationary points of the locked-plane flow for K = chi = 0."""

    x_a_st: float
    y_b_st: float
    saddle_y_b: float
    exists: bool

    @property
    def stable_points(self) -> tuple[SemiclassicalState, SemiclassicalState]:
        return (
            SemiclassicalState(self.x_a_st, 0.0, 0.0, self.y_b_st),
            SemiclassicalState(-self.x_a_st, 0.0, 0.0, self.y_b_st),
        )

    @property
    def saddle(self) -> SemiclassicalState:
        return SemiclassicalState(0.0, 0.0, 0.0, self.saddle_y_b)


def fixed_points(p: TwoModeParams) -> FixedPointSet:
    """Lobe fixed points +-(x_a,st, y_b,st) and the central saddle.

    x_a,st = sqrt(|eps_b|/g2 - kappa_a kappa_b / (8 g2^2)),
    y_b,st = kappa_a/(4 g2), saddle at (0, 2 |eps_b| / kappa_b).  The
    lobes exist when |eps_b| > kappa_a kappa_b / (8 g2).
    """
    g2 = abs(p.g2)
    if g2 == 0:
        raise ValueError("g2 must be nonzero")
    radicand = abs(p.eps_b) / g2 - p.kappa_a * p.kappa_b / (8.0 * g2 * g2)
    exists = radicand > 0
    x_a_st = math.sqrt(radicand) if exists else 0.0
    return FixedPointSet(
        x_a_st=x_a_st,
        y_b_st=p.kappa_a / (4.0 * g2),
        saddle_y_b=2.0 * abs(p.eps_b) / p.kappa_b,
        exists=exists,
    )


@dataclass
class TransverseStability:
    """Linearization of the (y_a, x_b) transverse dynamics at a plane point."""

    jacobian: np.ndarray
    eigenvalues: np.ndarray
    gap: float                 # min |lambda|, the locking gap when stable
    unstable_here: bool        # max Re lambda > 0 at this (x_a, y_b)
    plane_unstable: bool       # y_b < 0 and |y_b| > kappa_b/(4 g2): unstable for every x_a


def transverse_jacobian(x_a: float, y_b: float, p: TwoModeParams) -> TransverseStability:
    """Transverse Jacobian [[-k_a/2 - 2 g2 y_b, -2 g2 x_a], [2 g2 x_a, -k_b/2]].

    For kappa_a -> 0 its eigenvalues take the closed form
    lambda_+- = -(g2 y_b + kappa_b/4)
                +- sqrt((kappa_b/4 - g2 y_b)^2 - 4 g2^2 x_a^2).
    """
    g2 = abs(p.g2)
    jac = np.array(
        [
            [-0.5 * p.kappa_a - 2.0 * g2 * y_b, -2.0 * g2 * x_a],
            [2.0 * g2 * x_a, -0.5 * p.kappa_b],
        ]
    )
    half_tr = 0.5 * (jac[0, 0] + jac[1, 1])
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    disc = complex(half_tr * half_tr - det)
    root = np.sqrt(disc)
    eigs = np.array([half_tr + root, half_tr - root])
    return TransverseStability(
        jacobian=jac,
        eigenvalues=eigs,
        gap=float(np.min(np.abs(eigs))),
        unstable_here=bool(np.max(eigs.real) > 0),
        plane_unstable=bool(y_b < 0 and abs(y_b) > p.kappa_b / (4.0 * g2)),
    )


@dataclass
class LockingReport:
    """Phase-locking validity of the cross-Kerr perturbation.

    The chi terms push the flow off the locked plane with the vector
    s = (chi y_b^2 x_a, -chi x_a^2 y_b); locking survives while both
    drive-level quantities stay well below the locking gap
    delta_lock = min(4 g2^2 alpha^2 / kappa_b, kappa_b / 4).
    """

    vacuum_deflection: float      # |chi| (2 |eps_b| / kappa_b)^2
    lobe_deflection: float        # |chi| x_a,st^2
    delta_lock: float
    margin: float
    perturbation: tuple[float, float]
    satisfied_raw: bool = field(init=False)
    satisfied: bool = field(init=False)

    def __post_init__(self) -> None:
        worst = max(self.vacuum_deflection, self.lobe_deflection)
        self.satisfied_raw = worst < self.delta_lock
        self.satisfied = worst * self.margin <= self.delta_lock


def locking_conditions(
    p: TwoModeParams, n_a: float | None = None, margin: float = 10.0
) -> LockingReport:
    """Cross-Kerr phase-locking conditions at photon number n_a.

    With n_a = None the operating point comes from fixed_points(p);
    otherwise the lobe is placed at x_a,st^2 = n_a and |eps_b| is set
    consistently with stationarity.
    """
    g2 = abs(p.g2)
    if n_a is None:
        fps = fixed_points(p)
        alpha_sq = fps.x_a_st**2
        eps_mag = abs(p.eps_b)
        y_b_st = fps.y_b_st
    else:
        alpha_sq = float(n_a)
        eps_mag = g2 * alpha_sq + p.kappa_a * p.kappa_b / (8.0 * g2)
        y_b_st = p.kappa_a / (4.0 * g2)
    delta_lock = min(4.0 * g2 * g2 * alpha_sq / p.kappa_b, p.kappa_b / 4.0)
    beta_vac = 2.0 * eps_mag / p.kappa_b
    x_a_st = math.sqrt(alpha_sq)
    return LockingReport(
        vacuum_deflection=abs(p.chi) * beta_vac**2,
        lobe_deflection=abs(p.chi) * alpha_sq,
        delta_lock=delta_lock,
        margin=margin,
        perturbation=(
            p.chi * y_b_st**2 * x_a_st,
            -p.chi * alpha_sq * y_b_st,
        ),
    )


@dataclass
class AdiabaticityReport:
    """Scale separation between the buffer linewidth and everything else."""

    ratios: dict[str, float]     # name -> rate / kappa_b
    margin: float
    satisfied: bool = field(init=False)
    worst: str = field(init=False)

    def __post_init__(self) -> None:
        self.worst = max(self.ratios, key=lambda k: self.ratios[k])
        self.satisfied = all(r * self.margin <= 1.0 for r in self.ratios.values())


def adiabaticity_check(
    p: TwoModeParams,
    alpha: complex,
    beta: complex | None = None,
    margin: float = 10.0,
) -> AdiabaticityReport:
    """Compare the buffer linewidth to every slow scale it must dominate.

    Checks g2 |beta|, kappa_a, the (zero) drive detuning, K_a |alpha|^2 and
    chi |beta|^2 against kappa_b, plus the vacuum-crossing deflection
    4 chi |eps_b|^2 / kappa_b^2 where the slaved buffer field is largest.
    """
    g2 = abs(p.g2)
    if beta is None:
        beta = adiabatic_beta(alpha, p)
    beta_vac = 2.0 * abs(p.eps_b) / p.kappa_b
    ratios = {
        "exchange": g2 * abs(beta) / p.kappa_b,
        "memory_loss": p.kappa_a / p.kappa_b,
        "detuning": 0.0,
        "memory_kerr": abs(p.K_a) * abs(alpha) ** 2 / p.kappa_b,
        "cross_kerr": abs(p.chi) * abs(beta) ** 2 / p.kappa_b,
        "vacuum_crossing": abs(p.chi) * beta_vac**2 / p.kappa_b,
    }
    return AdiabaticityReport(ratios=ratios, margin=margin)
