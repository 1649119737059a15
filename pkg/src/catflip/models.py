"""Model builders for dissipatively stabilized cat qubits.

Three families share one ModelSpec container:

* two-mode: memory mode coupled to a lossy buffer by two-photon exchange,
  with a linear buffer drive and optional Kerr / cross-Kerr terms;
* single-mode: the adiabatic reduction with an engineered two-photon loss
  channel and a squeezing-like two-photon drive;
* effective-operator: the single-mode model dressed by the leading effect
  of a buffer cross-Kerr, with photon-number-dependent channel response.

Drive phase convention ("gauge"): with the drive amplitude entered as a
real non-negative rate, ``gauge="imag"`` (default) places the stable
lobes on the imaginary axis of the memory phase plane and
``gauge="real"`` places them on the real axis.  The two choices are a
90-degree rotation of the memory mode and leave every spectral quantity
unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import HilbertSpace, Operator, annihilation, identity, lift, number, tensor

GAUGES = ("imag", "real")


@dataclass(frozen=True)
class TwoModeParams:
    """Rates of the memory+buffer model, all angular frequencies in rad/us."""

    g2: complex
    eps_b: complex
    kappa_b: float
    kappa_a: float = 0.0
    kappa_phi: float = 0.0
    K_a: float = 0.0
    K_b: float = 0.0
    chi: float = 0.0
    n_th: float = 0.0

    def __post_init__(self) -> None:
        for name in ("kappa_b", "kappa_a", "kappa_phi", "n_th"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.kappa_b <= 0:
            raise ValueError("kappa_b must be positive")


@dataclass(frozen=True)
class SingleModeParams:
    """Rates of the reduced memory-only model."""

    eps_2: float
    kappa_2: float
    kappa_a: float = 0.0
    kappa_phi: float = 0.0
    K_a: float = 0.0
    n_th: float = 0.0

    def __post_init__(self) -> None:
        if self.eps_2 < 0:
            raise ValueError("eps_2 must be real and non-negative; pick the gauge instead")
        for name in ("kappa_2", "kappa_a", "kappa_phi", "n_th"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass
class ModelSpec:
    """A Hilbert space, a Hamiltonian, and labeled jump channels."""

    space: HilbertSpace
    hamiltonian: Operator
    jumps: list[tuple[Operator, str]]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.hamiltonian.is_hermitian(1e-12):
            raise ValueError("Hamiltonian is not Hermitian to 1e-12")
        for op, label in self.jumps:
            if op.space != self.space:
                raise ValueError(f"jump '{label}' acts on a different space")

    def jump_labels(self) -> list[str]:
        return [label for _, label in self.jumps]


@dataclass(frozen=True)
class AdiabaticMap:
    """Parameter conversion between the two-mode and single-mode models."""

    g2: complex
    kappa_b: float

    @property
    def kappa_2(self) -> float:
        return 4.0 * abs(self.g2) ** 2 / self.kappa_b

    def eps_b_from_eps2(self, eps_2: float) -> complex:
        return -eps_2 * self.kappa_b / (4j * self.g2)

    def eps2_from_eps_b(self, eps_b: complex) -> complex:
        return -4j * self.g2 * eps_b / self.kappa_b


def adiabatic_map(g2: complex, kappa_b: float) -> AdiabaticMap:
    if kappa_b <= 0:
        raise ValueError("kappa_b must be positive")
    return AdiabaticMap(g2, kappa_b)


def theta_split(theta: float, xi: float) -> tuple[float, float]:
    """Split a fixed nonlinear budget xi into (kappa_2, K_a).

    kappa_2 = xi cos(theta), K_a = xi sin(theta); theta = 0 is purely
    dissipative stabilization, theta = pi/2 purely Kerr.
    """
    if not 0.0 <= theta <= math.pi / 2:
        raise ValueError("theta must lie in [0, pi/2]")
    return xi * math.cos(theta), xi * math.sin(theta)


def _drive_phase(gauge: str) -> complex:
    # Coefficient multiplying a†^2 in the two-photon drive, for a real
    # non-negative drive rate.  "imag" puts the lobes at +-i sqrt(eps2/k2),
    # "real" at +-sqrt(eps2/k2).
    if gauge == "imag":
        return -1j
    if gauge == "real":
        return 1j
    raise ValueError(f"gauge must be one of {GAUGES}, got {gauge!r}")


def eps_b_for_gauge(eps_2: float, g2: complex, kappa_b: float, gauge: str) -> complex:
    """Real buffer drive amplitude that places the lobes per the gauge.

    Both gauges keep eps_b real (sign +1 for "imag", -1 for "real"), so
    the ideal model retains the anti-unitary reflection symmetry.
    """
    mag = eps_2 * kappa_b / (4.0 * abs(g2))
    if gauge == "imag":
        return mag
    if gauge == "real":
        return -mag
    raise ValueError(f"gauge must be one of {GAUGES}, got {gauge!r}")


def build_two_mode(p: TwoModeParams, cutoffs: tuple[int, int]) -> ModelSpec:
    """Memory+buffer model with two-photon exchange and a driven buffer.

    H = g2 (a†^2 b + a^2 b†) + (eps_b b† + eps_b* b)
        + (K_a/2) a†^2 a^2 + (K_b/2) b†^2 b^2 + chi n_a n_b

    Jumps: sqrt(kappa_b) b, sqrt(kappa_a (1+n_th)) a,
    sqrt(kappa_a n_th) a† (only for n_th > 0), sqrt(kappa_phi) n_a.
    """
    na_dim, nb_dim = int(cutoffs[0]), int(cutoffs[1])
    space = HilbertSpace((na_dim, nb_dim))
    a1 = annihilation(na_dim)
    b1 = annihilation(nb_dim)
    a = lift(a1, space, 0)
    b = lift(b1, space, 1)
    adag = a.dag()
    bdag = b.dag()

    h = p.g2 * (adag @ adag @ b) + np.conj(p.g2) * (a @ a @ bdag)
    h = h + p.eps_b * bdag + np.conj(p.eps_b) * b
    if p.K_a != 0.0:
        h = h + 0.5 * p.K_a * (adag @ adag @ a @ a)
    if p.K_b != 0.0:
        h = h + 0.5 * p.K_b * (bdag @ bdag @ b @ b)
    if p.chi != 0.0:
        h = h + p.chi * (lift(number(na_dim), space, 0) @ lift(number(nb_dim), space, 1))

    jumps: list[tuple[Operator, str]] = [(math.sqrt(p.kappa_b) * b, "buffer_loss")]
    if p.kappa_a > 0:
        jumps.append((math.sqrt(p.kappa_a * (1.0 + p.n_th)) * a, "memory_loss"))
        if p.n_th > 0:
            jumps.append((math.sqrt(p.kappa_a * p.n_th) * adag, "memory_gain"))
    if p.kappa_phi > 0:
        jumps.append((math.sqrt(p.kappa_phi) * lift(number(na_dim), space, 0), "memory_dephasing"))

    amap = adiabatic_map(p.g2, p.kappa_b)
    lobe_sq = -p.eps_b / p.g2 if p.g2 != 0 else 0.0
    lobe = complex(np.sqrt(complex(lobe_sq)))
    meta = {
        "family": "two_mode",
        "params": p,
        "lobe": lobe,
        "steering": "im_a" if abs(lobe.imag) >= abs(lobe.real) else "re_a",
        "kappa_stab": amap.kappa_2,
        "nbar": abs(lobe) ** 2,
        "stabilizing_labels": ("buffer_loss",),
    }
    return ModelSpec(space, h, jumps, meta)


def two_mode_params_for_nbar(
    nbar: float,
    g2: complex,
    kappa_b: float,
    gauge: str = "imag",
    **rates,
) -> TwoModeParams:
    """TwoModeParams whose lobes host `nbar` photons in the chosen gauge."""
    amap = adiabatic_map(g2, kappa_b)
    eps_2 = nbar * amap.kappa_2
    eps_b = eps_b_for_gauge(eps_2, g2, kappa_b, gauge)
    return TwoModeParams(g2=g2, eps_b=eps_b, kappa_b=kappa_b, **rates)


def build_single_mode(p: SingleModeParams, cutoff: int, gauge: str = "imag") -> ModelSpec:
    """Reduced memory-only model with engineered two-photon loss.

    H = (c a†^2 + c* a^2)/2 + (K_a/2) a†^2 a^2 with c = -i eps_2 in the
    "imag" gauge (+i eps_2 in the "real" gauge), so the stable lobes sit
    at +-i sqrt(eps_2/kappa_2) (resp. +-sqrt(eps_2/kappa_2)).

    Jumps: sqrt(kappa_2) a^2, sqrt(kappa_a (1+n_th)) a,
    sqrt(kappa_a n_th) a†, sqrt(kappa_phi) n.
    """
    d = int(cutoff)
    space = HilbertSpace((d,))
    a = annihilation(d)
    adag = a.dag()
    c = _drive_phase(gauge) * p.eps_2

    h = 0.5 * c * (adag @ adag) + 0.5 * np.conj(c) * (a @ a)
    if p.K_a != 0.0:
        h = h + 0.5 * p.K_a * (adag @ adag @ a @ a)

    jumps: list[tuple[Operator, str]] = []
    if p.kappa_2 > 0:
        jumps.append((math.sqrt(p.kappa_2) * (a @ a), "two_photon_loss"))
    if p.kappa_a > 0:
        jumps.append((math.sqrt(p.kappa_a * (1.0 + p.n_th)) * a, "memory_loss"))
        if p.n_th > 0:
            jumps.append((math.sqrt(p.kappa_a * p.n_th) * adag, "memory_gain"))
    if p.kappa_phi > 0:
        jumps.append((math.sqrt(p.kappa_phi) * number(d), "memory_dephasing"))

    nbar = p.eps_2 / p.kappa_2 if p.kappa_2 > 0 else 0.0
    lobe = (1j if gauge == "imag" else 1.0) * math.sqrt(nbar)
    meta = {
        "family": "single_mode",
        "params": p,
        "gauge": gauge,
        "lobe": complex(lobe),
        "steering": "im_a" if gauge == "imag" else "re_a",
        "kappa_stab": p.kappa_2,
        "nbar": nbar,
        "stabilizing_labels": ("two_photon_loss",),
    }
    return ModelSpec(space, h, jumps, meta)


def build_effective_operator_model(
    p: SingleModeParams,
    cutoff: int,
    g2: float,
    kappa_b: float,
    chi: float,
) -> ModelSpec:
    """Single-mode model dressed by a buffer cross-Kerr chi.

    Adiabatic elimination of a buffer with a photon-number-dependent
    response kappa_b + 2i chi n yields

        H_eff = -(g2^2/2) (a†^2 - alpha^2) S (a^2 - alpha^2),
        S = sum_n 8 chi n / (kappa_b^2 + 4 chi^2 n^2) |n><n|,
        L_eff = (2 i g2/sqrt(kappa_b)) sum_n kappa_b/(kappa_b + 2 i chi n) |n><n| (a^2 - alpha^2),

    with the lobe amplitude alpha^2 = eps_2/kappa_2 and kappa_2 = 4 g2^2/kappa_b.
    At chi -> 0 the channel reduces to i sqrt(kappa_2) (a^2 - alpha^2) and the
    Hamiltonian correction vanishes.  Memory-mode loss, gain, and dephasing
    channels are appended unchanged.
    """
    d = int(cutoff)
    space = HilbertSpace((d,))
    g2 = abs(g2)
    kappa_2 = 4.0 * g2 * g2 / kappa_b
    alpha_sq = p.eps_2 / kappa_2
    a = annihilation(d)
    v = (a @ a) - alpha_sq * identity(space)
    ns = np.arange(d, dtype=float)

    s_diag = 8.0 * chi * ns / (kappa_b**2 + 4.0 * chi**2 * ns**2)
    s_op = Operator(space, sp.diags(s_diag.astype(np.complex128)))
    h = (-0.5 * g2 * g2) * (v.dag() @ s_op @ v)

    b_diag = kappa_b / (kappa_b + 2j * chi * ns)
    b_op = Operator(space, sp.diags(b_diag.astype(np.complex128)))
    l_eff = (2j * g2 / math.sqrt(kappa_b)) * (b_op @ v)

    jumps: list[tuple[Operator, str]] = [(l_eff, "two_photon_loss")]
    if p.kappa_a > 0:
        jumps.append((math.sqrt(p.kappa_a * (1.0 + p.n_th)) * a, "memory_loss"))
        if p.n_th > 0:
            jumps.append((math.sqrt(p.kappa_a * p.n_th) * a.dag(), "memory_gain"))
    if p.kappa_phi > 0:
        jumps.append((math.sqrt(p.kappa_phi) * number(d), "memory_dephasing"))

    meta = {
        "family": "effective_operator",
        "params": p,
        "g2": g2,
        "kappa_b": kappa_b,
        "chi": chi,
        "lobe": complex(math.sqrt(alpha_sq)),
        "steering": "re_a",
        "kappa_stab": kappa_2,
        "nbar": alpha_sq,
        "stabilizing_labels": ("two_photon_loss",),
    }
    return ModelSpec(space, h, jumps, meta)
