"""Spectral coordinates for states and trajectories.

Expanding a density matrix in the Liouvillian's biorthonormal frame,
rho = sum_j c_j eta_j with c_j = Tr(sigma_j^dag rho), turns dynamics
into bookkeeping: each coefficient decays as exp(lambda_j t).  A
trajectory state that wanders off the steady manifold "activates"
spectral modes; counting activated modes along a trajectory gives a
chaos-flavored signature of the flip transit, and the pairing
p_j = c_j d_j with d_j = Tr(eta_j rho) satisfies sum_j p_j = Tr(rho^2)
for a complete decomposition, a quasi-probability bookkept by purity.

Eigenoperators themselves split into a difference of two density
matrices (the +/- parts of their Hermitian half), whose von Neumann
entropies measure how scrambled the mode is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import DensityMatrix
from .liouville import SpectralDecomposition


def _as_matrix(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.mat
    arr = np.asarray(rho, dtype=np.complex128)
    if arr.ndim == 1:
        return np.outer(arr, arr.conj())
    return arr


@dataclass
class SpectralCoefficients:
    """Expansion of one state in a decomposition's mode frame."""

    c: np.ndarray                   # c_j = Tr(sigma_j^dag rho)
    d: np.ndarray                   # d_j = Tr(eta_j rho)
    eigenvalues: np.ndarray         # lambda_j, aligned with c and d
    reconstruction_residual: float  # ||rho - sum c_j eta_j||_F / ||rho||_F


def spectral_coeffs(rho, decomp: SpectralDecomposition) -> SpectralCoefficients:
    if decomp.sigmas is None:
        raise ValueError("decomposition lacks left eigenoperators; recompute with left=True")
    mat = _as_matrix(rho)
    d = mat.shape[0]
    if decomp.space.dim != d:
        raise ValueError("state and decomposition dimensions differ")
    flat = mat.reshape(-1)
    sig = decomp.sigmas.reshape(decomp.count, -1)
    eta = decomp.etas.reshape(decomp.count, -1)
    c = sig.conj() @ flat
    dvals = eta @ mat.T.reshape(-1)  # Tr(eta rho) = sum_ij eta_ij rho_ji
    recon = c @ eta
    denom = np.linalg.norm(flat)
    residual = float(np.linalg.norm(flat - recon) / denom) if denom > 0 else 0.0
    return SpectralCoefficients(
        c=c,
        d=dvals,
        eigenvalues=decomp.eigenvalues.copy(),
        reconstruction_residual=residual,
    )


@dataclass
class ActivationReport:
    """Modes whose coefficients rise above the center-of-mass cutoff."""

    cutoff: float
    activated: np.ndarray        # indices j with |c_j| > cutoff
    eigenvalues: np.ndarray      # lambda_j of the activated modes

    @property
    def count(self) -> int:
        return int(self.activated.size)


def activation_cutoff(coeffs: SpectralCoefficients, k: int = 2) -> ActivationReport:
    """c_min = (sum |c|^2 / sum |c|) * 10^-k; activated = {j : |c_j| > c_min}.

    The prefactor is the coefficient center of mass, so the cutoff
    tracks the expansion's overall scale rather than an absolute floor.
    """
    mags = np.abs(coeffs.c)
    total = mags.sum()
    if total == 0:
        raise ValueError("all spectral coefficients vanish")
    cutoff = float((mags**2).sum() / total * 10.0 ** (-k))
    activated = np.flatnonzero(mags > cutoff)
    return ActivationReport(
        cutoff=cutoff,
        activated=activated,
        eigenvalues=coeffs.eigenvalues[activated],
    )


def quasi_probabilities(coeffs: SpectralCoefficients) -> np.ndarray:
    """p_j = c_j d_j; sums to Tr(rho^2) over a complete decomposition."""
    return coeffs.c * coeffs.d


@dataclass
class EigenstateSplit:
    """An eigenoperator's Hermitian part as a difference of density matrices.

    (eta + eta^dag)/2 = trace_plus * rho_plus - trace_minus * rho_minus
    with rho_+- unit-trace PSD.  When the Hermitian part vanishes the
    split runs on i(eta^dag - eta)/2 instead and is flagged.
    """

    rho_plus: DensityMatrix | None
    rho_minus: DensityMatrix | None
    trace_plus: float            # raw trace of the positive part
    trace_minus: float           # raw trace of the negated negative part
    used_antihermitian: bool


def eigenstate_split(eta, space=None, tol: float = 1e-8) -> EigenstateSplit:
    """Split (eta + eta^dag)/2 into positive and negative spectral parts."""
    from .fock import HilbertSpace, Operator

    if isinstance(eta, Operator):
        space = eta.space
        eta = eta.mat.toarray()
    eta = np.asarray(eta, dtype=np.complex128)
    if space is None:
        space = HilbertSpace((eta.shape[0],))
    herm = 0.5 * (eta + eta.conj().T)
    used_anti = False
    scale = np.linalg.norm(eta)
    if np.linalg.norm(herm) <= tol * max(scale, 1e-300):
        herm = 0.5j * (eta.conj().T - eta)
        used_anti = True
    vals, vecs = np.linalg.eigh(herm)
    pos = vals > 0
    neg = vals < 0
    trace_plus = float(vals[pos].sum())
    trace_minus = float(-vals[neg].sum())
    rho_plus = None
    rho_minus = None
    if trace_plus > 0:
        mat = (vecs[:, pos] * vals[pos]) @ vecs[:, pos].conj().T / trace_plus
        rho_plus = DensityMatrix(space, mat)
    if trace_minus > 0:
        mat = (vecs[:, neg] * (-vals[neg])) @ vecs[:, neg].conj().T / trace_minus
        rho_minus = DensityMatrix(space, mat)
    return EigenstateSplit(
        rho_plus=rho_plus,
        rho_minus=rho_minus,
        trace_plus=trace_plus,
        trace_minus=trace_minus,
        used_antihermitian=used_anti,
    )


def eigenstate_entropy(rho: DensityMatrix, tol: float = 1e-10) -> float:
    """Von Neumann entropy -Tr(rho ln rho) with 0 ln 0 = 0."""
    mat = _as_matrix(rho)
    vals = np.linalg.eigvalsh(0.5 * (mat + mat.conj().T))
    if vals.min() < -tol:
        raise ValueError(f"negative eigenvalue {vals.min():.3e} beyond tolerance")
    vals = np.clip(vals.real, 0.0, None)
    total = vals.sum()
    if total <= 0:
        raise ValueError("state has zero trace")
    p = vals / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


@dataclass
class ActivationTimeline:
    times: np.ndarray
    coefficients: np.ndarray     # (n_times, n_modes) c_j values
    d_coefficients: np.ndarray   # (n_times, n_modes) d_j values
    reports: list                # per-snapshot ActivationReport
    labels: list[str]            # flip-phase label per snapshot ('' outside)

    @property
    def activated_counts(self) -> np.ndarray:
        return np.array([r.count for r in self.reports], dtype=np.int64)


def activation_timeline(
    record,
    decomp: SpectralDecomposition,
    event=None,
    k: int = 2,
) -> ActivationTimeline:
    """Spectral activation along a trajectory's snapshots.

    Needs a record run with snapshot_every > 0.  With a BitFlipEvent the
    snapshots are tagged with segment_phases labels.
    """
    if record.snapshots is None:
        raise ValueError("record has no snapshots; set snapshot_every in the config")
    n_t = record.snapshots.shape[0]
    coeffs_c = np.zeros((n_t, decomp.count), dtype=np.complex128)
    coeffs_d = np.zeros((n_t, decomp.count), dtype=np.complex128)
    reports = []
    for i in range(n_t):
        psi = record.snapshots[i]
        sc = spectral_coeffs(np.outer(psi, psi.conj()), decomp)
        coeffs_c[i] = sc.c
        coeffs_d[i] = sc.d
        reports.append(activation_cutoff(sc, k))
    labels = [""] * n_t
    if event is not None:
        from .trajectories import segment_phases

        segments = segment_phases(record, event)
        for i, t in enumerate(record.snapshot_times):
            for seg in segments:
                if seg.t_start <= t <= seg.t_end:
                    labels[i] = seg.label
                    break
    return ActivationTimeline(
        times=record.snapshot_times.copy(),
        coefficients=coeffs_c,
        d_coefficients=coeffs_d,
        reports=reports,
        labels=labels,
    )


def log_histogram(values, bins_per_decade: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of |values| on logarithmic bins covering their span."""
    mags = np.abs(np.asarray(values, dtype=float))
    mags = mags[mags > 0]
    if mags.size == 0:
        raise ValueError("no nonzero values to bin")
    lo = math.floor(math.log10(mags.min()))
    hi = math.ceil(math.log10(mags.max()))
    hi = max(hi, lo + 1)
    edges = np.logspace(lo, hi, (hi - lo) * bins_per_decade + 1)
    counts, _ = np.histogram(mags, bins=edges)
    return edges, counts
