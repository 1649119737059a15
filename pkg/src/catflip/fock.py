"""Truncated Fock-space primitives for one or more bosonic modes.

Conventions used throughout the package:

* Multimode tensor products are memory-major: the first mode is the
  slowest index, so a flat basis index for dims (Na, Nb) is
  ``na * Nb + nb``.
* Operators are stored sparse (CSR, complex128) and densified only where
  an eigensolver needs the full matrix.
* Truncated ladder operators keep the exact matrix elements
  ``<n-1|a|n> = sqrt(n)``; the truncation shows up only in the last
  diagonal entry of the commutator ``[a, a†]``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln


class TruncationWarning(UserWarning):
    """A state or grid does not comfortably fit the chosen cutoff."""


@dataclass(frozen=True)
class HilbertSpace:
    """Composite Hilbert space of truncated bosonic modes."""

    mode_dims: tuple[int, ...]

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.mode_dims)
        if not dims or any(d < 1 for d in dims):
            raise ValueError(f"mode_dims must be positive, got {self.mode_dims}")
        object.__setattr__(self, "mode_dims", dims)

    @property
    def dim(self) -> int:
        return int(np.prod(self.mode_dims))

    @property
    def nmodes(self) -> int:
        return len(self.mode_dims)


class Operator:
    """Linear operator on a HilbertSpace, stored as sparse CSR.

    Treat instances as immutable: arithmetic returns new objects and the
    underlying matrix is never modified in place.
    """

    __slots__ = ("space", "mat")

    def __init__(self, space: HilbertSpace, mat) -> None:
        m = sp.csr_matrix(mat, dtype=np.complex128)
        if m.shape != (space.dim, space.dim):
            raise ValueError(f"matrix shape {m.shape} does not match dim {space.dim}")
        self.space = space
        self.mat = m

    def to_dense(self) -> np.ndarray:
        return self.mat.toarray()

    def dag(self) -> "Operator":
        return Operator(self.space, self.mat.conjugate().T.tocsr())

    def _check_space(self, other: "Operator") -> None:
        if self.space != other.space:
            raise ValueError("operators act on different spaces")

    def __matmul__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.mat @ other.mat)

    def __add__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.mat + other.mat)

    def __sub__(self, other: "Operator") -> "Operator":
        self._check_space(other)
        return Operator(self.space, self.mat - other.mat)

    def __mul__(self, scalar: complex) -> "Operator":
        return Operator(self.space, self.mat * complex(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(self.space, -self.mat)

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.mat @ vec

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        diff = self.mat - self.mat.conjugate().T
        if diff.nnz == 0:
            return True
        return float(np.max(np.abs(diff.data))) <= tol

    def frobenius_norm(self) -> float:
        return float(sp.linalg.norm(self.mat))

    def __repr__(self) -> str:
        return f"Operator(dims={self.space.mode_dims}, nnz={self.mat.nnz})"


@dataclass
class Ket:
    """Pure state on a HilbertSpace."""

    space: HilbertSpace
    amplitudes: np.ndarray
    truncation_warning: bool = False

    def __post_init__(self) -> None:
        amp = np.asarray(self.amplitudes, dtype=np.complex128).ravel()
        if amp.size != self.space.dim:
            raise ValueError(f"amplitude length {amp.size} does not match dim {self.space.dim}")
        self.amplitudes = amp

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "Ket":
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        return Ket(self.space, self.amplitudes / n, self.truncation_warning)

    def check_normalized(self, tol: float = 1e-10) -> None:
        if abs(self.norm() - 1.0) > tol:
            raise ValueError(f"state norm {self.norm()} deviates from 1 beyond {tol}")

    def expect(self, op: Operator) -> complex:
        if op.space != self.space:
            raise ValueError("operator acts on a different space")
        return complex(np.vdot(self.amplitudes, op.mat @ self.amplitudes))

    def dm(self) -> "DensityMatrix":
        v = self.amplitudes
        return DensityMatrix(self.space, np.outer(v, v.conj()))


@dataclass
class DensityMatrix:
    """Mixed state on a HilbertSpace, stored dense."""

    space: HilbertSpace
    mat: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.mat, dtype=np.complex128)
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"matrix shape {m.shape} does not match dim {self.space.dim}")
        self.mat = m

    def trace(self) -> complex:
        return complex(np.trace(self.mat))

    def purity(self) -> float:
        return float(np.real(np.sum(self.mat * self.mat.T)))

    def expect(self, op: Operator) -> complex:
        if op.space != self.space:
            raise ValueError("operator acts on a different space")
        return complex(np.sum(op.mat.multiply(self.mat.T).data)) if sp.issparse(op.mat) else complex(
            np.trace(self.mat @ op.to_dense())
        )

    def validate(
        self,
        herm_tol: float = 1e-12,
        trace_tol: float = 1e-10,
        psd_tol: float = -1e-10,
    ) -> None:
        """Raise if the state is not Hermitian, unit-trace, and PSD within tolerance."""
        herm_err = float(np.max(np.abs(self.mat - self.mat.conj().T)))
        if herm_err > herm_tol:
            raise ValueError(f"Hermiticity violated by {herm_err}")
        tr_err = abs(self.trace() - 1.0)
        if tr_err > trace_tol:
            raise ValueError(f"trace deviates from 1 by {tr_err}")
        evals = np.linalg.eigvalsh(0.5 * (self.mat + self.mat.conj().T))
        if float(evals.min()) < psd_tol:
            raise ValueError(f"negative eigenvalue {evals.min()} below {psd_tol}")


def fock_cutoff(alpha: complex) -> int:
    """Truncation rule for a mode hosting amplitudes up to |alpha|.

    Keeps the coherent-state tail below ~1e-10 with headroom for dynamical
    excursions: cutoff = ceil(|alpha|^2 + 6 |alpha| + 10).
    """
    a = abs(alpha)
    return int(math.ceil(a * a + 6.0 * a + 10.0))


def annihilation(cutoff: int) -> Operator:
    """Single-mode annihilation operator on a truncated Fock space."""
    if cutoff < 2:
        raise ValueError(f"cutoff must be at least 2, got {cutoff}")
    n = np.arange(1, cutoff)
    mat = sp.diags(np.sqrt(n).astype(np.complex128), offsets=1, shape=(cutoff, cutoff))
    return Operator(HilbertSpace((cutoff,)), mat)


def number(cutoff: int) -> Operator:
    if cutoff < 1:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    mat = sp.diags(np.arange(cutoff, dtype=np.complex128))
    return Operator(HilbertSpace((cutoff,)), mat)


def identity(space: HilbertSpace) -> Operator:
    return Operator(space, sp.identity(space.dim, dtype=np.complex128, format="csr"))


def tensor(*ops: Operator) -> Operator:
    """Kronecker product of single- or multi-mode operators, memory-major.

    The first factor owns the slowest index of the flat basis.
    """
    if not ops:
        raise ValueError("tensor() needs at least one operator")
    mat = ops[0].mat
    dims: tuple[int, ...] = ops[0].space.mode_dims
    for op in ops[1:]:
        mat = sp.kron(mat, op.mat, format="csr")
        dims = dims + op.space.mode_dims
    return Operator(HilbertSpace(dims), mat)


def lift(op: Operator, space: HilbertSpace, mode: int) -> Operator:
    """Embed a single-mode operator into a composite space at position `mode`."""
    if op.space.nmodes != 1:
        raise ValueError("lift() expects a single-mode operator")
    if op.space.mode_dims[0] != space.mode_dims[mode]:
        raise ValueError("mode dimension mismatch")
    factors = []
    for k, d in enumerate(space.mode_dims):
        if k == mode:
            factors.append(op)
        else:
            factors.append(identity(HilbertSpace((d,))))
    return tensor(*factors)


def fock_state(space: HilbertSpace, occupations) -> Ket:
    occ = tuple(int(n) for n in np.atleast_1d(occupations))
    if len(occ) != space.nmodes:
        raise ValueError("one occupation number per mode required")
    idx = 0
    for n, d in zip(occ, space.mode_dims):
        if not 0 <= n < d:
            raise ValueError(f"occupation {n} outside cutoff {d}")
        idx = idx * d + n
    amp = np.zeros(space.dim, dtype=np.complex128)
    amp[idx] = 1.0
    return Ket(space, amp)


def coherent_state(alpha: complex, cutoff: int) -> Ket:
    """Normalized coherent state with amplitudes alpha^n / sqrt(n!).

    Sets ``truncation_warning`` when |alpha|^2 sits within 3 sqrt(|alpha|^2)
    of the cutoff, i.e. when the photon-number distribution is not safely
    contained.
    """
    if cutoff < 2:
        raise ValueError(f"cutoff must be at least 2, got {cutoff}")
    amps = np.empty(cutoff, dtype=np.complex128)
    amps[0] = 1.0
    for n in range(1, cutoff):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    amps /= np.linalg.norm(amps)
    nbar = abs(alpha) ** 2
    warn = cutoff < nbar + 3.0 * math.sqrt(max(nbar, 1e-300))
    if warn:
        warnings.warn(
            f"coherent state with |alpha|^2 = {nbar:.3g} is close to cutoff {cutoff}",
            TruncationWarning,
            stacklevel=2,
        )
    return Ket(HilbertSpace((cutoff,)), amps, truncation_warning=bool(warn))


def coherent_superposition(alphas, weights, cutoff: int) -> Ket:
    """Normalized superposition of coherent states (e.g. cat states)."""
    amp = np.zeros(cutoff, dtype=np.complex128)
    warn = False
    for alpha, w in zip(alphas, weights):
        ket = coherent_state(alpha, cutoff)
        amp = amp + complex(w) * ket.amplitudes
        warn = warn or ket.truncation_warning
    out = Ket(HilbertSpace((cutoff,)), amp, truncation_warning=warn)
    return out.normalized()


def even_cat(alpha: complex, cutoff: int) -> Ket:
    return coherent_superposition([alpha, -alpha], [1.0, 1.0], cutoff)


def odd_cat(alpha: complex, cutoff: int) -> Ket:
    return coherent_superposition([alpha, -alpha], [1.0, -1.0], cutoff)


def parity(space: HilbertSpace, mode: int) -> Operator:
    """Photon-number parity (-1)^n of one mode, embedded in the composite space."""
    d = space.mode_dims[mode]
    diag = ((-1.0) ** np.arange(d)).astype(np.complex128)
    single = Operator(HilbertSpace((d,)), sp.diags(diag))
    return lift(single, space, mode)


def displacement(alpha: complex, cutoff: int) -> Operator:
    """Displacement operator exp(alpha a† - alpha* a) on a truncated mode."""
    a = annihilation(cutoff).to_dense()
    gen = alpha * a.conj().T - np.conj(alpha) * a
    from scipy.linalg import expm

    return Operator(HilbertSpace((cutoff,)), expm(gen))


@dataclass
class WignerResult:
    """Wigner function samples on a Cartesian grid in the coherent plane."""

    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray
    normalization_warning: bool = False

    def integral(self) -> float:
        dx = self.xs[1] - self.xs[0] if len(self.xs) > 1 else 1.0
        dy = self.ys[1] - self.ys[0] if len(self.ys) > 1 else 1.0
        return float(np.sum(self.values) * dx * dy)


def _as_single_mode_dm(state) -> np.ndarray:
    if isinstance(state, Ket):
        state = state.dm()
    if not isinstance(state, DensityMatrix):
        raise TypeError("wigner() expects a Ket or DensityMatrix")
    if state.space.nmodes != 1:
        raise ValueError("wigner() expects a single-mode state; partial_trace first")
    return state.mat


def wigner(state, xs=None, ys=None, points: int = 101) -> WignerResult:
    """Wigner function W(alpha) = (2/pi) <D(alpha) P D†(alpha)> on a grid.

    alpha = x + i y runs over a Cartesian grid; with this convention the
    vacuum gives W(0) = 2/pi and the function integrates to 1 over the
    plane.  The grid is auto-sized from <n> when xs/ys are omitted, and a
    normalization warning is raised when the sampled integral misses 1 by
    more than 1e-3.
    """
    rho = _as_single_mode_dm(state)
    d = rho.shape[0]
    if xs is None or ys is None:
        nbar = float(np.real(np.sum(np.arange(d) * np.real(np.diag(rho)))))
        extent = math.sqrt(max(nbar, 0.0)) + 3.5
        xs = np.linspace(-extent, extent, points) if xs is None else np.asarray(xs, float)
        ys = np.linspace(-extent, extent, points) if ys is None else np.asarray(ys, float)
    else:
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)

    # Displaced-parity evaluation through D(a) P D†(a) = D(2a) P and the
    # closed-form displacement matrix elements
    #   <n+k|D(b)|n> = sqrt(n!/(n+k)!) b^k e^{-|b|^2/2} L_n^{(k)}(|b|^2),
    # so every element is the exact infinite-dimensional value and the only
    # truncation is the state's own finite support.  Exponentiating the
    # truncated generator instead leaves O(1) noise wherever the grid asks
    # for displacements the cutoff cannot represent, which is always true
    # at the auto-grid corners.
    xg, yg = np.meshgrid(xs, ys)
    beta = 2.0 * (xg + 1j * yg).ravel()
    babs2 = np.abs(beta) ** 2
    small = np.abs(beta) < 1e-300
    logb = np.log(np.where(small, 1.0, np.abs(beta)))
    phase = np.where(small, 1.0 + 0j, beta / np.where(small, 1.0, np.abs(beta)))

    lg = gammaln(np.arange(d + 1) + 1.0)
    acc = np.zeros(beta.shape[0])
    for k in range(d):
        ns = np.arange(d - k)
        # coefficients 2 Re(rho_{n,n+k} b^k) with sqrt(n!/(n+k)!) folded in
        coefs = np.ascontiguousarray(np.diagonal(rho, offset=k)) * np.exp(
            0.5 * (lg[ns] - lg[ns + k])
        )
        coefs[1::2] *= -1.0            # the (-1)^n parity weight
        pref = np.exp(k * logb - 0.5 * babs2) * phase**k
        if k == 0:
            pref = np.real(pref)
            coefs = np.real(coefs)
        else:
            pref = np.where(small, 0.0, pref)   # b^k vanishes at the origin
        # forward Laguerre recurrence in n at fixed superscript k
        l_prev = np.zeros_like(babs2)
        l_cur = np.ones_like(babs2)
        total = coefs[0] * l_cur
        for n in range(1, d - k):
            l_next = ((2 * n - 1 + k - babs2) * l_cur - (n - 1 + k) * l_prev) / n
            l_prev, l_cur = l_cur, l_next
            total = total + coefs[n] * l_cur
        if k == 0:
            acc += pref * total
        else:
            acc += 2.0 * np.real(pref * total)
    vals = (2.0 / math.pi) * acc.reshape(len(ys), len(xs))

    res = WignerResult(xs, ys, vals)
    if abs(res.integral() - 1.0) > 1e-3:
        res.normalization_warning = True
        warnings.warn(
            f"Wigner grid integral {res.integral():.6f} deviates from 1; grid too small",
            TruncationWarning,
            stacklevel=2,
        )
    return res


def partial_trace(state, keep) -> DensityMatrix:
    """Trace out all modes except those in `keep` (int or sequence of ints)."""
    if isinstance(state, Ket):
        state = state.dm()
    keep_t = (keep,) if isinstance(keep, (int, np.integer)) else tuple(keep)
    dims = state.space.mode_dims
    n = len(dims)
    if any(not 0 <= k < n for k in keep_t) or len(set(keep_t)) != len(keep_t):
        raise ValueError(f"invalid mode selection {keep_t} for {n} modes")
    keep_sorted = tuple(sorted(keep_t))
    rho = state.mat.reshape(dims + dims)
    # contract traced modes pairwise
    traced = [k for k in range(n) if k not in keep_sorted]
    for k in sorted(traced, reverse=True):
        rho = np.trace(rho, axis1=k, axis2=k + (rho.ndim // 2))
    new_dims = tuple(dims[k] for k in keep_sorted)
    d_new = int(np.prod(new_dims))
    return DensityMatrix(HilbertSpace(new_dims), rho.reshape(d_new, d_new))
