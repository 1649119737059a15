"""Liouvillian construction and spectral analysis.

The Lindblad generator

    d rho/dt = -i [H, rho] + sum_mu ( L_mu rho L_mu†
                - 1/2 {L_mu† L_mu, rho} )

is vectorized column-major (vec(A X B) = (B^T kron A) vec X) into a
sparse d^2 x d^2 matrix.  Spectral decompositions keep right
eigenoperators eta_j and left eigenoperators sigma_j biorthonormalized
as Tr(sigma_j† eta_k) = delta_jk.  The zero mode is pinned to the
physical convention sigma_0 = identity, eta_0 = steady state with unit
trace; every other eta_j has unit Frobenius norm.

The asymptotic bit-flip rate is the negated real part of the slowest
nonzero eigenvalue.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fock import DensityMatrix, HilbertSpace, Operator, annihilation
from .models import ModelSpec

DENSE_DIM_CAP = 4096          # largest d^2 handled by full dense diagonalization
ZERO_TOL_FACTOR = 1e-12       # |Re lambda| < factor * spectral radius counts as zero
ZERO_MODE_TOL = 1e-10         # lambda_0 must vanish within this * spectral radius


class MemoryBudgetError(MemoryError):
    """Building the Liouvillian would exceed the configured memory budget."""


class SpectralCacheError(RuntimeError):
    """A cache file is missing, corrupt, or keyed to different inputs."""


def vec(mat: np.ndarray) -> np.ndarray:
    return np.asarray(mat).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int) -> np.ndarray:
    return np.asarray(v).reshape((d, d), order="F")


@dataclass
class SuperOperator:
    """Vectorized Lindblad generator on HilbertSpace states."""

    space: HilbertSpace
    mat: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.space.dim

    def apply_to_matrix(self, rho: np.ndarray) -> np.ndarray:
        return unvec(self.mat @ vec(rho), self.dim)

    def identity_left_null_residual(self) -> float:
        """max |vec(I)† L|, zero for any trace-preserving generator."""
        d = self.dim
        ident = vec(np.eye(d, dtype=np.complex128))
        return float(np.max(np.abs(self.mat.conjugate().T @ ident)))

    def norm_scale(self) -> float:
        """Upper bound on the spectral radius (max absolute row sum)."""
        m = abs(self.mat)
        return float(m.sum(axis=1).max()) if self.mat.nnz else 0.0


def build_liouvillian(m: ModelSpec, memory_budget_mb: float = 2048.0) -> SuperOperator:
    """Sparse Liouvillian of a ModelSpec, refusing oversized builds.

    The projected sparse storage is estimated up front; a build above
    `memory_budget_mb` raises MemoryBudgetError with a size report
    instead of thrashing.
    """
    d = m.space.dim
    h = m.hamiltonian.mat
    est_nnz = 2 * d * h.nnz
    for op, _ in m.jumps:
        est_nnz += op.mat.nnz**2 + 2 * d * min(d, op.mat.nnz)
    est_mb = est_nnz * 32 / 1e6
    if est_mb > memory_budget_mb:
        raise MemoryBudgetError(
            f"Liouvillian for d={d} (d^2={d*d}) needs about {est_mb:.0f} MB sparse, "
            f"budget is {memory_budget_mb:.0f} MB"
        )

    ident = sp.identity(d, dtype=np.complex128, format="csr")
    liouv = -1j * (sp.kron(ident, h, format="csr") - sp.kron(h.T, ident, format="csr"))
    for op, _ in m.jumps:
        l_mat = op.mat
        ldl = (l_mat.conjugate().T @ l_mat).tocsr()
        liouv = liouv + sp.kron(l_mat.conjugate(), l_mat, format="csr")
        liouv = liouv - 0.5 * sp.kron(ident, ldl, format="csr")
        liouv = liouv - 0.5 * sp.kron(ldl.T, ident, format="csr")
    return SuperOperator(m.space, liouv.tocsr())


def apply_lindblad(m: ModelSpec, rho: np.ndarray) -> np.ndarray:
    """Direct evaluation of the Lindblad right-hand side on a matrix.

    Independent of the vectorized build; used to cross-check it.
    """
    h = m.hamiltonian.mat
    out = np.asarray(-1j * (h @ rho - rho @ h))
    for op, _ in m.jumps:
        l_mat = op.mat
        ldl = (l_mat.conjugate().T @ l_mat).toarray()
        out = out + l_mat @ (rho @ l_mat.conjugate().T.toarray())
        out = out - 0.5 * (ldl @ rho + rho @ ldl)
    return np.asarray(out)


@dataclass
class SteadyStateResult:
    rho: DensityMatrix
    residual: float
    degenerate: bool = False
    basis: list[np.ndarray] | None = None


def _shift_invert_eigs(liouv: sp.csr_matrix, k: int, scale: float, left: bool = False):
    """Eigenpairs of the Liouvillian nearest zero via shared-LU shift-invert.

    All eigenvalues satisfy Re(lambda) <= 0, so a small positive real
    shift keeps the factorized matrix well away from the spectrum.
    """
    n = liouv.shape[0]
    sigma = 1e-8 * max(scale, 1.0)
    lu = spla.splu((liouv - sigma * sp.identity(n, dtype=np.complex128, format="csr")).tocsc())
    op_inv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=np.complex128)
    vals, vecs = spla.eigs(liouv, k=k, sigma=sigma, OPinv=op_inv, which="LM")
    if not left:
        return vals, vecs, lu
    op_inv_h = spla.LinearOperator(
        (n, n), matvec=lambda b: lu.solve(b, trans="H"), dtype=np.complex128
    )
    lvals, lvecs = spla.eigs(
        liouv.conjugate().T.tocsr(), k=k, sigma=np.conj(sigma), OPinv=op_inv_h, which="LM"
    )
    return vals, vecs, (lvals, lvecs)


def steady_state(
    liouv: SuperOperator,
    method: str = "auto",
    probe_k: int = 6,
) -> SteadyStateResult:
    """Null state(s) of the Liouvillian.

    Returns a trace-one Hermitian steady state with its residual
    ||L rho||_F.  When the nullspace is degenerate (strong symmetry,
    e.g. no single-photon loss or dephasing), all null vectors are
    returned as a basis and the result is flagged.
    """
    d = liouv.dim
    n = d * d
    scale = liouv.norm_scale()
    tol_zero = ZERO_TOL_FACTOR * max(scale, 1.0)

    if method == "auto":
        method = "dense" if n <= 1024 else "iterative"

    if method == "dense":
        ws, vs = sla.eig(liouv.mat.toarray())
        order = np.argsort(np.abs(ws))
        zero_idx = [int(i) for i in order if abs(ws[i].real) < tol_zero and abs(ws[i]) < 1e-6 * max(scale, 1.0)]
        if not zero_idx:
            zero_idx = [int(order[0])]
        null_vecs = [vs[:, i] for i in zero_idx]
    else:
        k = min(probe_k, n - 2)
        vals, vecs, _ = _shift_invert_eigs(liouv.mat, k, scale)
        order = np.argsort(np.abs(vals))
        zero_idx = [int(i) for i in order if abs(vals[i].real) < tol_zero]
        if not zero_idx:
            zero_idx = [int(order[0])]
        null_vecs = [vecs[:, i] for i in zero_idx]

    degenerate = len(null_vecs) > 1
    # pick the null vector with the largest trace as the physical state
    traces = [np.trace(unvec(v, d)) for v in null_vecs]
    best = int(np.argmax(np.abs(traces)))
    rho = unvec(null_vecs[best], d)
    rho = 0.5 * (rho + rho.conj().T)
    rho = rho / np.trace(rho).real
    residual = float(np.linalg.norm(liouv.mat @ vec(rho)))
    basis = [unvec(v, d) for v in null_vecs] if degenerate else None
    return SteadyStateResult(DensityMatrix(liouv.space, rho), residual, degenerate, basis)


@dataclass
class SpectralDecomposition:
    """Sorted eigensystem of a Liouvillian with biorthonormal mode pairs.

    eigenvalues are sorted by descending real part, then ascending |Im|,
    then ascending Im.  etas[j] are right eigenoperators, sigmas[j] left
    ones with Tr(sigma_j† eta_k) = delta_jk.  Index `zero_index` holds the
    zero mode (sigma = identity, eta = trace-one steady state); all other
    etas carry unit Frobenius norm.
    """

    space: HilbertSpace
    eigenvalues: np.ndarray
    etas: np.ndarray
    sigmas: np.ndarray | None
    zero_index: int
    radius: float
    complete: bool
    flagged: list[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.eigenvalues)

    def steady_density(self) -> DensityMatrix:
        return DensityMatrix(self.space, self.etas[self.zero_index].copy())

    def biorthonormality_residual(self) -> float:
        if self.sigmas is None:
            raise ValueError("decomposition has no left eigenoperators")
        s = self.sigmas.reshape(self.count, -1)
        e = self.etas.reshape(self.count, -1)
        gram = s.conj() @ e.T
        return float(np.max(np.abs(gram - np.eye(self.count))))

    # -- binary cache ------------------------------------------------

    _MAGIC = b"CFSPEC01"
    _VERSION = 2

    def save(self, path, key: bytes = b"") -> None:
        """Write a little-endian binary snapshot keyed to `key`."""
        etas = np.ascontiguousarray(self.etas, dtype="<c16")
        sigmas = (
            np.ascontiguousarray(self.sigmas, dtype="<c16") if self.sigmas is not None else None
        )
        vals = np.ascontiguousarray(self.eigenvalues, dtype="<c16")
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(
                struct.pack(
                    "<IIIIqdI?",
                    self._VERSION,
                    self.space.dim,
                    self.count,
                    len(key),
                    self.zero_index,
                    self.radius,
                    1 if sigmas is not None else 0,
                    self.complete,
                )
            )
            fh.write(struct.pack("<I", len(self.space.mode_dims)))
            fh.write(struct.pack(f"<{len(self.space.mode_dims)}I", *self.space.mode_dims))
            fh.write(key)
            fh.write(vals.tobytes())
            fh.write(etas.tobytes())
            if sigmas is not None:
                fh.write(sigmas.tobytes())
            fh.write(struct.pack(f"<{self.count}I", *(1 if j in self.flagged else 0 for j in range(self.count))))

    @classmethod
    def load(cls, path, key: bytes = b"") -> "SpectralDecomposition":
        # every parse failure, including a short read from a truncated
        # file, must come out as SpectralCacheError so callers can fall
        # back to recomputing
        try:
            with open(path, "rb") as fh:
                if fh.read(8) != cls._MAGIC:
                    raise SpectralCacheError(f"{path}: bad magic")
                version, d, count, keylen, zero_index, radius, has_sigma, complete = struct.unpack(
                    "<IIIIqdI?", fh.read(struct.calcsize("<IIIIqdI?"))
                )
                if version != cls._VERSION:
                    raise SpectralCacheError(f"{path}: version {version} != {cls._VERSION}")
                (nmodes,) = struct.unpack("<I", fh.read(4))
                dims = struct.unpack(f"<{nmodes}I", fh.read(4 * nmodes))
                stored_key = fh.read(keylen)
                if stored_key != key:
                    raise SpectralCacheError(f"{path}: cache key mismatch")
                vals = np.frombuffer(fh.read(16 * count), dtype="<c16").astype(np.complex128)
                etas = np.frombuffer(fh.read(16 * count * d * d), dtype="<c16").astype(
                    np.complex128
                ).reshape(count, d, d)
                sigmas = None
                if has_sigma:
                    sigmas = np.frombuffer(fh.read(16 * count * d * d), dtype="<c16").astype(
                        np.complex128
                    ).reshape(count, d, d)
                raw_flags = struct.unpack(f"<{count}I", fh.read(4 * count))
        except SpectralCacheError:
            raise
        except (OSError, ValueError, struct.error) as exc:
            raise SpectralCacheError(f"{path}: corrupt cache ({exc})") from exc
        dec = cls(
            HilbertSpace(tuple(int(x) for x in dims)),
            vals,
            etas,
            sigmas,
            int(zero_index),
            float(radius),
            bool(complete),
            [j for j, f in enumerate(raw_flags) if f],
        )
        if dec.space.dim != d:
            raise SpectralCacheError(f"{path}: inconsistent dimensions")
        return dec


def _sort_modes(vals: np.ndarray) -> np.ndarray:
    return np.lexsort((vals.imag, np.abs(vals.imag), -vals.real))


def spectrum(
    liouv: SuperOperator,
    count: int | None = None,
    method: str = "auto",
    left: bool = True,
) -> SpectralDecomposition:
    """Spectral decomposition sorted slowest-first.

    Dense full diagonalization up to d^2 = DENSE_DIM_CAP, shift-invert
    Arnoldi around zero beyond that (returning the `count` slowest
    modes).  Near-defective pairs whose left/right overlap is tiny are
    biorthonormalized anyway but flagged with a condition warning.
    """
    d = liouv.dim
    n = d * d
    scale = max(liouv.norm_scale(), 1.0)

    if method == "auto":
        method = "dense" if n <= DENSE_DIM_CAP else "iterative"

    if method == "dense":
        dense = liouv.mat.toarray()
        vals, vl, vr = sla.eig(dense, left=True, right=True)
        complete = True
        if count is not None and count < len(vals):
            order = _sort_modes(vals)[:count]
            complete = False
        else:
            order = _sort_modes(vals)
        vals = vals[order]
        vr = vr[:, order]
        vl = vl[:, order]
        radius = float(np.max(np.abs(vals))) if complete else scale
    else:
        k = count if count is not None else 8
        k = min(k, n - 2)
        res = _shift_invert_eigs(liouv.mat, k, scale, left=left)
        vals, vr = res[0], res[1]
        if left:
            lvals, lvecs = res[2]
            # match left eigenvectors to right ones through conjugate eigenvalues
            vl = np.empty_like(vr)
            used = set()
            for j, lam in enumerate(vals):
                dist = np.abs(lvals - np.conj(lam))
                for cand in np.argsort(dist):
                    if int(cand) not in used:
                        used.add(int(cand))
                        vl[:, j] = lvecs[:, int(cand)]
                        break
        else:
            vl = None
        order = _sort_modes(vals)
        vals = vals[order]
        vr = vr[:, order]
        if vl is not None:
            vl = vl[:, order]
        complete = False
        radius = scale

    # identify the zero mode among the slowest
    zero_candidates = np.where(np.abs(vals) <= max(1e-10 * radius, 1e-13 * scale))[0]
    if len(zero_candidates) == 0:
        zero_index = int(np.argmin(np.abs(vals)))
        warnings.warn(
            f"slowest eigenvalue {vals[zero_index]} does not vanish within "
            f"{ZERO_MODE_TOL} * spectral radius",
            RuntimeWarning,
            stacklevel=2,
        )
    else:
        traces = [abs(np.trace(unvec(vr[:, int(i)], d))) for i in zero_candidates]
        zero_index = int(zero_candidates[int(np.argmax(traces))])

    m_count = len(vals)
    etas = np.empty((m_count, d, d), dtype=np.complex128)
    sigmas = np.empty((m_count, d, d), dtype=np.complex128) if vl is not None else None
    flagged: list[int] = []
    for j in range(m_count):
        r = vr[:, j]
        r = r / np.linalg.norm(r)          # unit Frobenius norm
        eta = unvec(r, d)
        # Phase gauge: rotate to maximize the Hermitian part, so modes with
        # real eigenvalues come out Hermitian instead of e^{i phi} * Hermitian
        # with whatever phi the eigensolver happened to return.
        z = np.trace(eta @ eta)
        if abs(z) > 1e-8:
            r = r * np.exp(-0.5j * np.angle(z))
            eta = unvec(r, d)
        etas[j] = eta
        if sigmas is not None:
            lv = vl[:, j]
            overlap = np.vdot(lv, r)
            if abs(overlap) < 1e-8 * np.linalg.norm(lv):
                flagged.append(j)
                warnings.warn(
                    f"mode {j} (lambda={vals[j]:.3e}) is near-defective; "
                    "biorthonormalization is ill-conditioned",
                    RuntimeWarning,
                    stacklevel=2,
                )
                overlap = overlap if overlap != 0 else 1.0
            sigmas[j] = unvec(lv / np.conj(overlap), d)

    # pin the zero mode to the physical normalization
    rho_ss = etas[zero_index]
    tr = np.trace(rho_ss)
    if abs(tr) > 1e-12:
        rho_ss = rho_ss / tr
        rho_ss = 0.5 * (rho_ss + rho_ss.conj().T)
        etas[zero_index] = rho_ss
        if sigmas is not None:
            sigmas[zero_index] = np.eye(d, dtype=np.complex128)

    return SpectralDecomposition(
        liouv.space, vals, etas, sigmas, zero_index, radius, complete, flagged
    )


@dataclass
class BitflipRate:
    rate: float
    eigenvalue: complex
    oscillatory: bool


def bitflip_rate(source, method: str = "auto", count: int = 8) -> BitflipRate:
    """Asymptotic bit-flip rate -Re(lambda_1) of the slowest nonzero mode.

    Among the eigenvalues with |Re| above the zero threshold the one
    with the smallest |Re| wins; ties are broken by the smallest |Im|.
    A nonzero imaginary part flags the regime as oscillatory rather than
    a plain relaxation mode.
    """
    if isinstance(source, SuperOperator):
        dec = spectrum(source, count=count, method=method, left=False)
    elif isinstance(source, SpectralDecomposition):
        dec = source
    else:
        raise TypeError("bitflip_rate expects a SuperOperator or SpectralDecomposition")

    tol_zero = ZERO_TOL_FACTOR * max(dec.radius, 1.0)
    vals = dec.eigenvalues
    nonzero = [x for x in vals if abs(x.real) >= tol_zero]
    if not nonzero:
        raise ValueError("no nonzero eigenvalue found; increase the mode count")
    nonzero.sort(key=lambda x: (abs(x.real), abs(x.imag)))
    lam = nonzero[0]
    return BitflipRate(rate=float(-lam.real), eigenvalue=complex(lam), oscillatory=abs(lam.imag) > tol_zero)


def reflection_symmetry_check(m: ModelSpec) -> float:
    """Commutator norm of the Liouvillian with the anti-unitary reflection.

    The reflection T rho = Theta rho* Theta with Theta the buffer parity
    (identity for single-mode models) composed with Fock-basis complex
    conjugation.  Returns max over matrix units E of
    ||L(T(E)) - T(L(E))||_2, which vanishes exactly when the model has
    the symmetry.
    """
    liouv = build_liouvillian(m)
    d = m.space.dim
    if m.space.nmodes >= 2:
        pb = ((-1.0) ** np.arange(m.space.mode_dims[1])).astype(np.float64)
        p_diag = np.tile(pb, m.space.dim // m.space.mode_dims[1])
        # memory-major flat index: buffer is the fast index
    else:
        p_diag = np.ones(d)
    pvec = np.kron(p_diag, p_diag)  # column-stacked sandwich Theta X Theta
    t_unit = pvec                   # T(E_idx) = pvec[idx] * E_idx for real matrix units

    lcsc = liouv.mat.tocsc()
    worst = 0.0
    for idx in range(d * d):
        col = np.asarray(lcsc[:, idx].todense()).ravel()
        lhs = t_unit[idx] * col
        rhs = pvec * np.conj(col)
        worst = max(worst, float(np.linalg.norm(lhs - rhs)))
    return worst


def restricted_basis(cutoff: int, m_keep: int, theta_phase: float, eps_2: float) -> np.ndarray:
    """Isometry onto the lowest eigenvectors of a diagnostic cat Hamiltonian.

    Diagonalizes H = eps_2 (a^2 e^{-i theta} + a†^2 e^{+i theta})/2
    + a†^2 a^2 / 2 on the truncated mode and returns the cutoff x m_keep
    matrix of its lowest eigenvectors, an exact isometry (R† R = I).
    """
    if not 1 <= m_keep <= cutoff:
        raise ValueError(f"m_keep must be in [1, {cutoff}]")
    a = annihilation(cutoff).to_dense()
    a2 = a @ a
    h = 0.5 * eps_2 * (a2 * np.exp(-1j * theta_phase) + a2.conj().T * np.exp(1j * theta_phase))
    h = h + 0.5 * (a2.conj().T @ a2)
    evals, evecs = sla.eigh(h)
    return np.ascontiguousarray(evecs[:, :m_keep])


def restrict_operator(op: Operator, r: np.ndarray, mode: int = 0) -> Operator:
    """Compress one mode of an operator with an isometry R (dim x M)."""
    dims = op.space.mode_dims
    if r.shape[0] != dims[mode]:
        raise ValueError("isometry row dimension does not match the mode cutoff")
    factors = []
    for k, dk in enumerate(dims):
        factors.append(sp.csr_matrix(r) if k == mode else sp.identity(dk, format="csr"))
    big = factors[0]
    for f in factors[1:]:
        big = sp.kron(big, f, format="csr")
    new_dims = tuple(r.shape[1] if k == mode else dk for k, dk in enumerate(dims))
    return Operator(HilbertSpace(new_dims), (big.conjugate().T @ op.mat @ big).tocsr())


def restrict_model(m: ModelSpec, r: np.ndarray, mode: int = 0) -> ModelSpec:
    """Apply `restrict_operator` to the Hamiltonian and every jump channel."""
    h = restrict_operator(m.hamiltonian, r, mode)
    h = Operator(h.space, 0.5 * (h.mat + h.mat.conjugate().T))
    jumps = [(restrict_operator(op, r, mode), label) for op, label in m.jumps]
    meta = dict(m.meta)
    meta["restricted"] = {"mode": mode, "m_keep": r.shape[1]}
    return ModelSpec(h.space, h, jumps, meta)


def expectation(rho, op: Operator) -> complex:
    """Tr(rho O) for a DensityMatrix or a raw matrix."""
    mat = rho.mat if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return complex(np.sum(op.mat.multiply(mat.T).data))
