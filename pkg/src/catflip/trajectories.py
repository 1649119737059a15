"""Quantum-jump unraveling of the cat-qubit master equation.

A trajectory evolves a pure state with the non-Hermitian generator
H_nh = H - (i/2) sum_mu L_mu^dag L_mu between stochastic jumps psi ->
L_mu psi / ||.||, chosen each step with probability dp_mu =
<L_mu^dag L_mu> dt.  The per-step jump decision uses the exponential
survival weight 1 - exp(-sum dp), which agrees with the linear rule to
O(dt^2) but keeps the statistics of long jump-free stretches faithful;
those rare stretches are precisely what seeds a bit flip, so a linear
threshold would thin the events under study.  For long rare-event
campaigns `drift_order=2` swaps the linear no-jump update for a
precomputed second-order propagator (exact exponential of the diagonal
damping, Strang-split around a quadratic polynomial in the small
off-diagonal rest) whose squared norm is itself the survival
probability; the linear drift injects a slow artificial diffusion
inside the logical subspace that inflates flip counts unless dp_target
is impractically small.  Averaging
projectors over trajectories reproduces the master equation, while a
single realization exposes the anatomy of a flip: which jumps fire,
when the state crosses the vacuum, and how long it takes to re-lock
onto the other lobe.

Detector choices enter through `betadyne_transform`: displacing a jump
operator L -> L + beta (with the compensating Hamiltonian shift) leaves
the master equation invariant but changes the unraveling, e.g. a large
real beta on the memory-loss channel mimics homodyne-like monitoring
and reshapes trajectory noise without touching ensemble averages.

The hot loop is a banded sparse kernel (numba-compiled when available,
plain Python otherwise) with counter-based per-trajectory RNG streams,
so trajectory `i` of a run is reproducible in isolation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import HilbertSpace, Ket, coherent_state
from .models import ModelSpec

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        return wrap


class TrajectoryError(RuntimeError):
    pass


class StepSizeError(TrajectoryError):
    """Total jump probability in one step exceeded 1; dt is too large."""


class StepSizeWarning(UserWarning):
    """dt * max <L^dag L> crossed the first-order accuracy guard."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class UnravelingConfig:
    """Controls for one ensemble of trajectories.

    schemes maps a jump label to "counting" (default for every channel)
    or ("betadyne", beta).  dt = None picks dp_target / max <L^dag L>
    over the initial and lobe states with a factor-2 headroom.
    log_channels maps labels to bools; unlisted channels default to
    `log_default`.  snapshot_every is in units of samples (0 disables).

    drift_order selects the no-jump propagator: 1 applies (1 - i dt H_nh)
    as in the stepping contract; 2 applies a precomputed second-order
    propagator (exact exponential of the diagonal damping, Strang-split
    around a quadratic in the off-diagonal rest), treats its squared
    norm as the survival probability, and sandwiches collapses between
    half-step drifts with channel weights read off the mid-step state.
    The linear drift injects a slow state diffusion at large dp targets
    and start-of-step collapses lose O(dt) of drift per jump; long
    rare-event campaigns need order 2 to keep flip statistics unbiased
    while staying within a wall-clock budget.  The random-number draw
    order is identical for both orders.
    """

    t_max: float
    dt: float | None = None
    dp_target: float = 0.01
    sample_every: int = 50
    snapshot_every: int = 0
    master_seed: int = 12345
    trajectory_count: int = 1
    schemes: dict = field(default_factory=dict)
    log_channels: dict | None = None
    log_default: bool = True
    jump_log_cap: int = 0
    drift_order: int = 1

    def __post_init__(self) -> None:
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if not (0 < self.dp_target <= 0.5):
            raise ValueError("dp_target must lie in (0, 0.5]")
        if self.drift_order not in (1, 2):
            raise ValueError("drift_order must be 1 or 2")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")
        if self.trajectory_count < 1:
            raise ValueError("trajectory_count must be >= 1")

    def validate_against(self, model: ModelSpec) -> None:
        labels = set(model.jump_labels())
        for key in self.schemes:
            if key not in labels:
                raise ValueError(f"scheme for unknown jump channel {key!r}")
        for key in self.log_channels or {}:
            if key not in labels:
                raise ValueError(f"log flag for unknown jump channel {key!r}")
        for val in self.schemes.values():
            if val == "counting":
                continue
            if isinstance(val, tuple) and len(val) == 2 and val[0] == "betadyne":
                continue
            raise ValueError(f"scheme must be 'counting' or ('betadyne', beta), got {val!r}")


# ---------------------------------------------------------------------------
# detector transform


def betadyne_transform(model: ModelSpec, label: str, beta: complex) -> ModelSpec:
    """Displace one jump channel: L -> L + beta, H -> H - i(L beta* - beta L^dag)/2.

    The Liouvillian is unchanged (checked in tests), only the unraveling
    differs.  Returns a new ModelSpec with the same labels.
    """
    labels = model.jump_labels()
    if label not in labels:
        raise ValueError(f"no jump channel labeled {label!r}")
    beta = complex(beta)
    d = model.space.dim
    eye = sp.identity(d, format="csr", dtype=np.complex128)
    new_jumps = []
    h = model.hamiltonian.mat.astype(np.complex128)
    for op, lbl in model.jumps:
        if lbl == label:
            lmat = op.mat.astype(np.complex128)
            h = h - 0.5j * (np.conj(beta) * lmat - beta * lmat.getH())
            new_jumps.append((type(op)(model.space, (lmat + beta * eye).tocsr()), lbl))
        else:
            new_jumps.append((op, lbl))
    h = 0.5 * (h + h.getH())  # symmetrize away sparse round-off
    meta = dict(model.meta)
    displaced = dict(meta.get("betadyne", {}))
    displaced[label] = displaced.get(label, 0j) + beta
    meta["betadyne"] = displaced
    ham = type(model.hamiltonian)(model.space, h.tocsr())
    return ModelSpec(space=model.space, hamiltonian=ham, jumps=new_jumps, meta=meta)


def apply_schemes(model: ModelSpec, schemes: dict) -> ModelSpec:
    out = model
    for label, scheme in schemes.items():
        if scheme == "counting":
            continue
        out = betadyne_transform(out, label, scheme[1])
    return out


# ---------------------------------------------------------------------------
# banded kernel


def _extract_bands(mat: sp.spmatrix) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal-band form: offsets[k] and bands[k, :] with bands[k, m] =
    mat[m + max(0, -o), m + max(0, -o) + o]."""
    d = mat.shape[0]
    coo = mat.tocoo()
    if coo.nnz == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, d), dtype=np.complex128)
    offs = np.unique(coo.col.astype(np.int64) - coo.row.astype(np.int64))
    csr = mat.tocsr()
    keep = []
    rows = []
    for o in offs:
        vals = np.asarray(csr.diagonal(int(o)), dtype=np.complex128)
        if vals.size and np.max(np.abs(vals)) > 0:
            row = np.zeros(d, dtype=np.complex128)
            row[: vals.size] = vals
            keep.append(int(o))
            rows.append(row)
    if not keep:
        return np.zeros(0, dtype=np.int64), np.zeros((0, d), dtype=np.complex128)
    return np.asarray(keep, dtype=np.int64), np.asarray(rows)


# Kernel layout notes.  State is stored as separate real/imag float64
# vectors with `pad` zero slots on each side, so band loops never branch
# on bounds: source index j + o + pad is always valid and the padding
# contributes exact zeros.  Band rows are stored full-length and aligned
# to the target row (value for row j sits at column j).  Each band row
# is tagged 0 (purely real), 1 (purely imaginary), or 2 (complex) and
# gets a specialized two-array update; the flag subset in _FASTMATH
# keeps NaN semantics so the norm guards still catch blowups.
_FASTMATH = {"contract", "reassoc", "nsz", "arcp"}


@njit(inline="always", fastmath=_FASTMATH)
def _apply_bands(offs, band_re, band_im, btype, k0, k1, pad, xr, xi, outr, outi):
    d = outr.shape[0]
    for k in range(k0, k1):
        o = offs[k] + pad
        t = btype[k]
        if k == k0:
            if t == 0:
                for j in range(d):
                    v = band_re[k, j]
                    outr[j] = v * xr[j + o]
                    outi[j] = v * xi[j + o]
            elif t == 1:
                for j in range(d):
                    v = band_im[k, j]
                    outr[j] = -v * xi[j + o]
                    outi[j] = v * xr[j + o]
            else:
                for j in range(d):
                    ar = xr[j + o]
                    ai = xi[j + o]
                    vr = band_re[k, j]
                    vi = band_im[k, j]
                    outr[j] = vr * ar - vi * ai
                    outi[j] = vr * ai + vi * ar
        else:
            if t == 0:
                for j in range(d):
                    v = band_re[k, j]
                    outr[j] += v * xr[j + o]
                    outi[j] += v * xi[j + o]
            elif t == 1:
                for j in range(d):
                    v = band_im[k, j]
                    outr[j] -= v * xi[j + o]
                    outi[j] += v * xr[j + o]
            else:
                for j in range(d):
                    ar = xr[j + o]
                    ai = xi[j + o]
                    vr = band_re[k, j]
                    vi = band_im[k, j]
                    outr[j] += vr * ar - vi * ai
                    outi[j] += vr * ai + vi * ar


@njit(cache=True, fastmath=_FASTMATH)
def _record_sample(
    psi_re, psi_im, pad, diag_obs, lad_strides, lad_coefs, out_diag, out_lad_re, out_lad_im, s
):
    d = diag_obs.shape[1]
    for q in range(diag_obs.shape[0]):
        acc = 0.0
        for i in range(d):
            pr = psi_re[pad + i]
            pi = psi_im[pad + i]
            acc += diag_obs[q, i] * (pr * pr + pi * pi)
        out_diag[q, s] = acc
    for q in range(lad_strides.shape[0]):
        st = lad_strides[q]
        acc_r = 0.0
        acc_i = 0.0
        for i in range(d - st):
            cr = lad_coefs[q, i]
            ar = psi_re[pad + i]
            ai = psi_im[pad + i]
            br = psi_re[pad + i + st]
            bi = psi_im[pad + i + st]
            acc_r += cr * (ar * br + ai * bi)
            acc_i += cr * (ar * bi - ai * br)
        out_lad_re[q, s] = acc_r
        out_lad_im[q, s] = acc_i


@njit(cache=True, fastmath=_FASTMATH)
def _mcwf_loop(
    psi_re,
    psi_im,
    pad,
    dt,
    order,
    n_steps,
    sample_every,
    snap_every,
    offs,
    band_re,
    band_im,
    btype,
    seg,
    c_log,
    diag_obs,
    lad_strides,
    lad_coefs,
    out_diag,
    out_lad_re,
    out_lad_im,
    out_snaps,
    jump_t,
    jump_c,
    jump_counts,
    rng,
):
    # Draw order is load-bearing: exactly one uniform per step, plus one
    # more on a jump step.  step() below must mirror it (tested).
    #
    # The per-step Bernoulli needs only the total jump probability, and
    # that is free once H_nh psi is known: with H Hermitian and
    # H_nh = H - (i/2) sum L^dag L,
    #   sum_c dt ||L_c psi||^2 = -2 dt Im<psi|H_nh psi>,
    # so per-channel amplitudes are computed only on actual jump steps.
    d = diag_obs.shape[1]
    # order 2 carries an extra half-step drift segment for midpoint jumps
    nch = seg.shape[0] - 3 if order == 2 else seg.shape[0] - 2
    phi_re = np.zeros((nch, d), dtype=np.float64)
    phi_im = np.zeros((nch, d), dtype=np.float64)
    tmp_re = np.zeros(d, dtype=np.float64)
    tmp_im = np.zeros(d, dtype=np.float64)
    dp = np.zeros(nch, dtype=np.float64)
    max_dp = 0.0
    n_logged = 0
    cap = jump_t.shape[0]
    status = 0
    _record_sample(
        psi_re, psi_im, pad, diag_obs, lad_strides, lad_coefs, out_diag, out_lad_re, out_lad_im, 0
    )
    ns = 1
    nsnap = 0
    if snap_every > 0:
        for i in range(d):
            out_snaps[0, i] = psi_re[pad + i] + 1j * psi_im[pad + i]
        nsnap = 1
    for step in range(1, n_steps + 1):
        # segment nch holds H_nh when order is 1, and the precomputed
        # second-order no-jump propagator when order is 2, so tmp is
        # H psi or the unnormalized no-jump successor
        _apply_bands(
            offs, band_re, band_im, btype, seg[nch], seg[nch + 1], pad,
            psi_re, psi_im, tmp_re, tmp_im,
        )
        do_jump = False
        norm2 = 0.0
        if order == 2:
            for j in range(d):
                norm2 += tmp_re[j] * tmp_re[j] + tmp_im[j] * tmp_im[j]
            total = 1.0 - norm2
            if total > max_dp:
                max_dp = total
            if norm2 < 0.05:
                # survival below e^-3: rates far beyond the step budget,
                # the drift expansion is no longer trustworthy
                status = 1
                break
            r = rng.random()
            # |U2 psi|^2 is the no-jump survival probability at this order
            do_jump = r < total
        else:
            pn2 = 0.0
            zi = 0.0
            tn = 0.0
            for j in range(d):
                xr = psi_re[pad + j]
                xi = psi_im[pad + j]
                tr = tmp_re[j]
                ti = tmp_im[j]
                pn2 += xr * xr + xi * xi
                zi += xr * ti - xi * tr
                tn += tr * tr + ti * ti
            total = -2.0 * dt * zi
            if total > max_dp:
                max_dp = total
            if total > 1.0:
                status = 1
                break
            # ||psi - i dt H psi||^2 expands exactly into the three sums
            norm2 = pn2 + 2.0 * dt * zi + dt * dt * tn
            r = rng.random()
            # exponential survival decision: matches the frozen-rate
            # jump-free statistics exactly, where the linear threshold
            # thins long runs
            do_jump = r < -np.expm1(-total)
        if do_jump:
            if order == 2:
                # midpoint jump: half drift, collapse, half drift, so the
                # jump step keeps its full share of deterministic motion
                # and channel weights are read off the mid-step state;
                # collapsing the start state instead loses O(dt) drift per
                # jump, a visible rate bias once dp_target is pushed high
                _apply_bands(
                    offs, band_re, band_im, btype, seg[nch + 1], seg[nch + 2], pad,
                    psi_re, psi_im, tmp_re, tmp_im,
                )
                for j in range(d):
                    psi_re[pad + j] = tmp_re[j]
                    psi_im[pad + j] = tmp_im[j]
            dpsum = 0.0
            for c in range(nch):
                _apply_bands(
                    offs, band_re, band_im, btype, seg[c], seg[c + 1], pad,
                    psi_re, psi_im, phi_re[c], phi_im[c],
                )
                acc = 0.0
                for j in range(d):
                    acc += phi_re[c, j] * phi_re[c, j] + phi_im[c, j] * phi_im[c, j]
                dp[c] = acc * dt
                dpsum += dp[c]
            target = rng.random() * dpsum
            sel = nch - 1
            cum = 0.0
            for c in range(nch):
                cum += dp[c]
                if target <= cum:
                    sel = c
                    break
            nrm = math.sqrt(dp[sel] / dt)
            if not (nrm > 1e-12):
                status = 3
                break
            inv = 1.0 / nrm
            for j in range(d):
                psi_re[pad + j] = phi_re[sel, j] * inv
                psi_im[pad + j] = phi_im[sel, j] * inv
            if order == 2:
                _apply_bands(
                    offs, band_re, band_im, btype, seg[nch + 1], seg[nch + 2], pad,
                    psi_re, psi_im, tmp_re, tmp_im,
                )
                tn2 = 0.0
                for j in range(d):
                    tn2 += tmp_re[j] * tmp_re[j] + tmp_im[j] * tmp_im[j]
                if not (tn2 > 1e-24):
                    status = 3
                    break
                inv2 = 1.0 / math.sqrt(tn2)
                for j in range(d):
                    psi_re[pad + j] = tmp_re[j] * inv2
                    psi_im[pad + j] = tmp_im[j] * inv2
            jump_counts[sel] += 1
            if c_log[sel] != 0:
                if n_logged >= cap:
                    status = 2
                    break
                jump_t[n_logged] = step * dt
                jump_c[n_logged] = sel
                n_logged += 1
        elif order == 2:
            inv = 1.0 / math.sqrt(norm2)
            for j in range(d):
                psi_re[pad + j] = tmp_re[j] * inv
                psi_im[pad + j] = tmp_im[j] * inv
        else:
            if not (norm2 > 1e-24):
                status = 3
                break
            inv = 1.0 / math.sqrt(norm2)
            for j in range(d):  # psi - i dt (H psi): re += dt Im, im -= dt Re
                psi_re[pad + j] = (psi_re[pad + j] + dt * tmp_im[j]) * inv
                psi_im[pad + j] = (psi_im[pad + j] - dt * tmp_re[j]) * inv
        if step % sample_every == 0:
            _record_sample(
                psi_re,
                psi_im,
                pad,
                diag_obs,
                lad_strides,
                lad_coefs,
                out_diag,
                out_lad_re,
                out_lad_im,
                ns,
            )
            if snap_every > 0 and ns % snap_every == 0:
                for i in range(d):
                    out_snaps[nsnap, i] = psi_re[pad + i] + 1j * psi_im[pad + i]
                nsnap += 1
            ns += 1
    return status, max_dp, n_logged, ns, nsnap


# ---------------------------------------------------------------------------
# reference step (kept dense and readable; must match the kernel draw for draw)


@dataclass(frozen=True)
class JumpRecord:
    channel: str
    time: float


def _step_arrays(psi: np.ndarray, h_nh: np.ndarray, jumps: list, dt: float, rng) -> tuple[np.ndarray, int | None]:
    dps = np.array([dt * float(np.vdot(l @ psi, l @ psi).real) for l in jumps])
    total = float(dps.sum())
    if total > 1.0:
        raise StepSizeError(f"sum of jump probabilities {total:.3f} > 1 in a single step")
    r = rng.random()
    if r < -math.expm1(-total):
        target = rng.random() * total
        sel = len(jumps) - 1
        cum = 0.0
        for c, p in enumerate(dps):
            cum += p
            if target <= cum:
                sel = c
                break
        phi = jumps[sel] @ psi
        return phi / np.linalg.norm(phi), sel
    out = psi - 1j * dt * (h_nh @ psi)
    return out / np.linalg.norm(out), None


def step(
    state: Ket, model: ModelSpec, dt: float, rng, t: float = 0.0
) -> tuple[Ket, JumpRecord | None]:
    """One first-order jump/no-jump step on a Ket.

    Readable reference for the compiled loop; draw order matches it
    exactly (one uniform per step, a second on jump steps).
    """
    state.check_normalized()
    jumps = [op.mat.toarray() for op, _ in model.jumps]
    labels = model.jump_labels()
    h_nh = model.hamiltonian.mat.toarray().astype(np.complex128)
    for mat in jumps:
        h_nh = h_nh - 0.5j * (mat.conj().T @ mat)
    out, sel = _step_arrays(state.amplitudes, h_nh, jumps, dt, rng)
    record = JumpRecord(labels[sel], t + dt) if sel is not None else None
    return Ket(model.space, out), record


# ---------------------------------------------------------------------------
# observables


_MODE_LETTERS = "abcdef"


def _mode_occupations(space: HilbertSpace, mode: int) -> np.ndarray:
    dims = space.mode_dims
    reps = int(np.prod(dims[mode + 1 :])) if mode + 1 < len(dims) else 1
    tile = int(np.prod(dims[:mode])) if mode > 0 else 1
    return np.tile(np.repeat(np.arange(dims[mode]), reps), tile)


def _mode_stride(space: HilbertSpace, mode: int) -> int:
    dims = space.mode_dims
    return int(np.prod(dims[mode + 1 :])) if mode + 1 < len(dims) else 1


def _build_observables(space: HilbertSpace):
    diag_names = []
    diag_rows = []
    lad_names = []
    lad_strides = []
    lad_rows = []
    d = space.dim
    for mode in range(space.nmodes):
        letter = _MODE_LETTERS[mode]
        occ = _mode_occupations(space, mode)
        diag_names.append(f"n_{letter}")
        diag_rows.append(occ.astype(float))
        if mode == 0:
            diag_names.append(f"parity_{letter}")
            diag_rows.append((-1.0) ** occ)
        stride = _mode_stride(space, mode)
        coef = np.where(occ < space.mode_dims[mode] - 1, np.sqrt(occ + 1.0), 0.0).astype(
            np.float64
        )
        lad_names.append(letter)
        lad_strides.append(stride)
        lad_rows.append(coef)
    return (
        diag_names,
        np.asarray(diag_rows),
        lad_names,
        np.asarray(lad_strides, dtype=np.int64),
        np.asarray(lad_rows),
    )


# ---------------------------------------------------------------------------
# records


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    observables: dict
    jump_times: dict
    jump_counts: dict
    snapshots: np.ndarray | None
    snapshot_times: np.ndarray | None
    meta: dict
    max_dp: float
    status: str = "ok"

    def stream_to(self, path, header_extra: dict | None = None) -> None:
        """Append samples as text rows: time, observables, per-channel jump
        counts within each sample bin.  Creates the header on first write."""
        import os

        logged = sorted(self.jump_times)
        cols = ["time"] + list(self.observables) + [f"jumps_{l}" for l in logged]
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a") as fh:
            if new:
                fh.write("# trajectory stream v1\n")
                for k, v in (header_extra or {}).items():
                    fh.write(f"# {k}={v}\n")
                fh.write("# " + ",".join(cols) + "\n")
            fh.write(f"# begin trajectory index={self.meta.get('index')}\n")
            t = self.times
            binned = {}
            for l in logged:
                edges = np.concatenate(([-np.inf], t))
                binned[l], _ = np.histogram(self.jump_times[l], bins=np.append(edges[1:], np.inf))
            obs = list(self.observables.values())
            for s in range(t.size):
                row = [f"{t[s]:.9g}"] + [f"{o[s]:.9g}" for o in obs]
                row += [str(int(binned[l][s])) for l in logged]
                fh.write(",".join(row) + "\n")


def default_initial_state(model: ModelSpec) -> Ket:
    """Coherent state on the +lobe (buffer in vacuum for two-mode models)."""
    lobe = complex(model.meta["lobe"])
    dims = model.space.mode_dims
    amps = coherent_state(lobe, dims[0]).amplitudes
    for dim in dims[1:]:
        vac = np.zeros(dim, dtype=np.complex128)
        vac[0] = 1.0
        amps = np.kron(amps, vac)
    return Ket(model.space, amps)


def _auto_dt(model: ModelSpec, config: UnravelingConfig, psi0: np.ndarray) -> float:
    probes = [psi0]
    if model.meta.get("lobe") is not None:
        probes.append(default_initial_state(model).amplitudes)
    rate = 0.0
    for op, _ in model.jumps:
        for psi in probes:
            phi = op.mat @ psi
            rate = max(rate, float(np.vdot(phi, phi).real))
    if rate == 0.0:
        raise TrajectoryError("all jump channels vanish; nothing to unravel")
    return config.dp_target / (2.0 * rate)


def run_trajectory(
    model: ModelSpec,
    config: UnravelingConfig,
    index: int = 0,
    psi0: Ket | None = None,
) -> TrajectoryRecord:
    """Simulate one trajectory; fully determined by (master_seed, index)."""
    config.validate_against(model)
    work = apply_schemes(model, config.schemes)
    if psi0 is None:
        psi0 = default_initial_state(work)
    if psi0.space.dim != work.space.dim:
        raise ValueError("initial state lives in a different space")
    psi = psi0.normalized().amplitudes.astype(np.complex128).copy()

    dt = config.dt if config.dt is not None else _auto_dt(work, config, psi)
    n_steps = int(math.ceil(config.t_max / dt))
    d = work.space.dim

    if not work.hamiltonian.is_hermitian():
        raise TrajectoryError("Hamiltonian must be Hermitian for the jump unraveling")
    h_nh = work.hamiltonian.mat.astype(np.complex128).tocsr()
    acc = None
    for op, _ in work.jumps:
        l = op.mat.astype(np.complex128)
        term = (l.getH() @ l).tocsr()
        acc = term if acc is None else acc + term
    if acc is not None:
        h_nh = (h_nh - 0.5j * acc).tocsr()

    labels = work.jump_labels()
    nch = len(labels)
    band_sets = [_extract_bands(op.mat.astype(np.complex128)) for op, _ in work.jumps]
    if config.drift_order == 2:
        # Drift segment carries the whole no-jump propagator, built once
        # since H_nh is time independent.  The diagonal (number-conserving
        # damping and Kerr) is exponentiated exactly so strongly damped
        # high-n components never see a truncated series: a quadratic
        # Taylor of exp(-x) turns back up for x > 1 and would trap an
        # artificial tail population near the cutoff.  The off-diagonal
        # rest R is uniformly small per step, so a Strang split with a
        # second-order polynomial keeps O(dt^3) local accuracy.
        dmain = h_nh.diagonal()
        rest = (h_nh - sp.diags(dmain)).tocsr()
        ident = sp.identity(d, dtype=np.complex128, format="csr")
        rest2 = (rest @ rest).tocsr()
        for frac in (dt, 0.5 * dt):
            # full-step propagator for plain steps, half-step twin for the
            # midpoint-jump sandwich
            poly = ident - 1j * frac * rest - 0.5 * frac * frac * rest2
            e_half = sp.diags(np.exp(-0.5j * frac * dmain))
            band_sets.append(_extract_bands((e_half @ poly @ e_half).tocsr()))
    else:
        band_sets.append(_extract_bands(h_nh))
    seg = np.zeros(len(band_sets) + 1, dtype=np.int64)
    for c, (o, _) in enumerate(band_sets):
        seg[c + 1] = seg[c] + o.size
    nb_total = int(seg[-1])
    offs = np.zeros(max(nb_total, 1), dtype=np.int64)
    band_re = np.zeros((max(nb_total, 1), d), dtype=np.float64)
    band_im = np.zeros((max(nb_total, 1), d), dtype=np.float64)
    btype = np.full(max(nb_total, 1), 2, dtype=np.uint8)
    for c, (o, b) in enumerate(band_sets):
        for k in range(o.size):
            row = seg[c] + k
            offs[row] = o[k]
            lo = max(0, -int(o[k]))
            hi = d - max(0, int(o[k]))
            band_re[row, lo:hi] = b[k, : hi - lo].real
            band_im[row, lo:hi] = b[k, : hi - lo].imag
            re_zero = not band_re[row].any()
            im_zero = not band_im[row].any()
            btype[row] = 1 if re_zero and not im_zero else (0 if im_zero else 2)
    pad = int(np.abs(offs).max()) if nb_total else 0
    log_flags = np.zeros(nch, dtype=np.uint8)
    for c, lbl in enumerate(labels):
        want = (config.log_channels or {}).get(lbl, config.log_default)
        log_flags[c] = 1 if want else 0

    diag_names, diag_obs, lad_names, lad_strides, lad_coefs = _build_observables(work.space)

    ns_total = n_steps // config.sample_every + 1
    out_diag = np.zeros((diag_obs.shape[0], ns_total))
    out_lad_re = np.zeros((lad_strides.size, ns_total))
    out_lad_im = np.zeros((lad_strides.size, ns_total))
    snap_every = config.snapshot_every
    nsnap_total = (ns_total - 1) // snap_every + 1 if snap_every > 0 else 0
    out_snaps = np.zeros((max(nsnap_total, 1), d), dtype=np.complex128)

    if config.jump_log_cap > 0:
        cap = config.jump_log_cap
    else:
        rate_sum = 0.0
        for c, (op, _) in enumerate(work.jumps):
            if not log_flags[c]:
                continue
            phi = op.mat @ psi
            rate_sum += float(np.vdot(phi, phi).real)
        cap = int(rate_sum * config.t_max * 3) + 4096

    while True:
        jump_t = np.zeros(cap)
        jump_c = np.zeros(cap, dtype=np.int8)
        jump_counts = np.zeros(nch, dtype=np.int64)
        rng = np.random.Generator(
            np.random.Philox(key=np.array([config.master_seed, index], dtype=np.uint64))
        )
        psi_re = np.zeros(d + 2 * pad)
        psi_im = np.zeros(d + 2 * pad)
        psi_re[pad : pad + d] = psi.real
        psi_im[pad : pad + d] = psi.imag
        status, max_dp, n_logged, ns, nsnap = _mcwf_loop(
            psi_re,
            psi_im,
            pad,
            dt,
            int(config.drift_order),
            n_steps,
            config.sample_every,
            snap_every,
            offs,
            band_re,
            band_im,
            btype,
            seg,
            log_flags,
            diag_obs,
            lad_strides,
            lad_coefs,
            out_diag,
            out_lad_re,
            out_lad_im,
            out_snaps,
            jump_t,
            jump_c,
            jump_counts,
            rng,
        )
        if status == 2:
            cap *= 2
            continue
        break

    if status == 1:
        raise StepSizeError(
            f"per-step jump probability blew past the scheme's validity at "
            f"dt={dt:.3e}; reduce dt or dp_target"
        )
    if status == 3:
        raise TrajectoryError("state norm underflow; model or dt is pathological")
    if max_dp > (0.25 if config.drift_order == 2 else 0.05):
        warnings.warn(
            f"max total jump probability per step {max_dp:.3f}; "
            "unraveling discretization error may be visible",
            StepSizeWarning,
            stacklevel=2,
        )

    times = np.arange(ns) * (dt * config.sample_every)
    observables = {}
    for q, name in enumerate(diag_names):
        observables[name] = out_diag[q, :ns].copy()
    for q, name in enumerate(lad_names):
        observables[f"re_{name}"] = out_lad_re[q, :ns].copy()
        observables[f"im_{name}"] = out_lad_im[q, :ns].copy()

    jump_times = {}
    jump_count_map = {}
    for c, lbl in enumerate(labels):
        jump_count_map[lbl] = int(jump_counts[c])
        if log_flags[c]:
            mask = jump_c[:n_logged] == c
            jump_times[lbl] = jump_t[:n_logged][mask].copy()

    snapshots = None
    snapshot_times = None
    if snap_every > 0:
        snapshots = out_snaps[:nsnap].copy()
        snapshot_times = times[::snap_every][:nsnap].copy()

    meta = dict(work.meta)
    meta.update(
        dt=dt,
        master_seed=config.master_seed,
        index=index,
        schemes=dict(config.schemes),
        n_steps=n_steps,
        sample_every=config.sample_every,
    )
    return TrajectoryRecord(
        times=times,
        observables=observables,
        jump_times=jump_times,
        jump_counts=jump_count_map,
        snapshots=snapshots,
        snapshot_times=snapshot_times,
        meta=meta,
        max_dp=float(max_dp),
    )


def run_ensemble(model: ModelSpec, config: UnravelingConfig, psi0: Ket | None = None) -> list:
    return [
        run_trajectory(model, config, index=i, psi0=psi0)
        for i in range(config.trajectory_count)
    ]


# ---------------------------------------------------------------------------
# bit-flip anatomy


@dataclass
class BitFlipEvent:
    trajectory_index: int
    direction: int        # +1: left the +lobe, -1: left the -lobe
    t_leave: float        # last sample inside the departed band
    t0: float             # photon-number minimum inside the transit
    t_enter: float        # first sample inside the arrival band
    i_leave: int
    i0: int
    i_enter: int
    segments: tuple | None = None   # PhaseSegments, attached by segment_phases callers


def detect_bitflips(
    record: TrajectoryRecord,
    band: float = 0.5,
    min_outside: int = 1,
) -> list[BitFlipEvent]:
    """Hysteresis detector on the steering quadrature.

    A flip is a crossing from one band (|s| > band * |lobe|) into the
    opposite one with at least `min_outside` samples strictly between
    the bands; t0 is the <n> minimum over the transit window.
    """
    steer = record.meta["steering"]
    amp = abs(complex(record.meta["lobe"]))
    s = record.observables[steer]
    n = record.observables["n_a"]
    t = record.times
    code = np.zeros(s.size, dtype=np.int8)
    code[s > band * amp] = 1
    code[s < -band * amp] = -1
    events = []
    cur = 0
    i_last = -1
    for i in range(code.size):
        c = code[i]
        if c == 0:
            continue
        if cur == 0:
            cur = c
        elif c != cur:
            outside = i - i_last - 1
            if outside >= min_outside:
                seg = n[i_last : i + 1]
                k = i_last + int(np.argmin(seg))
                events.append(
                    BitFlipEvent(
                        trajectory_index=int(record.meta.get("index", -1)),
                        direction=int(cur),
                        t_leave=float(t[i_last]),
                        t0=float(t[k]),
                        t_enter=float(t[i]),
                        i_leave=i_last,
                        i0=k,
                        i_enter=i,
                    )
                )
            cur = c
        i_last = i
    return events


@dataclass(frozen=True)
class PhaseSegment:
    label: str            # coherent | fluctuation | vacuum | cat_like
    t_start: float
    t_end: float
    i_start: int
    i_end: int


def segment_phases(
    record: TrajectoryRecord,
    event: BitFlipEvent,
    pad: float | None = None,
    coherent_radius: float = 0.2,
) -> list[PhaseSegment]:
    """Label the samples around one flip.

    coherent: within coherent_radius * |lobe| of either lobe; vacuum:
    <n> < 1 with no stabilizing jump in the trailing 1/kappa_stab
    window; otherwise fluctuation before t0 and cat_like after.
    """
    meta = record.meta
    lobe = complex(meta["lobe"])
    amp = abs(lobe)
    kappa = float(meta["kappa_stab"])
    if pad is None:
        pad = 2.0 / kappa
    t = record.times
    lo = np.searchsorted(t, event.t_leave - pad)
    hi = np.searchsorted(t, event.t_enter + pad, side="right")
    stab = []
    for lbl in meta["stabilizing_labels"]:
        if lbl not in record.jump_times:
            raise ValueError(
                f"stabilizing channel {lbl!r} was not logged; enable it in log_channels "
                "to segment flip phases"
            )
        stab.append(record.jump_times[lbl])
    stab_times = np.sort(np.concatenate(stab)) if stab else np.zeros(0)

    a = record.observables["re_a"] + 1j * record.observables["im_a"]
    n = record.observables["n_a"]
    labels = []
    for i in range(lo, hi):
        dist = min(abs(a[i] - lobe), abs(a[i] + lobe))
        if dist < coherent_radius * amp:
            labels.append("coherent")
            continue
        if n[i] < 1.0:
            j0 = np.searchsorted(stab_times, t[i] - 1.0 / kappa, side="right")
            j1 = np.searchsorted(stab_times, t[i], side="right")
            if j1 == j0:
                labels.append("vacuum")
                continue
        labels.append("fluctuation" if t[i] <= event.t0 else "cat_like")

    segments = []
    start = lo
    for i in range(lo + 1, hi + 1):
        if i == hi or labels[i - lo] != labels[start - lo]:
            segments.append(
                PhaseSegment(
                    label=labels[start - lo],
                    t_start=float(t[start]),
                    t_end=float(t[i - 1]),
                    i_start=start,
                    i_end=i - 1,
                )
            )
            start = i
    return segments


@dataclass
class JumpDensityProfile:
    channel: str
    centers: np.ndarray
    mean: np.ndarray      # density per event, us^-1
    std: np.ndarray       # spread of the per-event densities
    baseline: float
    n_events: int


def jump_density(
    records: list,
    events: list,
    channel: str,
    half_width: float,
    bins: int = 40,
) -> JumpDensityProfile:
    """Mean and std of the `channel` jump rate versus time from each
    flip's t0, aggregated per event.

    The baseline is the mean density over the outer quarters of the
    window, where the trajectory sits on a lobe.
    """
    if len(events) < 2:
        raise ValueError("need at least 2 events for jump statistics")
    by_index = {rec.meta.get("index"): rec for rec in records}
    edges = np.linspace(-half_width, half_width, bins + 1)
    width = edges[1] - edges[0]
    per_event = np.zeros((len(events), bins))
    for k, ev in enumerate(events):
        rec = by_index.get(ev.trajectory_index)
        if rec is None:
            raise ValueError(f"no record with index {ev.trajectory_index}")
        if channel not in rec.jump_times:
            raise ValueError(f"channel {channel!r} was not logged")
        tau = rec.jump_times[channel]
        counts, _ = np.histogram(tau - ev.t0, bins=edges)
        per_event[k] = counts / width
    mean = per_event.mean(axis=0)
    std = per_event.std(axis=0, ddof=1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    outer = np.abs(centers) > 0.75 * half_width
    baseline = float(mean[outer].mean()) if outer.any() else float("nan")
    return JumpDensityProfile(
        channel=channel,
        centers=centers,
        mean=mean,
        std=std,
        baseline=baseline,
        n_events=len(events),
    )


def ensemble_average(records: list, keys=None) -> tuple[np.ndarray, dict]:
    """Mean and standard error of observables over trajectories."""
    if not records:
        raise ValueError("no records")
    t0 = records[0].times
    for rec in records[1:]:
        if rec.times.size != t0.size or not np.allclose(rec.times, t0):
            raise ValueError("records have mismatched time grids")
    keys = list(keys) if keys is not None else list(records[0].observables)
    out = {}
    n = len(records)
    for key in keys:
        stack = np.stack([rec.observables[key] for rec in records])
        mean = stack.mean(axis=0)
        sem = stack.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
        out[key] = (mean, sem)
    return t0.copy(), out


def phase_plane_overlay(records: list, events: list, pad: float = 0.0) -> list[dict]:
    """Clip each event's transit to arrays suitable for plane plots."""
    by_index = {rec.meta.get("index"): rec for rec in records}
    out = []
    for ev in events:
        rec = by_index.get(ev.trajectory_index)
        if rec is None:
            continue
        t = rec.times
        lo = np.searchsorted(t, ev.t_leave - pad)
        hi = np.searchsorted(t, ev.t_enter + pad, side="right")
        item = {
            "trajectory_index": ev.trajectory_index,
            "direction": ev.direction,
            "times": t[lo:hi].copy(),
            "re_a": rec.observables["re_a"][lo:hi].copy(),
            "im_a": rec.observables["im_a"][lo:hi].copy(),
        }
        if "re_b" in rec.observables:
            item["re_b"] = rec.observables["re_b"][lo:hi].copy()
            item["im_b"] = rec.observables["im_b"][lo:hi].copy()
        out.append(item)
    return out


def write_events_csv(events: list, path, header_extra: dict | None = None) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        for k, v in (header_extra or {}).items():
            fh.write(f"# {k}={v}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["trajectory_index", "direction", "t_leave", "t0", "t_enter", "phase_boundaries"]
        )
        for ev in events:
            phases = ""
            if ev.segments:
                phases = ";".join(
                    f"{seg.label}:{seg.t_start:.9g}:{seg.t_end:.9g}" for seg in ev.segments
                )
            writer.writerow(
                [
                    ev.trajectory_index,
                    ev.direction,
                    f"{ev.t_leave:.9g}",
                    f"{ev.t0:.9g}",
                    f"{ev.t_enter:.9g}",
                    phases,
                ]
            )
