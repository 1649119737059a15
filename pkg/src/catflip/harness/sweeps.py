"""Sweep orchestration: gap sweeps, bistability scans, device comparison.

Each sweep walks a drive grid, builds the model family at a per-point
cutoff from the coherent-amplitude truncation rule, and reports steady
observables plus the slowest relaxation rate. Solver failures flag the
row and the sweep moves on. Results are plotted against the steady
memory photon number, never the bare drive.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import models
from ..fock import fock_cutoff, lift, number
from ..liouville import bitflip_rate, build_liouvillian, expectation, steady_state
from ..units import MHZ
from .config import SweepConfig

# hard ceilings keeping the shift-invert factorization inside the
# default 2 GB budget; build_liouvillian enforces its own limit too
MAX_SINGLE_CUTOFF = 48
MAX_TWO_MODE_DIM = 256


@dataclass
class SweepRow:
    drive: float
    n_a: float
    n_b: float
    gamma_bf: float
    cutoff_a: int
    cutoff_b: int
    oscillatory: bool = False
    flagged: bool = False
    note: str = ""

    @property
    def t_bf(self) -> float:
        return 1.0 / self.gamma_bf if self.gamma_bf > 0 else math.inf


@dataclass
class SweepResult:
    config: SweepConfig
    rows: list = field(default_factory=list)

    def clean_rows(self) -> list:
        return [r for r in self.rows if not r.flagged]

    def monotone_decreasing(self) -> bool:
        """Strict decrease of the gap along the grid (linear baseline check)."""
        g = [r.gamma_bf for r in self.clean_rows()]
        return all(b < a for a, b in zip(g, g[1:]))


def _rates(params: dict) -> dict:
    out = {}
    for key in ("kappa_a", "kappa_phi", "K_a", "K_b", "chi", "n_th"):
        if key in params:
            out[key] = float(params[key])
    return out


def point_model(cfg: SweepConfig, x: float) -> models.ModelSpec:
    """Model for one grid point, cutoffs from the truncation rule."""
    p = dict(cfg.params)
    rates = _rates(p)
    if cfg.family == "single-mode":
        kappa_2 = float(p.get("kappa_2", 1.0 * MHZ))
        eps_2 = float(x) if cfg.variable == "eps_2" else float(x) * kappa_2
        nbar = eps_2 / kappa_2
        cutoff = min(fock_cutoff(math.sqrt(nbar)), cfg.cutoff_max, MAX_SINGLE_CUTOFF)
        rates.pop("K_b", None)
        rates.pop("chi", None)
        sm = models.SingleModeParams(eps_2=eps_2, kappa_2=kappa_2, **rates)
        return models.build_single_mode(sm, cutoff, gauge=cfg.gauge)
    if cfg.family == "two-mode":
        g2 = complex(p["g2"])
        kappa_b = float(p["kappa_b"])
        kappa_2 = models.adiabatic_map(g2, kappa_b).kappa_2
        nbar = float(x) if cfg.variable == "nbar" else float(x) / kappa_2
        tm = models.two_mode_params_for_nbar(nbar, g2, kappa_b,
                                             gauge=cfg.gauge, **rates)
        cut_b = max(2, int(cfg.buffer_cutoff_max))
        cut_a = min(fock_cutoff(math.sqrt(nbar)), cfg.cutoff_max,
                    MAX_TWO_MODE_DIM // cut_b)
        return models.build_two_mode(tm, (cut_a, cut_b))
    if cfg.family == "effective-operator":
        kappa_2 = float(p.get("kappa_2", 1.0 * MHZ))
        eps_2 = float(x) if cfg.variable == "eps_2" else float(x) * kappa_2
        nbar = eps_2 / kappa_2
        cutoff = min(fock_cutoff(math.sqrt(nbar)), cfg.cutoff_max, MAX_SINGLE_CUTOFF)
        rates.pop("K_b", None)
        chi = rates.pop("chi", 0.0)
        sm = models.SingleModeParams(eps_2=eps_2, kappa_2=kappa_2, **rates)
        return models.build_effective_operator_model(
            sm, cutoff, g2=float(p["g2"]), kappa_b=float(p["kappa_b"]), chi=chi)
    raise ValueError(f"unknown family {cfg.family!r}")


def _observe_point(model: models.ModelSpec, method: str, cache=None):
    liouv = build_liouvillian(model)
    if cache is not None:
        dec = cache.get_or_compute(model, method=method)
        bf = bitflip_rate(dec)
        rho = dec.steady_density()
    else:
        bf = bitflip_rate(liouv, method=method)
        rho = steady_state(liouv, method=method).rho
    dims = model.space.mode_dims
    n_a = expectation(rho, lift(number(dims[0]), model.space, 0)).real
    n_b = math.nan
    if len(dims) > 1:
        n_b = expectation(rho, lift(number(dims[1]), model.space, 1)).real
    return n_a, n_b, bf


def gap_sweep(cfg: SweepConfig, cache=None, progress=None) -> SweepResult:
    """Steady observables and bit-flip gap across the drive grid."""
    result = SweepResult(config=cfg)
    for x in cfg.grid:
        model = point_model(cfg, x)
        dims = model.space.mode_dims
        cut_a, cut_b = dims[0], (dims[1] if len(dims) > 1 else 0)
        try:
            n_a, n_b, bf = _observe_point(model, cfg.method, cache)
            row = SweepRow(drive=float(x), n_a=n_a, n_b=n_b,
                           gamma_bf=bf.rate, cutoff_a=cut_a, cutoff_b=cut_b,
                           oscillatory=bf.oscillatory)
        except Exception as exc:
            row = SweepRow(drive=float(x), n_a=math.nan, n_b=math.nan,
                           gamma_bf=math.nan, cutoff_a=cut_a, cutoff_b=cut_b,
                           flagged=True, note=f"{type(exc).__name__}: {exc}")
        result.rows.append(row)
        if progress is not None:
            progress(row)
    return result


def loglinear_fit(rows: list, n_min: float = -math.inf,
                  n_max: float = math.inf) -> tuple[float, float, float]:
    """Least-squares fit of ln(gamma_bf) vs n_a. Returns (slope, intercept, r2)."""
    pts = [(r.n_a, r.gamma_bf) for r in rows
           if not r.flagged and n_min <= r.n_a <= n_max and r.gamma_bf > 0]
    if len(pts) < 3:
        raise ValueError("need at least 3 clean points for a fit")
    x = np.array([p[0] for p in pts])
    y = np.log(np.array([p[1] for p in pts]))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), float(r2)


def last_ratio(rows: list) -> float:
    """gamma_bf ratio of the last two clean grid points (flattening probe)."""
    clean = [r for r in rows if not r.flagged and r.gamma_bf > 0]
    if len(clean) < 2:
        raise ValueError("need at least 2 clean points")
    return clean[-1].gamma_bf / clean[-2].gamma_bf


def saturation_onset(rows: list, factor: float = 0.7) -> float:
    """First steady n_a where suppression stalls.

    Walks consecutive clean points; the onset is the n_a at which the
    gap stopped shrinking by at least `factor` per step. Returns +inf
    when suppression continues through the whole grid.
    """
    clean = [r for r in rows if not r.flagged and r.gamma_bf > 0]
    for a, b in zip(clean, clean[1:]):
        if b.gamma_bf > factor * a.gamma_bf:
            return a.n_a
    return math.inf


@dataclass
class BistabilityRow:
    drive: float
    n_a: float
    n_b: float
    cutoff_a: int
    cutoff_b: int
    flagged: bool = False
    note: str = ""


@dataclass
class BistabilityResult:
    config: SweepConfig
    rows: list = field(default_factory=list)
    jump_index: int | None = None

    @property
    def jump_detected(self) -> bool:
        return self.jump_index is not None


def detect_jump(xs: np.ndarray, ys: np.ndarray, factor: float = 4.0):
    """Index of an abrupt slope increase in ys(xs), None when smooth."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 4:
        return None
    slopes = np.diff(ys) / np.diff(xs)
    for i in range(1, slopes.size):
        past = np.abs(slopes[:i])
        ref = max(float(np.median(past)), 1e-12 * max(float(np.abs(ys).max()), 1.0))
        if abs(slopes[i]) > factor * ref and abs(slopes[i]) > abs(slopes[i - 1]):
            return i
    return None


def bistability_sweep(cfg: SweepConfig, jump_factor: float = 4.0) -> BistabilityResult:
    """Steady photon numbers vs drive in a Kerr-tilted regime.

    Requires a positive memory Kerr (theta > 0); the returned result
    carries the index of the first abrupt slope change in the steady
    occupations, if any.
    """
    if float(cfg.params.get("K_a", 0.0)) <= 0:
        raise ValueError("bistability scan needs K_a > 0 (theta > 0)")
    result = BistabilityResult(config=cfg)
    for x in cfg.grid:
        model = point_model(cfg, x)
        dims = model.space.mode_dims
        cut_a, cut_b = dims[0], (dims[1] if len(dims) > 1 else 0)
        try:
            liouv = build_liouvillian(model)
            rho = steady_state(liouv, method=cfg.method).rho
            n_a = expectation(rho, lift(number(dims[0]), model.space, 0)).real
            n_b = math.nan
            if len(dims) > 1:
                n_b = expectation(rho, lift(number(dims[1]), model.space, 1)).real
            result.rows.append(BistabilityRow(
                drive=float(x), n_a=n_a, n_b=n_b, cutoff_a=cut_a, cutoff_b=cut_b))
        except Exception as exc:
            result.rows.append(BistabilityRow(
                drive=float(x), n_a=math.nan, n_b=math.nan,
                cutoff_a=cut_a, cutoff_b=cut_b,
                flagged=True, note=f"{type(exc).__name__}: {exc}"))
    clean = [r for r in result.rows if not r.flagged]
    if len(clean) >= 4:
        xs = np.array([r.drive for r in clean])
        key = "n_b" if np.isfinite(clean[0].n_b) else "n_a"
        ys = np.array([getattr(r, key) for r in clean])
        result.jump_index = detect_jump(xs, ys, factor=jump_factor)
    return result


def experiment_compare(base_params: dict, grid, chis, cutoff_max: int = 40,
                       buffer_cutoff_max: int = 4, gauge: str = "imag",
                       method: str = "auto", cache=None) -> dict:
    """Single-mode stack vs two-mode models at each cross-Kerr value.

    `base_params` carries the device rates (g2, kappa_b, kappa_a,
    kappa_phi, n_th, K_a, K_b) in rad/us; `grid` is the target photon
    number ladder. Returns {label: SweepResult} with T_bf = 1/gamma_bf
    derivable per row.
    """
    g2 = complex(base_params["g2"])
    kappa_b = float(base_params["kappa_b"])
    kappa_2 = models.adiabatic_map(g2, kappa_b).kappa_2
    single_params = {k: v for k, v in base_params.items()
                     if k in ("kappa_a", "kappa_phi", "K_a", "n_th")}
    single_params["kappa_2"] = kappa_2
    out = {}
    cfg_single = SweepConfig(family="single-mode", params=single_params,
                             variable="nbar", grid=tuple(grid),
                             cutoff_max=cutoff_max, gauge=gauge, method=method)
    out["single_mode"] = gap_sweep(cfg_single, cache=cache)
    for chi in chis:
        two_params = dict(base_params)
        two_params["chi"] = float(chi)
        cfg_two = SweepConfig(family="two-mode", params=two_params,
                              variable="nbar", grid=tuple(grid),
                              cutoff_max=cutoff_max,
                              buffer_cutoff_max=buffer_cutoff_max,
                              gauge=gauge, method=method)
        out[f"two_mode_chi_{chi / MHZ:g}MHz"] = gap_sweep(cfg_two, cache=cache)
    return out
