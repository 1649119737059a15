"""Trajectory campaigns: chunked event harvesting at fixed parameters.

A campaign runs many independent trajectory chunks, detects flip
crossings in each, merges crossings separated by less than a merge
window into bursts, and keeps the bursts with a net lobe change as
transition events. Rapid back-and-forth crossings within one burst are
the measurement record resolving a superposition, not separate flips,
so only net transitions count toward the telegraph rate.

Each event stores local extracts (jump times near t0, a decimated
quadrature path) so chunk records can be dropped as soon as they are
harvested; full records are never accumulated.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from ..models import ModelSpec
from ..trajectories import (
    BitFlipEvent,
    JumpDensityProfile,
    StepSizeWarning,
    TrajectoryError,
    UnravelingConfig,
    detect_bitflips,
    run_trajectory,
    segment_phases,
)
from .config import csv_header


@dataclass
class CampaignConfig:
    """Knobs for one harvesting campaign. Times in us, rates rad/us."""

    t_chunk: float = 6000.0
    max_chunks: int = 2000
    target_events: int = 200
    dp_target: float = 0.1
    sample_every: int = 100
    master_seed: int = 12345
    schemes: dict = field(default_factory=dict)
    log_channels: dict | None = None
    jump_log_cap: int = 3_000_000
    merge_window: float = 100.0
    half_width: float = 8.0
    overlay_points: int = 400
    time_budget_s: float = math.inf
    initial_state = None


@dataclass
class CampaignEvent:
    """One net lobe transition, with local extracts for later analysis."""

    event_id: int
    trajectory_index: int
    direction: int
    t_leave: float
    t0: float
    t_enter: float
    n_min: float
    n_crossings: int
    interior: bool
    segments: tuple = ()
    jump_windows: dict = field(default_factory=dict)
    overlay: dict = field(default_factory=dict)


@dataclass
class CampaignResult:
    config: CampaignConfig
    events: list = field(default_factory=list)
    rattle_bursts: int = 0
    raw_crossings: int = 0
    chunks_run: int = 0
    aborted_chunks: list = field(default_factory=list)
    total_time: float = 0.0
    wall_s: float = 0.0
    max_dp_seen: float = 0.0

    @property
    def empirical_rate(self) -> float:
        """Net transitions per unit time (telegraph event rate)."""
        if self.total_time <= 0:
            return math.nan
        return len(self.events) / self.total_time

    def rate_zscore(self, gamma_bf: float) -> float:
        """Poisson z-score of the event count against gamma_bf / 2."""
        expected = 0.5 * gamma_bf * self.total_time
        if expected <= 0:
            return math.inf
        return (len(self.events) - expected) / math.sqrt(expected)


def merge_crossings(events: list, n: np.ndarray, t: np.ndarray,
                    merge_window: float) -> list:
    """Group raw crossings into bursts.

    Returns (burst_events, i_lo, i_hi, k_min) tuples where k_min is the
    sample index of the photon-number minimum over the burst span.
    """
    out = []
    i = 0
    while i < len(events):
        j = i
        while j + 1 < len(events) and events[j + 1].t0 - events[j].t0 < merge_window:
            j += 1
        burst = events[i:j + 1]
        lo = burst[0].i_leave
        hi = burst[-1].i_enter
        k = lo + int(np.argmin(n[lo:hi + 1]))
        out.append((burst, lo, hi, k))
        i = j + 1
    return out


def _decimate(idx_lo: int, idx_hi: int, limit: int) -> np.ndarray:
    span = idx_hi - idx_lo + 1
    if span <= limit:
        return np.arange(idx_lo, idx_hi + 1)
    return np.linspace(idx_lo, idx_hi, limit).round().astype(int)


def run_campaign(model: ModelSpec, config: CampaignConfig,
                 progress=None) -> CampaignResult:
    """Harvest transition events until the target count or a budget stop."""
    result = CampaignResult(config=config)
    logc = config.log_channels
    t_begin = time.time()
    for idx in range(config.max_chunks):
        if len(result.events) >= config.target_events:
            break
        if time.time() - t_begin > config.time_budget_s:
            break
        cfg = UnravelingConfig(
            t_max=config.t_chunk,
            dp_target=config.dp_target,
            sample_every=config.sample_every,
            master_seed=config.master_seed + idx,
            trajectory_count=1,
            schemes=dict(config.schemes),
            log_channels=dict(logc) if logc is not None else None,
            jump_log_cap=config.jump_log_cap,
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", StepSizeWarning)
                rec = run_trajectory(model, cfg,
                                     initial_state=config.initial_state)
        except TrajectoryError as exc:
            result.aborted_chunks.append((idx, str(exc)))
            continue
        rec.meta["index"] = idx
        result.chunks_run += 1
        result.total_time += config.t_chunk
        result.max_dp_seen = max(result.max_dp_seen, rec.max_dp)
        crossings = detect_bitflips(rec)
        result.raw_crossings += len(crossings)
        if not crossings:
            if progress is not None:
                progress(result)
            continue
        n = rec.observables["n_a"]
        t = rec.times
        for burst, lo, hi, k in merge_crossings(crossings, n, t,
                                                config.merge_window):
            if len(burst) % 2 == 0:
                result.rattle_bursts += 1
                continue
            first, last = burst[0], burst[-1]
            t0 = float(t[k])
            interior = (config.half_width <= t0
                        <= config.t_chunk - config.half_width)
            ev = CampaignEvent(
                event_id=len(result.events),
                trajectory_index=idx,
                direction=int(last.direction),
                t_leave=float(first.t_leave),
                t0=t0,
                t_enter=float(last.t_enter),
                n_min=float(n[k]),
                n_crossings=len(burst),
                interior=interior,
            )
            span = BitFlipEvent(
                trajectory_index=idx, direction=int(last.direction),
                t_leave=float(first.t_leave), t0=t0,
                t_enter=float(last.t_enter),
                i_leave=first.i_leave, i0=k, i_enter=last.i_enter)
            ev.segments = tuple(segment_phases(rec, span))
            if interior:
                for label, times in rec.jump_times.items():
                    rel = times - t0
                    keep = np.abs(rel) <= config.half_width
                    ev.jump_windows[label] = rel[keep].copy()
            sel = _decimate(lo, hi, config.overlay_points)
            ev.overlay = {
                "t": t[sel] - t0,
                "re_a": rec.observables["re_a"][sel].copy(),
                "im_a": rec.observables["im_a"][sel].copy(),
                "n_a": n[sel].copy(),
            }
            result.events.append(ev)
        del rec
        if progress is not None:
            progress(result)
    result.wall_s = time.time() - t_begin
    return result


def event_jump_density(events: list, channel: str, half_width: float,
                       bins: int = 40) -> JumpDensityProfile:
    """Per-event mean and spread of a jump channel's rate around t0.

    Only interior events (full window inside their chunk) contribute.
    """
    usable = [ev for ev in events
              if ev.interior and channel in ev.jump_windows]
    if len(usable) < 2:
        raise ValueError("need at least 2 interior events with this channel")
    edges = np.linspace(-half_width, half_width, bins + 1)
    width = edges[1] - edges[0]
    per_event = np.zeros((len(usable), bins))
    for k, ev in enumerate(usable):
        counts, _ = np.histogram(ev.jump_windows[channel], bins=edges)
        per_event[k] = counts / width
    mean = per_event.mean(axis=0)
    std = per_event.std(axis=0, ddof=1)
    centers = 0.5 * (edges[:-1] + edges[1:])
    outer = np.abs(centers) > 0.75 * half_width
    baseline = float(mean[outer].mean()) if outer.any() else math.nan
    return JumpDensityProfile(channel=channel, centers=centers, mean=mean,
                              std=std, baseline=baseline,
                              n_events=len(usable))


def density_at_t0(profile: JumpDensityProfile, span: float = 0.5) -> float:
    """Mean density over the bins within +-span of t0."""
    sel = np.abs(profile.centers) <= span
    return float(profile.mean[sel].mean())


def pre_event_excess(profile: JumpDensityProfile, t_from: float = -4.0,
                     t_to: float = -0.5) -> float:
    """Ratio of the mean density in a pre-t0 window to the baseline."""
    sel = (profile.centers >= t_from) & (profile.centers <= t_to)
    if not sel.any() or profile.baseline <= 0:
        return math.nan
    return float(profile.mean[sel].mean() / profile.baseline)


def write_campaign_events_csv(result: CampaignResult, path, cfg_hash: str,
                              master_seed: int, timestamp=None) -> None:
    cols = ["event_id", "chunk", "direction", "t_leave", "t0", "t_enter",
            "n_min", "n_crossings", "interior", "phase_boundaries"]
    with open(path, "w", newline="") as fh:
        fh.write(csv_header("campaign-events", cfg_hash, master_seed, cols,
                            timestamp=timestamp))
        fh.write(",".join(cols) + "\n")
        for ev in result.events:
            phases = ";".join(f"{s.label}:{s.t_start:.9g}:{s.t_end:.9g}"
                              for s in ev.segments)
            fh.write(",".join([
                str(ev.event_id), str(ev.trajectory_index),
                str(ev.direction), f"{ev.t_leave:.9g}", f"{ev.t0:.9g}",
                f"{ev.t_enter:.9g}", f"{ev.n_min:.9g}",
                str(ev.n_crossings), str(int(ev.interior)), phases,
            ]) + "\n")


def write_density_csv(profiles: list, path, cfg_hash: str, master_seed: int,
                      timestamp=None) -> None:
    cols = ["channel", "t_rel", "mean", "std", "baseline", "n_events"]
    with open(path, "w", newline="") as fh:
        fh.write(csv_header("jump-density", cfg_hash, master_seed, cols,
                            timestamp=timestamp))
        fh.write(",".join(cols) + "\n")
        for prof in profiles:
            for c, mu, sd in zip(prof.centers, prof.mean, prof.std):
                fh.write(f"{prof.channel},{c:.9g},{mu:.9g},{sd:.9g},"
                         f"{prof.baseline:.9g},{prof.n_events}\n")


def write_overlay_csv(result: CampaignResult, path, cfg_hash: str,
                      master_seed: int, timestamp=None) -> None:
    cols = ["event_id", "t_rel", "re_a", "im_a", "n_a"]
    with open(path, "w", newline="") as fh:
        fh.write(csv_header("phase-plane-overlay", cfg_hash, master_seed,
                            cols, timestamp=timestamp))
        fh.write(",".join(cols) + "\n")
        for ev in result.events:
            ov = ev.overlay
            if not ov:
                continue
            for k in range(len(ov["t"])):
                fh.write(f"{ev.event_id},{ov['t'][k]:.9g},"
                         f"{ov['re_a'][k]:.9g},{ov['im_a'][k]:.9g},"
                         f"{ov['n_a'][k]:.9g}\n")
