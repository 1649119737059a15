"""Command line interface.

Subcommands: gap-sweep, bistability, trajectories, semiclassical, ssqt,
experiment, cache. Global flags: --config PATH, --seed N, --out DIR,
--threads N.

Config files are JSON. Rate-like entries (kappas, Kerrs, drives, g2)
are given as linear frequencies in MHz, i.e. the value of rate/2pi as
quoted in hardware papers, and are converted to angular rad/us
internally. Photon numbers, seeds, cutoffs, and times (us) are used
as written.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .. import liouville, models, semiclassical, ssqt, trajectories
from ..units import MHZ
from . import campaign as camp
from . import sweeps
from .cache import SpectralCache
from .config import RunManifest, SweepConfig, config_hash, csv_header

RATE_KEYS = ("eps_2", "kappa_2", "kappa_a", "kappa_phi",
             "K_a", "K_b", "chi", "g2", "kappa_b")


def _to_angular(params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if k in RATE_KEYS:
            if isinstance(v, dict):
                out[k] = complex(v["re"], v["im"]) * MHZ
            else:
                out[k] = float(v) * MHZ
        else:
            out[k] = v
    return out


def _load_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _sweep_config(doc: dict, args) -> SweepConfig:
    params = _to_angular(doc.get("params", {}))
    grid = doc.get("grid", ())
    if doc.get("variable", "nbar") == "eps_2":
        grid = [float(x) * MHZ for x in grid]
    kwargs = {k: doc[k] for k in ("family", "variable", "cutoff_max",
                                  "buffer_cutoff_max", "gauge", "method",
                                  "memory_budget_mb") if k in doc}
    return SweepConfig(params=params, grid=tuple(grid), **kwargs)


def _model_from_config(doc: dict):
    family = doc.get("family", "single-mode")
    params = _to_angular(doc.get("params", {}))
    gauge = doc.get("gauge", "imag")
    if family == "single-mode":
        cutoff = int(doc.get("cutoff", 0))
        sm = models.SingleModeParams(**params)
        if cutoff <= 0:
            from ..fock import fock_cutoff
            cutoff = fock_cutoff(math.sqrt(sm.eps_2 / sm.kappa_2))
        return models.build_single_mode(sm, cutoff, gauge=gauge)
    if family == "two-mode":
        cutoffs = tuple(doc.get("cutoffs", (14, 4)))
        if "nbar" in doc:
            tm = models.two_mode_params_for_nbar(
                float(doc["nbar"]), params.pop("g2"), params.pop("kappa_b"),
                gauge=gauge, **params)
        else:
            tm = models.TwoModeParams(**params)
        return models.build_two_mode(tm, cutoffs)
    raise SystemExit(f"unsupported model family {family!r}")


def _parse_schemes(doc: dict) -> dict:
    out = {}
    for label, scheme in (doc or {}).items():
        if scheme == "counting":
            out[label] = "counting"
        else:
            kind, beta = scheme
            if isinstance(beta, dict):
                beta = complex(beta["re"], beta["im"])
            out[label] = (kind, complex(beta))
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path, kind, cfg_hash, seed, columns, rows, run_ts):
    with open(path, "w", newline="") as fh:
        fh.write(csv_header(kind, cfg_hash, seed, columns, timestamp=run_ts))
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _sweep_rows(result) -> list:
    rows = []
    for r in result.rows:
        rows.append([_fmt(v) for v in (
            r.drive, r.n_a, r.n_b, r.gamma_bf, r.t_bf, r.cutoff_a,
            r.cutoff_b, int(r.oscillatory), int(r.flagged))] + [r.note])
    return rows


SWEEP_COLUMNS = ["drive", "n_a", "n_b", "gamma_bf", "t_bf",
                 "cutoff_a", "cutoff_b", "oscillatory", "flagged", "note"]


def cmd_gap_sweep(args) -> int:
    doc = _load_json(args.config)
    cfg = _sweep_config(doc, args)
    h = cfg.hash()
    seed = args.seed if args.seed is not None else 0
    cache = SpectralCache(doc["cache_dir"]) if "cache_dir" in doc else None
    run_ts = time.time()
    result = sweeps.gap_sweep(cfg, cache=cache)
    out = _out_dir(args)
    path = out / "gap_sweep.csv"
    _write_rows(path, "gap-sweep", h, seed, SWEEP_COLUMNS,
                _sweep_rows(result), run_ts)
    manifest = RunManifest.new(h, seed)
    manifest.add("gap_sweep", path)
    manifest.write(out / "gap_sweep_manifest.json")
    clean = result.clean_rows()
    print(f"gap-sweep: {len(clean)}/{len(result.rows)} points clean, "
          f"monotone={result.monotone_decreasing()}")
    for r in result.rows:
        if r.flagged:
            print(f"  flagged drive={r.drive:g}: {r.note}")
    print(f"wrote {path}")
    return 0


def cmd_bistability(args) -> int:
    doc = _load_json(args.config)
    cfg = _sweep_config(doc, args)
    h = cfg.hash()
    seed = args.seed if args.seed is not None else 0
    run_ts = time.time()
    result = sweeps.bistability_sweep(cfg, jump_factor=doc.get("jump_factor", 4.0))
    out = _out_dir(args)
    path = out / "bistability.csv"
    cols = ["drive", "n_a", "n_b", "cutoff_a", "cutoff_b", "flagged", "note"]
    rows = [[_fmt(v) for v in (r.drive, r.n_a, r.n_b, r.cutoff_a,
                               r.cutoff_b, int(r.flagged))] + [r.note]
            for r in result.rows]
    _write_rows(path, "bistability", h, seed, cols, rows, run_ts)
    manifest = RunManifest.new(h, seed)
    manifest.add("bistability", path)
    manifest.write(out / "bistability_manifest.json")
    if result.jump_detected:
        row = result.rows[result.jump_index + 1]
        print(f"bistability: jump detected near drive={row.drive:g}")
    else:
        print("bistability: no jump detected")
    print(f"wrote {path}")
    return 0


def cmd_trajectories(args) -> int:
    doc = _load_json(args.config)
    model = _model_from_config(doc.get("model", doc))
    cdoc = doc.get("campaign", {})
    seed = args.seed if args.seed is not None else int(cdoc.get("master_seed", 12345))
    cfg = camp.CampaignConfig(
        t_chunk=float(cdoc.get("t_chunk", 6000.0)),
        max_chunks=int(cdoc.get("max_chunks", 2000)),
        target_events=int(cdoc.get("target_events", 200)),
        dp_target=float(cdoc.get("dp_target", 0.1)),
        sample_every=int(cdoc.get("sample_every", 100)),
        master_seed=seed,
        schemes=_parse_schemes(cdoc.get("schemes", {})),
        log_channels=cdoc.get("log_channels"),
        jump_log_cap=int(cdoc.get("jump_log_cap", 3_000_000)),
        merge_window=float(cdoc.get("merge_window", 100.0)),
        half_width=float(cdoc.get("half_width", 8.0)),
        time_budget_s=float(cdoc.get("time_budget_s", math.inf)),
    )
    h = config_hash({"model": doc.get("model", doc), "campaign": cdoc,
                     "seed": seed})
    run_ts = time.time()
    result = camp.run_campaign(model, cfg)
    out = _out_dir(args)
    paths = {}
    paths["events"] = out / "events.csv"
    camp.write_campaign_events_csv(result, paths["events"], h, seed,
                                   timestamp=run_ts)
    logged = sorted({lbl for ev in result.events for lbl in ev.jump_windows})
    profiles = []
    for ch in logged:
        try:
            profiles.append(camp.event_jump_density(
                result.events, ch, cfg.half_width))
        except ValueError:
            pass
    if profiles:
        paths["density"] = out / "jump_density.csv"
        camp.write_density_csv(profiles, paths["density"], h, seed,
                               timestamp=run_ts)
    paths["overlay"] = out / "overlay.csv"
    camp.write_overlay_csv(result, paths["overlay"], h, seed, timestamp=run_ts)
    manifest = RunManifest.new(h, seed)
    for name, p in paths.items():
        manifest.add(name, p)
    manifest.write(out / "campaign_manifest.json")
    print(f"campaign: {len(result.events)} transitions "
          f"({result.raw_crossings} raw crossings, "
          f"{result.rattle_bursts} rattle bursts) over "
          f"{result.total_time:.0f} us in {result.wall_s:.0f} s")
    if result.aborted_chunks:
        print(f"  {len(result.aborted_chunks)} chunks aborted")
    if doc.get("compare_rate"):
        bf = liouville.bitflip_rate(liouville.build_liouvillian(model))
        print(f"  empirical rate {result.empirical_rate:.3e} vs "
              f"gamma_bf/2 {bf.rate / 2:.3e} "
              f"(z={result.rate_zscore(bf.rate):+.2f})")
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def cmd_semiclassical(args) -> int:
    doc = _load_json(args.config)
    params = _to_angular(doc.get("params", {}))
    gauge = doc.get("gauge", "real")
    if "nbar" in doc:
        p = models.two_mode_params_for_nbar(
            float(doc["nbar"]), params.pop("g2"), params.pop("kappa_b"),
            gauge=gauge, **params)
    else:
        p = models.TwoModeParams(**params)
    h = config_hash(doc)
    seed = args.seed if args.seed is not None else 0
    run_ts = time.time()
    out = _out_dir(args)
    fp = semiclassical.fixed_points(p)
    print(f"fixed points: x_a={fp.x_a_st:.6g} y_b={fp.y_b_st:.6g} "
          f"saddle_y_b={fp.saddle_y_b:.6g} exists={fp.exists}")
    t_max = float(doc.get("t_max", 100.0 / p.kappa_b))
    n_samples = int(doc.get("samples", 2001))
    init = doc.get("initial")
    if init is None:
        state0 = fp.stable_points[0]
    else:
        state0 = semiclassical.SemiclassicalState(*(float(v) for v in init))
    flow = semiclassical.integrate(state0, p, (0.0, t_max),
                                   t_eval=np.linspace(0.0, t_max, n_samples))
    path = out / "flow.csv"
    cols = ["t", "x_a", "y_a", "x_b", "y_b"]
    rows = [[_fmt(flow.times[i])] + [_fmt(v) for v in flow.states[i]]
            for i in range(flow.times.size)]
    _write_rows(path, "semiclassical-flow", h, seed, cols, rows, run_ts)
    grid = doc.get("nbar_grid", [1, 2, 3, 4, 5, 6, 7, 8])
    spath = out / "stability.csv"
    scols = ["nbar", "x_a_st", "y_b_st", "gap", "unstable_here",
             "plane_unstable", "locked_raw", "locked", "adiabatic"]
    srows = []
    for nb in grid:
        pn = models.two_mode_params_for_nbar(
            float(nb), p.g2, p.kappa_b, gauge=gauge,
            kappa_a=p.kappa_a, kappa_phi=p.kappa_phi,
            K_a=p.K_a, K_b=p.K_b, chi=p.chi, n_th=p.n_th)
        fpn = semiclassical.fixed_points(pn)
        stab = semiclassical.transverse_jacobian(fpn.x_a_st, fpn.y_b_st, pn)
        lock = semiclassical.locking_conditions(pn)
        adia = semiclassical.adiabaticity_check(pn, complex(fpn.x_a_st, 0.0))
        srows.append([_fmt(v) for v in (
            float(nb), fpn.x_a_st, fpn.y_b_st, stab.gap,
            int(stab.unstable_here), int(stab.plane_unstable),
            int(lock.satisfied_raw), int(lock.satisfied),
            int(adia.satisfied))])
    _write_rows(spath, "semiclassical-stability", h, seed, scols, srows, run_ts)
    manifest = RunManifest.new(h, seed)
    manifest.add("flow", path)
    manifest.add("stability", spath)
    manifest.write(out / "semiclassical_manifest.json")
    print(f"wrote {path}")
    print(f"wrote {spath}")
    return 0


def cmd_ssqt(args) -> int:
    doc = _load_json(args.config)
    model = _model_from_config(doc.get("model", doc))
    tdoc = doc.get("trajectory", {})
    seed = args.seed if args.seed is not None else int(tdoc.get("master_seed", 12345))
    cfg = trajectories.UnravelingConfig(
        t_max=float(tdoc.get("t_max", 50.0)),
        dp_target=float(tdoc.get("dp_target", 0.05)),
        sample_every=int(tdoc.get("sample_every", 50)),
        snapshot_every=int(tdoc.get("snapshot_every", 10)),
        master_seed=seed,
        schemes=_parse_schemes(tdoc.get("schemes", {})),
    )
    h = config_hash({"model": doc.get("model", doc), "trajectory": tdoc,
                     "seed": seed})
    run_ts = time.time()
    rec = trajectories.run_trajectory(model, cfg)
    ddoc = doc.get("decomp", {})
    cache = SpectralCache(doc["cache_dir"]) if "cache_dir" in doc else None
    if cache is not None:
        decomp = cache.get_or_compute(model, count=ddoc.get("count"),
                                      method=ddoc.get("method", "auto"))
    else:
        liouv = liouville.build_liouvillian(model)
        decomp = liouville.spectrum(liouv, count=ddoc.get("count"),
                                    method=ddoc.get("method", "auto"))
    timeline = ssqt.activation_timeline(rec, decomp, k=int(doc.get("k", 2)))
    out = _out_dir(args)
    tpath = out / "ssqt_timeline.csv"
    cols = ["snapshot_time", "phase_label", "activated_count", "c_min"]
    rows = []
    for i, t in enumerate(timeline.times):
        c = timeline.coefficients[i]
        nonzero = np.abs(c[np.abs(c) > 0])
        c_min = float(nonzero.min()) if nonzero.size else 0.0
        rows.append([_fmt(float(t)), timeline.labels[i],
                     str(timeline.reports[i].count), _fmt(c_min)])
    _write_rows(tpath, "ssqt-timeline", h, seed, cols, rows, run_ts)
    mpath = out / "ssqt_modes.csv"
    mcols = ["snapshot_time", "j", "re_lambda", "im_lambda",
             "abs_c", "abs_p", "activated"]
    mrows = []
    for i, t in enumerate(timeline.times):
        c = timeline.coefficients[i]
        p = c * timeline.d_coefficients[i]
        act = set(timeline.reports[i].activated)
        for j in range(c.size):
            mrows.append([_fmt(float(t)), str(j),
                          _fmt(float(decomp.eigenvalues[j].real)),
                          _fmt(float(decomp.eigenvalues[j].imag)),
                          _fmt(float(abs(c[j]))), _fmt(float(abs(p[j]))),
                          str(int(j in act))])
    _write_rows(mpath, "ssqt-modes", h, seed, mcols, mrows, run_ts)
    epath = out / "ssqt_eigenmodes.csv"
    ecols = ["j", "re_lambda", "im_lambda", "trace_plus", "trace_minus",
             "entropy_plus"]
    erows = []
    for j in range(decomp.count):
        split = ssqt.eigenstate_split(decomp.etas[j], space=model.space)
        s_plus = (ssqt.eigenstate_entropy(split.rho_plus)
                  if split.rho_plus is not None else math.nan)
        erows.append([_fmt(v) for v in (
            j, float(decomp.eigenvalues[j].real),
            float(decomp.eigenvalues[j].imag),
            split.trace_plus, split.trace_minus, s_plus)])
    _write_rows(epath, "ssqt-eigenmodes", h, seed, ecols, erows, run_ts)
    manifest = RunManifest.new(h, seed)
    manifest.add("timeline", tpath)
    manifest.add("modes", mpath)
    manifest.add("eigenmodes", epath)
    manifest.write(out / "ssqt_manifest.json")
    counts = [r.count for r in timeline.reports]
    print(f"ssqt: {len(timeline.times)} snapshots, activated count "
          f"min={min(counts)} max={max(counts)}")
    for p in (tpath, mpath, epath):
        print(f"wrote {p}")
    return 0


DEVICE_PRESET = {
    "g2": 0.763, "kappa_b": 2.6, "kappa_a": 9.3e-3,
    "kappa_phi": 1e-3, "K_a": 0.0, "K_b": 3.3, "n_th": 0.1,
}


def cmd_experiment(args) -> int:
    doc = _load_json(args.config) if args.config else {}
    base = dict(DEVICE_PRESET)
    base.update(doc.get("params", {}))
    base_ang = _to_angular(base)
    chis = [float(c) * MHZ for c in doc.get("chis", (0.0, 0.15, 0.3))]
    grid = tuple(float(x) for x in doc.get("grid", (1, 2, 3, 4, 5, 6)))
    seed = args.seed if args.seed is not None else 0
    h = config_hash({"params": base, "chis": doc.get("chis", (0.0, 0.15, 0.3)),
                     "grid": grid})
    cache = SpectralCache(doc["cache_dir"]) if "cache_dir" in doc else None
    run_ts = time.time()
    stack = sweeps.experiment_compare(
        base_ang, grid, chis,
        cutoff_max=int(doc.get("cutoff_max", 40)),
        buffer_cutoff_max=int(doc.get("buffer_cutoff_max", 4)),
        method=doc.get("method", "auto"), cache=cache)
    out = _out_dir(args)
    path = out / "experiment.csv"
    cols = ["label"] + SWEEP_COLUMNS
    rows = []
    for label, result in stack.items():
        for row in _sweep_rows(result):
            rows.append([label] + row)
    _write_rows(path, "experiment-compare", h, seed, cols, rows, run_ts)
    manifest = RunManifest.new(h, seed)
    manifest.add("experiment", path)
    manifest.write(out / "experiment_manifest.json")
    for label, result in stack.items():
        onset = sweeps.saturation_onset(result.rows)
        clean = result.clean_rows()
        tail = clean[-1].t_bf if clean else math.nan
        print(f"{label}: T_bf(last)={tail:.3e} us, onset n={onset:g}")
    print(f"wrote {path}")
    return 0


def cmd_cache(args) -> int:
    cache = SpectralCache(args.dir)
    if args.action == "list":
        entries = cache.entries()
        for name in entries:
            print(name)
        print(f"{len(entries)} entries in {cache.directory}")
    else:
        n = cache.clear()
        print(f"removed {n} entries from {cache.directory}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="catflip",
        description="Cat-qubit bit-flip analysis: sweeps, trajectories, "
                    "semiclassics, and trajectory spectral statistics.")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, default=None,
                        help="master seed override")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker thread cap")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gap-sweep", help="steady observables and bit-flip gap "
                                     "across a drive grid")
    sub.add_parser("bistability", help="steady photon numbers vs drive with "
                                       "jump detection")
    sub.add_parser("trajectories", help="harvest bit-flip events from "
                                        "trajectory chunks")
    sub.add_parser("semiclassical", help="fixed points, stability grid, and "
                                         "one integrated flow")
    sub.add_parser("ssqt", help="spectral activation along one trajectory")
    sub.add_parser("experiment", help="device comparison stack (single-mode "
                                      "vs two-mode at several cross-Kerr values)")
    pc = sub.add_parser("cache", help="inspect or clear the spectral cache")
    pc.add_argument("action", choices=("list", "clear"))
    pc.add_argument("--dir", default="out/cache")
    return parser


HANDLERS = {
    "gap-sweep": cmd_gap_sweep,
    "bistability": cmd_bistability,
    "trajectories": cmd_trajectories,
    "semiclassical": cmd_semiclassical,
    "ssqt": cmd_ssqt,
    "experiment": cmd_experiment,
    "cache": cmd_cache,
}

NEEDS_CONFIG = ("gap-sweep", "bistability", "trajectories", "semiclassical",
                "ssqt")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads > 0:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
        os.environ.setdefault("MKL_NUM_THREADS", str(args.threads))
        try:
            import numba
            numba.set_num_threads(args.threads)
        except (ImportError, ValueError):
            pass
    if args.command in NEEDS_CONFIG and not args.config:
        print(f"{args.command} requires --config", file=sys.stderr)
        return 2
    return HANDLERS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
