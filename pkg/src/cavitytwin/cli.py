"""Command-line entry points: tables, simulate, analyze, sweep, calibrate.

Every command validates the JSON config against the schema before any
computation; all randomness derives from the single master seed via the
documented (seed, stage, index) scheme.  Exit codes: 0 success,
1 validation error, 2 runtime failure, 3 partial failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dsp import (DetectionConfig, EventTooShortError, detect_transits,
                  estimate_lo_phase, phasor_noise_sigma, phasor_points,
                  rotate_quadratures, sensitivity_report, discriminate,
                  theory_curves)
from .heterodyne import (DriftModel, calibrate_photon_number,
                         imbalance_efficiency, lo_excess_noise_fit, load_trace,
                         measure_windowed_snr, save_trace, synthesize)
from .manifest import run_timestamp, write_manifest
from .params import MHZ, ParamsError, PhysicalParams, params_hash
from .plots import plot_phasor, plot_sweep, plot_tables, plot_timeseries
from .tables import (TableBuildError, TableHashError, build_tables, load_tables,
                     save_tables, tables_to_csv)
from .transit import (STAGE_TRACE, TransitConfig, derive_seed, run_ensemble,
                      trajectory_to_ndjson)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_PARTIAL = 3

CONFIG_SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


_SECTION_DEFAULTS = {
    "tables": {"n_grid": 201, "n_fock": None, "deltas": None},
    "transit": {"dt": 7.5e-9, "duration": 1.2e-3, "n_atoms": 20,
                "z0_waists": 7.0, "vz0": -0.47, "x0_range": None,
                "y0_range": None, "vx0_range": [-0.03, 0.03],
                "vy0_range": [-0.03, 0.03], "decimation": 10,
                "recoil_mode": "per_axis", "exit_waists": 8.0,
                "noise": True, "gravity": True},
    "heterodyne": {"sample_rate": 1e7, "analog_bandwidth": 3e5, "bit_depth": 12,
                   "full_scale_amplitudes": 6.0, "pre_pad": 3e-3,
                   "post_pad": 0.5e-3, "drift_rms": 0.02, "drift_window": 2e-3,
                   "drift": True, "noise": True},
    "detection": {"threshold_sigma": 5.0, "edge_sigma": 3.0,
                  "min_duration": 50e-6, "smooth_window": 10e-6,
                  "baseline_window": 2e-3, "phasor_period": 10e-6,
                  "phasor_cutoff": 5e4, "max_overlay": 3},
    "theory": {"n_g": 41, "n_fock": None, "branch": "adiabatic",
               "dispersive_form": "printed"},
    "sweep": {"deltas": [0.0, 10.0, 30.0, 50.0], "m_values": [1.5],
              "n_atoms": 8, "n_grid": 65, "n_g": 21},
}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    return validate_config(cfg)


def validate_config(cfg: dict) -> dict:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if "schema_version" not in cfg:
        raise ConfigError("missing config key: schema_version")
    if cfg["schema_version"] != CONFIG_SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {cfg['schema_version']!r} "
                          f"(expected {CONFIG_SCHEMA_VERSION})")
    if "seed" not in cfg:
        raise ConfigError("missing config key: seed")
    if not isinstance(cfg["seed"], int):
        raise ConfigError("config key seed must be an integer")
    if "params" not in cfg:
        raise ConfigError("missing config key: params")
    try:
        PhysicalParams.from_config(cfg["params"])
    except ParamsError as exc:
        raise ConfigError(f"params: {exc}")

    known = {"schema_version", "seed", "params", *_SECTION_DEFAULTS}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")

    out = dict(cfg)
    for name, defaults in _SECTION_DEFAULTS.items():
        section = dict(defaults)
        user = cfg.get(name, {})
        if not isinstance(user, dict):
            raise ConfigError(f"config section {name} must be an object")
        bad = set(user) - set(defaults)
        if bad:
            raise ConfigError(f"unknown config key(s) in {name}: "
                              f"{', '.join(sorted(bad))}")
        section.update(user)
        out[name] = section

    # construct the derived objects now so value errors surface as
    # validation failures, before any computation starts
    try:
        _transit_config(out, out["seed"])
        _detection_config(out)
        _drift_model(out)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc))
    t = out["tables"]
    if t["n_grid"] < 33:
        raise ConfigError("tables.n_grid must be >= 33")
    th = out["theory"]
    if th["n_g"] < 17:
        raise ConfigError("theory.n_g must be >= 17")
    if th["dispersive_form"] not in ("printed", "conventional"):
        raise ConfigError(f"unknown theory.dispersive_form {th['dispersive_form']!r}")
    if th["branch"] not in ("adiabatic", "lowest", "highest"):
        raise ConfigError(f"unknown theory.branch {th['branch']!r}")
    h = out["heterodyne"]
    if h["sample_rate"] <= 2 * h["analog_bandwidth"]:
        raise ConfigError("heterodyne.sample_rate must exceed twice the analog bandwidth")
    return out


def config_hash(cfg: dict) -> str:
    import hashlib
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _params(cfg: dict) -> PhysicalParams:
    return PhysicalParams.from_config(cfg["params"])


def _transit_config(cfg: dict, seed: int) -> TransitConfig:
    t = cfg["transit"]
    as_range = lambda v: None if v is None else (float(v[0]), float(v[1]))
    return TransitConfig(
        dt=t["dt"], duration=t["duration"], z0_waists=t["z0_waists"],
        vz0=t["vz0"], x0_range=as_range(t["x0_range"]),
        y0_range=as_range(t["y0_range"]), vx0_range=as_range(t["vx0_range"]),
        vy0_range=as_range(t["vy0_range"]), decimation=t["decimation"],
        seed=seed, recoil_mode=t["recoil_mode"], exit_waists=t["exit_waists"],
        noise=t["noise"], gravity=t["gravity"])


def _detection_config(cfg: dict) -> DetectionConfig:
    d = cfg["detection"]
    return DetectionConfig(
        threshold_sigma=d["threshold_sigma"], edge_sigma=d["edge_sigma"],
        min_duration=d["min_duration"], smooth_window=d["smooth_window"],
        baseline_window=d["baseline_window"])


def _drift_model(cfg: dict) -> DriftModel:
    h = cfg["heterodyne"]
    return DriftModel(rms=h["drift_rms"], window=h["drift_window"],
                      enabled=h["drift"])


def _resolve_run_dir(out: str | None, cfg: dict, force: bool) -> Path:
    if out is not None:
        run_dir = Path(out)
    else:
        run_dir = Path("runs") / f"{run_timestamp()}-{config_hash(cfg)[:8]}"
    if (run_dir / "manifest.json").exists() and not force:
        raise ConfigError(f"{run_dir} already holds a run; pass --force to overwrite")
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


# -- commands -------------------------------------------------------------------


def cmd_tables(cfg: dict, out, force: bool, threads: int) -> int:
    p = _params(cfg)
    run_dir = _resolve_run_dir(out, cfg, force)
    tcfg = cfg["tables"]
    deltas = tcfg["deltas"]
    if deltas is None:
        deltas = [p.delta_ap / MHZ]
    files = []
    for delta_mhz in deltas:
        p_d = p.replace(delta_ap=float(delta_mhz) * MHZ)
        tab = build_tables(p_d, n_grid=tcfg["n_grid"], n_fock=tcfg["n_fock"],
                           workers=threads)
        stem = f"tables_delta{delta_mhz:g}MHz"
        tbl = run_dir / f"{stem}.tbl"
        if tbl.exists() and not force:
            raise ConfigError(f"{tbl} exists; pass --force to overwrite")
        save_tables(tab, tbl)
        tables_to_csv(tab, run_dir / f"{stem}.csv")
        plot_tables(tab, run_dir / f"{stem}.png")
        files += [tbl, run_dir / f"{stem}.csv", run_dir / f"{stem}.png"]
        print(f"tables: delta = {delta_mhz:g} MHz -> {tbl}")
    write_manifest(run_dir, cfg, cfg["seed"], params_hash(p), files)
    print(f"manifest: {run_dir / 'manifest.json'}")
    return EXIT_OK


def cmd_simulate(cfg: dict, tables_path, out, force: bool, threads: int) -> int:
    p = _params(cfg)
    tab = load_tables(tables_path, p)  # refuses a hash mismatch
    run_dir = _resolve_run_dir(out, cfg, force)
    seed = cfg["seed"]
    n = cfg["transit"]["n_atoms"]
    h = cfg["heterodyne"]
    tconf = _transit_config(cfg, seed)
    ens = run_ensemble(n, tconf, tab, p, workers=threads)
    files = []
    n_ok = 0
    for i, traj in enumerate(ens.trajectories):
        if traj is None:
            continue
        traj_path = run_dir / f"traj_{i:03d}.ndjson"
        with open(traj_path, "w") as fh:
            trajectory_to_ndjson(traj, fh)
        trace = synthesize(traj.t, traj.field, p, _drift_model(cfg),
                           seed=derive_seed(seed, STAGE_TRACE, i),
                           sample_rate=h["sample_rate"],
                           analog_bandwidth=h["analog_bandwidth"],
                           bit_depth=h["bit_depth"],
                           full_scale_amplitudes=h["full_scale_amplitudes"],
                           noise=h["noise"], pre_pad=h["pre_pad"],
                           post_pad=h["post_pad"])
        trace_path = run_dir / f"trace_{i:03d}.qtr"
        save_trace(trace, trace_path)
        files += [traj_path, trace_path]
        n_ok += 1
    write_manifest(run_dir, cfg, seed, params_hash(p), files,
                   extra={"failures": [{"index": i, "error": msg}
                                       for i, msg in ens.failures]})
    print(f"simulate: {n_ok}/{n} trajectories -> {run_dir}")
    if n_ok == 0:
        return EXIT_RUNTIME
    return EXIT_PARTIAL if ens.failures else EXIT_OK


def cmd_analyze(cfg: dict, trace_paths, out, force: bool) -> int:
    p = _params(cfg)
    run_dir = _resolve_run_dir(out, cfg, force)
    det_cfg = _detection_config(cfg)
    d_sec = cfg["detection"]
    th = cfg["theory"]
    files = []
    skipped = []
    all_events = []   # (trace_idx, trace, event)

    for idx, path in enumerate(trace_paths):
        try:
            trace = load_trace(path)
            if trace.params_hash != params_hash(p):
                raise ValueError("trace was synthesized for different parameters")
            x1 = trace.x1.astype(float)
            x2 = trace.x2.astype(float)
            events = detect_transits(x1, x2, trace.sample_rate, det_cfg)
        except Exception as exc:  # noqa: BLE001 - skip corrupt traces
            warnings.warn(f"skipping {path}: {exc}")
            skipped.append((str(path), str(exc)))
            continue
        # rotated display record using the leading clean window
        nb = int(round(det_cfg.baseline_window * trace.sample_rate))
        try:
            phi0 = estimate_lo_phase(x1[:nb], x2[:nb], trace.sample_rate)
        except Exception:  # noqa: BLE001
            phi0 = 0.0
        xa, xp = rotate_quadratures(x1, x2, phi0)
        t = trace.times()
        ts_csv = run_dir / f"trace_{idx:03d}_timeseries.csv"
        with open(ts_csv, "w") as fh:
            fh.write("# rotated quadrature photocurrents (ADC counts); "
                     f"lo_phase_rad={phi0!r}\n")
            fh.write("t_s,amplitude_counts,phase_counts\n")
            for k in range(0, len(t)):
                fh.write(f"{float(t[k])!r},{float(xa[k])!r},{float(xp[k])!r}\n")
        ts_png = run_dir / f"trace_{idx:03d}_timeseries.png"
        plot_timeseries(t, xa, xp, ts_png, events=events,
                        title=f"trace {idx}: {len(events)} event(s)")
        files += [ts_csv, ts_png]
        for ev in events:
            all_events.append((idx, trace, ev))

    if skipped and len(skipped) == len(trace_paths):
        print("analyze: no readable traces")
        return EXIT_RUNTIME

    # event records
    ev_path = run_dir / "events.ndjson"
    with open(ev_path, "w") as fh:
        for trace_idx, trace, ev in all_events:
            sens = sensitivity_report(ev, p, trace.analog_bandwidth)
            fh.write(json.dumps({
                "trace": trace_idx, "start": ev.start, "end": ev.end,
                "duration_s": ev.duration, "score": ev.score,
                "phi_hat_rad": ev.phi_hat,
                "baseline_mean": ev.baseline_mean,
                "baseline_sigma": ev.baseline_sigma,
                "snr_amp": sens.snr_amp, "snr_phase": sens.snr_phase,
                "combined_snr": sens.combined,
            }, default=_json_default) + "\n")
    files.append(ev_path)

    report = {"n_traces": len(trace_paths), "n_skipped": len(skipped),
              "n_events": len(all_events), "g0_mhz": p.g0 / MHZ,
              "m_empty": p.m_empty, "delta_mhz": p.delta_ap / MHZ}

    if all_events:
        curves = theory_curves(p, n_g=th["n_g"], n_fock=th["n_fock"],
                               branch=th["branch"], form=th["dispersive_form"])
        files += _write_theory_csvs(run_dir, curves)
        ranked = sorted(all_events,
                        key=lambda it: sensitivity_report(it[2], p).combined,
                        reverse=True)
        overlay = ranked[:d_sec["max_overlay"]]
        dot_sets, sigmas, radii = [], [], []
        sens_rows = []
        for trace_idx, trace, ev in overlay:
            try:
                dots = phasor_points(ev, d_sec["phasor_period"],
                                     d_sec["phasor_cutoff"],
                                     normalization=trace.scale)
            except EventTooShortError:
                continue
            dot_sets.append(dots)
            sigmas.append(phasor_noise_sigma(ev, trace.x1.astype(float),
                                             trace.x2.astype(float),
                                             d_sec["phasor_cutoff"]))
            radii.append(ev.baseline_mean)
            sens = sensitivity_report(ev, p, trace.analog_bandwidth)
            sens_rows.append((trace_idx, ev, sens))

        sens_csv = run_dir / "sensitivity.csv"
        with open(sens_csv, "w") as fh:
            fh.write("trace,start,snr_amp,snr_phase,combined,"
                     "fractional_per_rthz,s_g_khz_per_rthz\n")
            for trace_idx, ev, sens in sens_rows:
                fh.write(f"{trace_idx},{ev.start},{sens.snr_amp:.3f},"
                         f"{sens.snr_phase:.3f},{sens.combined:.3f},"
                         f"{sens.fractional_per_rthz:.3e},"
                         f"{sens.s_g_khz_per_rthz:.3f}\n")
        files.append(sens_csv)

        if dot_sets:
            ph_path = run_dir / "phasors.ndjson"
            with open(ph_path, "w") as fh:
                for k, dots in enumerate(dot_sets):
                    for r, ang, si in zip(dots.radius, dots.angle,
                                          dots.sample_indices):
                        fh.write(json.dumps({"overlay": k, "sample": int(si),
                                             "radius": float(r),
                                             "angle": float(ang)}) + "\n")
            files.append(ph_path)

            baseline_radius = float(np.mean(radii))
            scale = baseline_radius / abs(curves.quantum[0])
            sigma_dot = float(np.mean(sigmas))
            pts = np.vstack([d.xy() for d in dot_sets])
            disc = discriminate(pts, curves, scale, sigma_dot, g0_mhz=p.g0 / MHZ)
            report["discrimination"] = asdict(disc)
            ph_png = run_dir / "phasor_overlay.png"
            plot_phasor(dot_sets, curves, scale, ph_png,
                        title=f"preferred: {disc.preferred} "
                              f"(margin {disc.margin:.1f})")
            files.append(ph_png)
            mean_sens = float(np.mean([s.combined for _, _, s in sens_rows]))
            report["mean_combined_snr"] = mean_sens
    else:
        report["discrimination"] = None
        print("analyze: no events")

    rep_path = run_dir / "discrimination.json"
    with open(rep_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    files.append(rep_path)
    write_manifest(run_dir, cfg, cfg["seed"], params_hash(p), files,
                   extra={"skipped": skipped})
    if report.get("discrimination"):
        d = report["discrimination"]
        print(f"analyze: {len(all_events)} event(s); preferred model "
              f"{d['preferred']} (margin {d['margin']:.2f})")
    return EXIT_PARTIAL if skipped else EXIT_OK


def _write_theory_csvs(run_dir: Path, curves) -> list:
    qpath = run_dir / "theory_quantum.csv"
    with open(qpath, "w") as fh:
        fh.write("# quantum steady-field locus; units: g rad/s, field sqrt(photon)\n")
        fh.write("g_rad_per_s,re_field,im_field\n")
        for g, q in zip(curves.g, curves.quantum):
            fh.write(f"{float(g)!r},{float(q.real)!r},{float(q.imag)!r}\n")
    spath = run_dir / "theory_semiclassical.csv"
    with open(spath, "w") as fh:
        fh.write(f"# semiclassical locus; branch policy: {curves.branch}\n")
        fh.write("g_rad_per_s,re_field,im_field,n_roots\n")
        for i, (g, s) in enumerate(zip(curves.g, curves.semiclassical)):
            nr = int(curves.sc_n_roots[i]) if curves.sc_n_roots is not None else 1
            fh.write(f"{float(g)!r},{float(s.real)!r},{float(s.imag)!r},{nr}\n")
    return [qpath, spath]


def cmd_sweep(cfg: dict, out, force: bool, threads: int) -> int:
    p = _params(cfg)
    run_dir = _resolve_run_dir(out, cfg, force)
    sw = cfg["sweep"]
    det_cfg = _detection_config(cfg)
    h = cfg["heterodyne"]
    seed = cfg["seed"]
    if not sw["deltas"] or not sw["m_values"]:
        raise ConfigError("sweep grid is empty")
    rows = []
    for delta_mhz in sw["deltas"]:
        for m in sw["m_values"]:
            row = {"delta_mhz": float(delta_mhz), "m_empty": float(m),
                   "error": None}
            try:
                p_cell = p.replace(delta_ap=float(delta_mhz) * MHZ,
                                   m_empty=float(m))
                curves = theory_curves(p_cell, n_g=sw["n_g"])
                row["endpoint_separation"] = curves.endpoint_separation()
                row["max_separation"] = curves.max_separation()
                tab = build_tables(p_cell, n_grid=sw["n_grid"], workers=threads,
                                   check_truncation=False, check_interpolation=0)
                tconf = _transit_config(cfg, seed)
                ens = run_ensemble(sw["n_atoms"], tconf, tab, p_cell,
                                   workers=threads)
                n_det, snrs = 0, []
                for i, traj in enumerate(ens.trajectories):
                    if traj is None:
                        continue
                    trace = synthesize(traj.t, traj.field, p_cell,
                                       _drift_model(cfg),
                                       seed=derive_seed(seed, STAGE_TRACE, i),
                                       sample_rate=h["sample_rate"],
                                       analog_bandwidth=h["analog_bandwidth"],
                                       bit_depth=h["bit_depth"],
                                       full_scale_amplitudes=h["full_scale_amplitudes"],
                                       noise=h["noise"], pre_pad=h["pre_pad"],
                                       post_pad=h["post_pad"])
                    evs = detect_transits(trace.x1, trace.x2,
                                          trace.sample_rate, det_cfg)
                    if evs:
                        n_det += 1
                        snrs += [sensitivity_report(ev, p_cell,
                                                    trace.analog_bandwidth).combined
                                 for ev in evs]
                row["transit_yield"] = n_det / sw["n_atoms"]
                row["n_detected"] = n_det
                row["n_atoms"] = sw["n_atoms"]
                row["mean_combined_snr"] = float(np.mean(snrs)) if snrs else 0.0
            except Exception as exc:  # noqa: BLE001 - isolate cell failures
                row["error"] = str(exc)
            rows.append(row)
            msg = row["error"] or (f"sep {row['endpoint_separation']:.3f}, "
                                   f"yield {row['transit_yield']:.2f}")
            print(f"sweep: delta {delta_mhz:g} MHz, m {m:g}: {msg}")

    csv_path = run_dir / "sweep.csv"
    with open(csv_path, "w") as fh:
        fh.write("delta_mhz,m_empty,endpoint_separation,max_separation,"
                 "transit_yield,n_detected,n_atoms,mean_combined_snr,error\n")
        for r in rows:
            fh.write(f"{r['delta_mhz']:g},{r['m_empty']:g},"
                     f"{r.get('endpoint_separation', float('nan')):.6g},"
                     f"{r.get('max_separation', float('nan')):.6g},"
                     f"{r.get('transit_yield', float('nan')):.6g},"
                     f"{r.get('n_detected', 0)},{r.get('n_atoms', 0)},"
                     f"{r.get('mean_combined_snr', float('nan')):.6g},"
                     f"{json.dumps(r['error']) if r['error'] else ''}\n")
    png_path = run_dir / "sweep_summary.png"
    plot_sweep(rows, png_path)
    write_manifest(run_dir, cfg, seed, params_hash(p), [csv_path, png_path])
    n_err = sum(1 for r in rows if r["error"])
    if n_err == len(rows):
        return EXIT_RUNTIME
    return EXIT_PARTIAL if n_err else EXIT_OK


def cmd_calibrate(cfg: dict | None, args) -> int:
    out = {}
    if args.imbalance is not None:
        g_imb, phi_imb = args.imbalance
        out["imbalance_efficiency"] = imbalance_efficiency(g_imb, phi_imb)
    if args.lo_noise is not None:
        pts = np.loadtxt(args.lo_noise, delimiter=",", comments="#")
        fit = lo_excess_noise_fit(pts)
        out["lo_noise_fit"] = {"a": fit.a, "b": fit.b, "b_over_a": fit.b_over_a,
                               "a_stderr": fit.a_stderr, "b_stderr": fit.b_stderr}
    if args.trace is not None:
        if cfg is None:
            raise ConfigError("--trace calibration needs --config for eta and kappa_b")
        p = _params(cfg)
        trace = load_trace(args.trace)
        x1 = trace.x1.astype(float)
        x2 = trace.x2.astype(float)
        nb = min(len(x1), int(round(2e-3 * trace.sample_rate)))
        phi = estimate_lo_phase(x1[:nb], x2[:nb], trace.sample_rate)
        xa, _ = rotate_quadratures(x1, x2, phi)
        S, N = measure_windowed_snr(xa / trace.scale, trace.sample_rate,
                                    args.window)
        m_raw = calibrate_photon_number(S, N, args.window, p.eta, p.kappa_b)
        out["photon_number"] = {
            "S_sqrt_photon": S, "N": N, "window_s": args.window,
            "m_shot_noise_limited": m_raw,
            "m_with_excess_noise": m_raw * p.beta ** 2,
            "beta": p.beta,
        }
    if not out:
        raise ConfigError("calibrate: nothing to do "
                          "(pass --imbalance, --lo-noise and/or --trace)")
    text = json.dumps(out, indent=2, sort_keys=True, default=_json_default)
    print(text)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "calibration.json").write_text(text + "\n")
    return EXIT_OK


# -- entry point -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cavitytwin",
        description="Digital twin of a single-atom cavity QED transit experiment")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", required=needs_config,
                        help="JSON configuration file")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the config master seed")
        sp.add_argument("--out", default=None, help="run output directory")
        sp.add_argument("--force", action="store_true",
                        help="overwrite an existing run directory")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker processes for parallel stages")

    sp = sub.add_parser("tables", help="precompute steady-state tables")
    common(sp)
    sp = sub.add_parser("simulate", help="run transits and synthesize traces")
    common(sp)
    sp.add_argument("--tables", required=True, help="tables file from `tables`")
    sp = sub.add_parser("analyze", help="detect transits and build phasor reports")
    common(sp)
    sp.add_argument("--traces", nargs="+", required=True, help="trace files (.qtr)")
    sp = sub.add_parser("sweep", help="detuning/power grid summary")
    common(sp)
    sp = sub.add_parser("calibrate", help="calibration formula evaluations")
    common(sp, needs_config=False)
    sp.add_argument("--imbalance", nargs=2, type=float, metavar=("G", "PHI"),
                    help="gain ratio and phase offset of the balanced pair")
    sp.add_argument("--lo-noise", default=None,
                    help="CSV of (power mW, noise) pairs to fit n = aP + bP^2")
    sp.add_argument("--trace", default=None,
                    help="trace file for photon-number calibration")
    sp.add_argument("--window", type=float, default=1e-3,
                    help="averaging window T (s) for photon-number calibration")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is not None and args.seed is not None:
            cfg["seed"] = args.seed
        if args.command == "tables":
            return cmd_tables(cfg, args.out, args.force, args.threads)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.tables, args.out, args.force,
                                args.threads)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.traces, args.out, args.force)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out, args.force, args.threads)
        if args.command == "calibrate":
            return cmd_calibrate(cfg, args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ParamsError, TableHashError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
