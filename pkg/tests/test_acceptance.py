"""Acceptance suite: one test per criterion, each printing a PASS line with
the measured numbers (visible with pytest -s; pytest -v shows the verdicts).

Monte Carlo criteria use fixed seeds; where a measured value serves as the
regression baseline it is asserted alongside the criterion bound.
"""

import json
import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter1d
from scipy.signal import butter, lfilter, lfilter_zi

from cavitytwin.dsp import (DetectionConfig, detect_transits, discriminate,
                            estimate_lo_phase, phasor_noise_sigma,
                            phasor_points, rotate_quadratures,
                            sensitivity_from_snr, sensitivity_report,
                            theory_curves)
from cavitytwin.heterodyne import (DriftModel, imbalance_efficiency, synthesize)
from cavitytwin.params import (PhysicalParams, drive_amplitude,
                               empty_cavity_field, saturation_photon_number)
from cavitytwin.steady import (HilbertConfig, Liouvillian, expectations,
                               force_observable, ground_vacuum, propagate,
                               qrt_correlation_integral, steady_state)
from cavitytwin.tables import build_tables, diffusion
from cavitytwin.transit import (STAGE_TRACE, TransitConfig, derive_seed,
                                run_ensemble, run_transit)


def _report(cid: str, detail: str):
    print(f"ACCEPTANCE {cid}: PASS ({detail})")


def _trace_distance(rho1, rho2):
    return 0.5 * np.abs(np.linalg.eigvalsh(rho1 - rho2)).sum()


def test_criterion_01_empty_cavity_exactness():
    """Steady <a> at g=0 equals sqrt(2 k_a) E/(k_tot + i Theta) to 1e-10."""
    rng = np.random.default_rng(1)
    hc = HilbertConfig(20)
    worst = 0.0
    for _ in range(20):
        p = PhysicalParams.reference_preset(theta_cp=rng.uniform(-30, 30),
                                        m_empty=rng.uniform(0.01, 2.0))
        field = expectations(steady_state(Liouvillian(p, hc, 0.0)), hc).field
        ref = empty_cavity_field(p)
        worst = max(worst, abs(field - ref) / abs(ref))
    assert worst < 1e-10
    _report("1 empty-cavity exactness", f"worst relative error {worst:.2e}")


def test_criterion_02_steady_state_vs_propagation():
    """Trace distance between the direct solve and 20/kappa of Euler < 1e-6."""
    p = PhysicalParams.reference_preset(delta_ap=10.0, m_empty=0.5)
    hc = HilbertConfig(16)
    L = Liouvillian(p, hc, p.g0)
    rho_direct = steady_state(L)
    rho_long = propagate(L, ground_vacuum(hc), 20.0 / p.kappa_total)
    dist = _trace_distance(rho_direct, 0.5 * (rho_long + rho_long.conj().T))
    assert dist < 1e-6
    _report("2 steady state vs propagation", f"trace distance {dist:.2e}")


def test_criterion_03_weak_field_agreement():
    """|<a>_q - x sqrt(m0)| / |<a>_q| < 1% at m = 1e-3 m0 across detunings."""
    from cavitytwin.obse import semiclassical_field
    m0 = saturation_photon_number(PhysicalParams.reference_preset())
    hc = HilbertConfig(6)
    worst = 0.0
    for delta in (0.0, 10.0, 30.0, 50.0):
        p = PhysicalParams.reference_preset(delta_ap=delta, m_empty=1e-3 * m0)
        aq = expectations(steady_state(Liouvillian(p, hc, p.g0)), hc).field
        asc = semiclassical_field(p, p.g0)
        worst = max(worst, abs(aq - asc) / abs(aq))
    assert worst < 0.01
    _report("3 weak-field agreement", f"worst relative difference {worst:.2e}")


def test_criterion_04_quantum_semiclassical_divergence():
    """Delta=10 MHz, m=11: curve endpoints separate by > 10% of the empty
    radius, and the synthesized 3-transit dataset classifies as quantum with
    margin > 2 (measured margin is the regression baseline)."""
    p = PhysicalParams.reference_preset(delta_ap=10.0, m_empty=11.0)
    curves = theory_curves(p, n_g=21)  # n_fock defaults to 35
    sep = curves.endpoint_separation()
    assert sep > 0.10

    tab = build_tables(p, n_grid=101, check_truncation=False,
                       check_interpolation=0)
    ens = run_ensemble(40, TransitConfig(seed=314), tab, p)
    det_cfg = DetectionConfig(smooth_window=50e-6)  # saturated-regime smoothing
    events = []
    for i, traj in enumerate(ens.trajectories):
        tr = synthesize(traj.t, traj.field, p, DriftModel(),
                        seed=derive_seed(314, STAGE_TRACE, i),
                        pre_pad=3e-3, post_pad=0.5e-3)
        for ev in detect_transits(tr.x1, tr.x2, tr.sample_rate, det_cfg):
            events.append((sensitivity_report(ev, p).combined, i, tr, ev))
    events.sort(key=lambda e: -e[0])
    assert len(events) >= 3
    dot_sets, sigmas, radii = [], [], []
    for _, _, tr, ev in events[:3]:
        dot_sets.append(phasor_points(ev))
        sigmas.append(phasor_noise_sigma(ev, tr.x1.astype(float),
                                         tr.x2.astype(float)))
        radii.append(ev.baseline_mean)
    pts = np.vstack([d.xy() for d in dot_sets])
    scale = float(np.mean(radii)) / abs(curves.quantum[0])
    rep = discriminate(pts, curves, scale, float(np.mean(sigmas)))
    assert rep.preferred == "quantum"
    assert rep.margin > 2.0
    assert rep.margin == pytest.approx(3.6, abs=0.8)  # regression baseline
    _report("4 quantum/semiclassical divergence",
            f"endpoint separation {sep:.3f}, margin {rep.margin:.2f} "
            f"over {rep.n_dots} dots")


def test_criterion_05_diffusion_cross_check():
    """Resolvent-solve and time-integrated correlation integrals agree to 2%
    at five grid nodes (n_fock = 25)."""
    p = PhysicalParams.reference_preset(delta_ap=10.0, m_empty=2.0)
    hc = HilbertConfig(25)
    F = force_observable(hc)
    worst = 0.0
    for frac in (0.2, 0.4, 0.6, 0.8, 1.0):
        L = Liouvillian(p, hc, frac * p.g0)
        rho = steady_state(L)
        d_solve = qrt_correlation_integral(L, rho, F, "solve")
        d_integ = qrt_correlation_integral(L, rho, F, "integrate", t_int=5e-6)
        worst = max(worst, abs(d_solve - d_integ) / abs(d_integ))
    assert worst < 0.02
    _report("5 diffusion cross-check", f"worst relative difference {worst:.2e}")


def test_criterion_06_diffusion_orderings():
    """Near a node, dipole diffusion decreases with detuning at m=2 and
    increases with drive at Delta=50 MHz (strict ordering)."""
    r_node = None
    d_by_delta = []
    for delta in (0.0, 10.0, 30.0, 50.0):
        p = PhysicalParams.reference_preset(delta_ap=delta, m_empty=2.0)
        if r_node is None:
            r_node = np.array([0.24 * p.wavelength, 0.0, 0.0])
        tab = build_tables(p, n_grid=41, check_truncation=False,
                           check_interpolation=0)
        d_by_delta.append(diffusion(tab, p, r_node).dipole_x)
    assert all(a > b for a, b in zip(d_by_delta, d_by_delta[1:]))
    d_by_m = []
    for m in (2.0, 4.0, 8.0):
        p = PhysicalParams.reference_preset(delta_ap=50.0, m_empty=m)
        tab = build_tables(p, n_grid=41, check_truncation=False,
                           check_interpolation=0)
        d_by_m.append(diffusion(tab, p, r_node).dipole_x)
    assert d_by_m[0] < d_by_m[1] < d_by_m[2]
    _report("6 diffusion orderings",
            f"D(delta)={['%.2e' % d for d in d_by_delta]}, "
            f"D(m)={['%.2e' % d for d in d_by_m]}")


def test_criterion_07_sde_integrator(tables_d10_m2, p_d10_m2):
    """Strong order 0.5 +- 0.1 on the multiplicative linear SDE with a known
    solution, and pinned-atom momentum variance growth 2 D t within 3%."""
    # (a) strong order of the Ito-Euler update rule
    a, b = -1.0, 1.0
    T = 1.0
    n_paths = 1500
    rng = np.random.default_rng(42)
    n_fine = 2 ** 13
    dt_fine = T / n_fine
    dW_fine = rng.standard_normal((n_paths, n_fine)) * math.sqrt(dt_fine)
    exact = np.exp((a - 0.5 * b * b) * T + b * dW_fine.sum(axis=1))
    errors, dts = [], []
    for ratio in (8, 16, 32, 64):
        dt = dt_fine * ratio
        dW = dW_fine.reshape(n_paths, n_fine // ratio, ratio).sum(axis=2)
        x = np.ones(n_paths)
        for k in range(n_fine // ratio):
            x = x + a * x * dt + b * x * dW[:, k]
        errors.append(np.mean(np.abs(x - exact)))
        dts.append(dt)
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    assert slope == pytest.approx(0.5, abs=0.1)

    # (b) pinned-atom variance via the production stepper
    from cavitytwin.params import HBAR, mode_coupling
    from cavitytwin.transit import AtomState, step
    p = p_d10_m2
    r_pin = np.array([p.wavelength / 8, 0.0, 0.0])
    d = diffusion(tables_d10_m2, p, r_pin)
    dt = 7.5e-9
    n_steps, n_samples = 100, 10_000
    rng2 = np.random.default_rng(77)
    cfg = TransitConfig(dt=dt, gravity=False)
    vx = np.zeros(n_samples)
    for k in range(n_samples):
        s = AtomState(r=r_pin.copy(), v=np.zeros(3))
        for _ in range(n_steps):
            s = step(s, tables_d10_m2, p, dt, rng2.standard_normal(4), cfg)
            s.r[:] = r_pin
        vx[k] = s.v[0]
    g_pin, grad_pin = mode_coupling(p, r_pin)
    drift = n_steps * dt * HBAR * tables_d10_m2.force_scalar_at(g_pin) \
        * grad_pin[0] / p.atom_mass
    var_p = float(np.var((vx - drift) * p.atom_mass))
    expected = 2.0 * (d.dipole_x + d.recoil) * n_steps * dt
    assert var_p == pytest.approx(expected, rel=0.03)
    _report("7 SDE integrator",
            f"strong-order slope {slope:.3f}, variance ratio "
            f"{var_p / expected:.4f}")


def test_criterion_08_snr_closure():
    """Measured S^2/N equals 4 T eta kappa_b m / beta^2 within 5%
    (T = 1 ms windows, 10 synthesized acquisitions pooled)."""
    ratios = {}
    for beta in (1.0, 1.5):
        p = PhysicalParams.reference_preset(m_empty=1.5, beta=beta)
        rate = 1e7
        n = int(0.2 * rate)
        t = np.arange(n) / rate
        rec = np.full(n, empty_cavity_field(p))
        means = []
        for k in range(10):
            tr = synthesize(t, rec, p, DriftModel(enabled=False), seed=500 + k)
            x1 = tr.x1.astype(float)
            x2 = tr.x2.astype(float)
            phi = estimate_lo_phase(x1[:20000], x2[:20000])
            xa, _ = rotate_quadratures(x1, x2, phi)
            w = int(1e-3 * rate)
            nw = len(xa) // w
            means.append(xa[:nw * w].reshape(nw, w).mean(axis=1))
        means = np.concatenate(means)
        measured = means.mean() ** 2 / means.var(ddof=1)
        predicted = 4 * 1e-3 * p.eta * p.kappa_b * p.m_empty / beta ** 2
        ratios[beta] = measured / predicted
        assert measured == pytest.approx(predicted, rel=0.05)
    _report("8 heterodyne SNR closure",
            f"measured/predicted: beta=1 {ratios[1.0]:.3f}, "
            f"beta=1.5 {ratios[1.5]:.3f}")


def test_criterion_09_reference_arithmetic():
    """Imbalance factor, saturation photon number and the sensitivity chain."""
    imb = imbalance_efficiency(0.63, 0.85)
    assert imb == pytest.approx(0.80, abs=0.005)
    m0 = saturation_photon_number(PhysicalParams.reference_preset(coupling="pi"))
    assert round(m0, 3) == 0.094
    combined = math.hypot(4.0, 2.5)
    assert 4.2 <= combined <= 4.9
    rep = sensitivity_from_snr(4.5, 0.0, 3e5, 2 * math.pi * 11e6)
    assert rep.fractional_per_rthz == pytest.approx(4.1e-4, rel=0.10)
    assert rep.s_g_khz_per_rthz == pytest.approx(4.5, rel=0.10)
    _report("9 reference arithmetic",
            f"imbalance {imb:.4f}, m0 {m0:.4f}, combined {combined:.2f}, "
            f"fractional {rep.fractional_per_rthz:.2e} /rtHz, "
            f"S_g {rep.s_g_khz_per_rthz:.2f} kHz/rtHz")


def test_criterion_10_transit_phenomenology(tables_d10_m2, p_d10_m2):
    """100-drop ensemble: detection yield >= 30% (43% regression baseline),
    largest-transit envelope widths inside [100, 400] us; Delta=0 events have
    zero-mean phasor angle; Delta=50 MHz events are phase-dominant."""
    p = p_d10_m2
    ens = run_ensemble(100, TransitConfig(seed=42), tables_d10_m2, p)
    a_empty = empty_cavity_field(p)
    n_detected = 0
    ranked = []
    for i, traj in enumerate(ens.trajectories):
        tr = synthesize(traj.t, traj.field, p, DriftModel(),
                        seed=derive_seed(42, STAGE_TRACE, i),
                        pre_pad=3e-3, post_pad=0.5e-3)
        if detect_transits(tr.x1, tr.x2, tr.sample_rate):
            n_detected += 1
        dev = np.abs(traj.field - a_empty)
        ranked.append((dev.max(), traj))
    yield_frac = n_detected / 100.0
    assert yield_frac >= 0.30
    assert n_detected == 43  # regression baseline at this seed

    ranked.sort(key=lambda x: -x[0])
    widths = []
    for _, traj in ranked[:5]:
        dev = np.abs(traj.field - a_empty)
        dt_rec = traj.t[1] - traj.t[0]
        env = gaussian_filter1d(dev, sigma=20e-6 / dt_rec)
        above = np.flatnonzero(env > env.max() / 2)
        widths.append((above[-1] - above[0]) * dt_rec)
    assert all(100e-6 <= w <= 400e-6 for w in widths)

    # Delta = 0: pure absorption, zero-mean dot angles
    p0 = PhysicalParams.reference_preset(delta_ap=0.0, m_empty=1.5)
    tab0 = build_tables(p0, n_grid=65, check_truncation=False,
                        check_interpolation=0)
    cfg0 = TransitConfig(seed=21, x0_range=(0.0, 0.0), y0_range=(0.0, 0.0),
                         vx0_range=(0.0, 0.0), vy0_range=(0.0, 0.0))
    traj0 = run_transit(cfg0, tab0, p0)
    tr0 = synthesize(traj0.t, traj0.field, p0, DriftModel(), seed=77,
                     pre_pad=3e-3, post_pad=0.5e-3)
    evs0 = detect_transits(tr0.x1, tr0.x2, tr0.sample_rate)
    assert len(evs0) == 1
    dots0 = phasor_points(evs0[0])
    se = dots0.angle.std(ddof=1) / math.sqrt(len(dots0.angle))
    assert abs(dots0.angle.mean()) <= 3 * se

    # Delta = 50 MHz: dispersive regime, excursion dominated by the phase
    p50 = PhysicalParams.reference_preset(delta_ap=50.0, m_empty=4.0)
    tab50 = build_tables(p50, n_grid=65, check_truncation=False,
                         check_interpolation=0)
    cfg50 = TransitConfig(seed=22, x0_range=(0.0, 0.0), y0_range=(0.0, 0.0),
                          vx0_range=(0.0, 0.0), vy0_range=(0.0, 0.0))
    traj50 = run_transit(cfg50, tab50, p50)
    tr50 = synthesize(traj50.t, traj50.field, p50, DriftModel(), seed=78,
                      pre_pad=3e-3, post_pad=0.5e-3)
    evs50 = detect_transits(tr50.x1, tr50.x2, tr50.sample_rate,
                            DetectionConfig(smooth_window=50e-6))
    assert len(evs50) >= 1
    ev = evs50[0]
    b, a = butter(2, 5e4, btype="low", fs=ev.sample_rate)
    zi = lfilter_zi(b, a)
    fa, _ = lfilter(b, a, ev.xa - ev.baseline_mean,
                    zi=zi * (ev.xa[0] - ev.baseline_mean))
    fp, _ = lfilter(b, a, ev.xp - ev.baseline_mean_p,
                    zi=zi * (ev.xp[0] - ev.baseline_mean_p))
    rms_amp = math.sqrt(float((fa ** 2).mean()))
    rms_phase = math.sqrt(float((fp ** 2).mean()))
    assert rms_phase > rms_amp
    _report("10 transit phenomenology",
            f"yield {n_detected}/100, envelope widths "
            f"{[round(w * 1e6) for w in widths]} us, Delta=0 angle "
            f"{dots0.angle.mean():+.3f} rad, Delta=50 phase/amp "
            f"{rms_phase / rms_amp:.2f}")


def test_criterion_11_pipeline_determinism(tmp_path, monkeypatch):
    """Two identical config+seed pipeline runs produce byte-identical
    manifests (timestamps pinned via SOURCE_DATE_EPOCH)."""
    from cavitytwin.cli import main
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    cfg = {
        "schema_version": 1,
        "seed": 99,
        "params": {"g0": 11.0, "gamma_perp": 2.6, "kappa_a": 1.6,
                   "kappa_b": 1.6, "kappa_c": 0.0, "delta_ap": 10.0,
                   "theta_cp": 0.0, "m_empty": 1.5, "waist": 45.0e-6,
                   "wavelength": 852.36e-9, "atom_mass": 2.2069e-25,
                   "gravity": 9.8, "eta": 0.32, "beta": 1.5},
        "tables": {"n_grid": 33, "n_fock": 16},
        "transit": {"n_atoms": 2, "duration": 1.0e-3,
                    "x0_range": [0.0, 1e-9], "y0_range": [0.0, 1e-9],
                    "vx0_range": [0.0, 1e-9], "vy0_range": [0.0, 1e-9]},
        "theory": {"n_g": 17, "n_fock": 16},
    }
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    manifests = {}
    for run in ("a", "b"):
        t_dir = tmp_path / f"tables_{run}"
        s_dir = tmp_path / f"sim_{run}"
        an_dir = tmp_path / f"an_{run}"
        assert main(["tables", "--config", str(cfg_path), "--out", str(t_dir)]) == 0
        assert main(["simulate", "--config", str(cfg_path),
                     "--tables", str(t_dir / "tables_delta10MHz.tbl"),
                     "--out", str(s_dir)]) == 0
        traces = sorted(str(f) for f in s_dir.glob("trace_*.qtr"))
        assert main(["analyze", "--config", str(cfg_path), "--traces",
                     *traces, "--out", str(an_dir)]) == 0
        manifests[run] = tuple((d / "manifest.json").read_bytes()
                               for d in (t_dir, s_dir, an_dir))
    assert manifests["a"] == manifests["b"]
    _report("11 pipeline determinism",
            "tables+simulate+analyze manifests byte-identical across reruns")
