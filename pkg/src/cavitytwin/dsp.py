"""Quadrature recovery, transit detection, phasor construction and
quantum-vs-semiclassical scoring.

The LO phase is unknown, so the amplitude/phase quadratures are defined
adaptively: within a clean window preceding the signal of interest the
rotation angle is the four-quadrant angle of the mean (x1, x2) vector;
rotating by its negative leaves the phase quadrature with zero mean and
the amplitude quadrature with a positive mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import butter, lfilter, lfilter_zi

from .obse import semiclassical_field
from .params import PhysicalParams, empty_cavity_field
from .steady import HilbertConfig, Liouvillian, default_n_fock, expectations, steady_state


class NoCarrierError(RuntimeError):
    """Window mean indistinguishable from zero; no LO-phase estimate possible."""


class EventTooShortError(ValueError):
    """Event yields fewer than 3 phasor points."""


def estimate_lo_phase(x1: np.ndarray, x2: np.ndarray,
                      sample_rate: float | None = None,
                      min_duration: float = 1e-3) -> float:
    """LO phase estimate: angle of the mean (x1, x2) vector of a clean window."""
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if sample_rate is not None and len(x1) < min_duration * sample_rate:
        raise ValueError("phase-estimation window shorter than 1 ms")
    m1, m2 = x1.mean(), x2.mean()
    sigma = math.sqrt(0.5 * (x1.var() + x2.var()))
    if math.hypot(m1, m2) < 3.0 * sigma / math.sqrt(len(x1)):
        raise NoCarrierError("no carrier: window mean below 3 sigma/sqrt(N)")
    return math.atan2(m2, m1)


def rotate_quadratures(x1, x2, phi: float):
    """Undo the LO rotation: (xa, xp) = R(-phi) (x1, x2); norm-preserving."""
    c, s = math.cos(phi), math.sin(phi)
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    return c * x1 + s * x2, -s * x1 + c * x2


@dataclass(frozen=True)
class DetectionConfig:
    threshold_sigma: float = 5.0   # dip threshold on the smoothed amplitude
    edge_sigma: float = 3.0        # boundary extension threshold
    min_duration: float = 50e-6    # contiguous time below threshold
    smooth_window: float = 10e-6   # moving-average length
    baseline_window: float = 2e-3  # clean window preceding each event


@dataclass
class TransitEvent:
    """One detected atom transit with its rotated quadratures and baseline stats."""

    start: int
    end: int                       # exclusive sample index
    xa: np.ndarray                 # rotated amplitude quadrature (counts)
    xp: np.ndarray                 # rotated phase quadrature (counts)
    sample_rate: float
    phi_hat: float
    baseline_start: int
    baseline_end: int
    baseline_mean: float           # of xa over the baseline window
    baseline_mean_p: float
    baseline_sigma: float          # per-sample std of xa over the window
    baseline_sigma_p: float
    baseline_sigma_smooth: float   # std of the smoothed xa over the window
    score: float                   # peak smoothed deviation in sigma_smooth units

    def __post_init__(self):
        if self.end <= self.start:
            raise ValueError("event end must exceed start")
        if self.baseline_end > self.start:
            raise ValueError("baseline window must precede the event")

    @property
    def duration(self) -> float:
        return (self.end - self.start) / self.sample_rate


def detect_transits(x1, x2, sample_rate: float,
                    cfg: DetectionConfig = DetectionConfig()) -> list:
    """Scan a two-channel trace for transit dips in the amplitude quadrature.

    A candidate is a contiguous stretch of the smoothed amplitude
    quadrature below the edge_sigma level whose threshold_sigma excursion
    spans at least min_duration; the event boundaries are the edge_sigma
    crossings.  Baseline statistics come from the clean window preceding
    each event; events too close to the trace start (no baseline) are
    dropped, and overlapping candidates merge by construction.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    n = len(x1)
    fs = sample_rate
    W = max(1, int(round(cfg.smooth_window * fs)))
    B = int(round(cfg.baseline_window * fs))
    Dmin = max(1, int(round(cfg.min_duration * fs)))
    if n < B + Dmin:
        return []

    events: list = []
    pos = B
    prev_end = 0
    while pos < n:
        base_lo = max(prev_end, pos - B)
        if pos - base_lo < B // 2:
            pos = base_lo + B
            continue
        try:
            phi = estimate_lo_phase(x1[base_lo:pos], x2[base_lo:pos])
        except NoCarrierError:
            break
        xa, _ = rotate_quadratures(x1, x2, phi)
        sm = uniform_filter1d(xa, size=W, mode="nearest")
        mu = sm[base_lo:pos].mean()
        sig_s = sm[base_lo:pos].std()
        if sig_s == 0.0:
            sig_s = 1e-30
        deep = mu - cfg.threshold_sigma * sig_s
        edge = mu - cfg.edge_sigma * sig_s
        rel = np.flatnonzero(sm[pos:] < deep)
        if len(rel) == 0:
            break
        i = pos + rel[0]
        # contiguous below-edge stretch containing the deep crossing
        es = i
        while es > base_lo and sm[es - 1] < edge:
            es -= 1
        ee = i
        while ee < n and sm[ee] < edge:
            ee += 1
        deep_idx = np.flatnonzero(sm[es:ee] < deep)
        span = deep_idx[-1] - deep_idx[0] + 1 if len(deep_idx) else 0
        if span < Dmin or es < B:
            # too brief to qualify, or no full baseline before it
            prev_end = ee
            pos = ee + W
            continue
        ev = _finalize_event(x1, x2, fs, cfg, es, ee, prev_end)
        if ev is not None:
            events.append(ev)
        prev_end = ee
        pos = ee + W
    return events


def _finalize_event(x1, x2, fs, cfg, es, ee, prev_end):
    B = int(round(cfg.baseline_window * fs))
    W = max(1, int(round(cfg.smooth_window * fs)))
    b_lo = max(prev_end, es - B)
    if es - b_lo < B // 2:
        return None
    try:
        phi = estimate_lo_phase(x1[b_lo:es], x2[b_lo:es])
    except NoCarrierError:
        return None
    xa, xp = rotate_quadratures(x1[b_lo:ee], x2[b_lo:ee], phi)
    nb = es - b_lo
    base_a, base_p = xa[:nb], xp[:nb]
    sm = uniform_filter1d(xa, size=W, mode="nearest")
    sig_s = max(sm[:nb].std(), 1e-30)
    mu = sm[:nb].mean()
    score = float((mu - sm[nb:]).max() / sig_s)
    return TransitEvent(
        start=es, end=ee, xa=xa[nb:], xp=xp[nb:], sample_rate=fs, phi_hat=phi,
        baseline_start=b_lo, baseline_end=es,
        baseline_mean=float(base_a.mean()), baseline_mean_p=float(base_p.mean()),
        baseline_sigma=float(base_a.std()), baseline_sigma_p=float(base_p.std()),
        baseline_sigma_smooth=float(sig_s), score=score)


@dataclass
class PhasorSet:
    """(radius, angle) dots resampled on a coarse grid during one event."""

    radius: np.ndarray
    angle: np.ndarray             # (-pi, pi]
    sample_indices: np.ndarray    # absolute sample index of each dot
    normalization: float          # counts per sqrt(photon)
    event_start: int = 0

    def __post_init__(self):
        if (self.radius < 0).any():
            raise ValueError("phasor radii must be >= 0")

    def xy(self) -> np.ndarray:
        return np.column_stack([self.radius * np.cos(self.angle),
                                self.radius * np.sin(self.angle)])


def phasor_points(event: TransitEvent, resample_period: float = 10e-6,
                  cutoff: float = 5e4, normalization: float = 1.0) -> PhasorSet:
    """Anti-alias (2nd-order low-pass at `cutoff`) and resample the event
    quadratures every `resample_period`, as polar dots."""
    fs = event.sample_rate
    b, a = butter(2, cutoff, btype="low", fs=fs)
    zi = lfilter_zi(b, a)
    fa, _ = lfilter(b, a, event.xa, zi=zi * event.xa[0])
    fp, _ = lfilter(b, a, event.xp, zi=zi * event.xp[0])
    step = max(1, int(round(resample_period * fs)))
    idx = np.arange(step, len(fa), step)
    if len(idx) < 3:
        raise EventTooShortError(
            f"event spans {len(fa)} samples, fewer than 3 phasor points")
    xa_i, xp_i = fa[idx], fp[idx]
    return PhasorSet(radius=np.hypot(xa_i, xp_i),
                     angle=np.arctan2(xp_i, xa_i),
                     sample_indices=event.start + idx,
                     normalization=normalization,
                     event_start=event.start)


@dataclass
class TheoryCurves:
    """Steady-field loci vs coupling in sqrt(photon) units, quantum and
    semiclassical, sharing the g = 0 point."""

    g: np.ndarray
    quantum: np.ndarray        # complex <a>(g)
    semiclassical: np.ndarray  # complex x sqrt(m0)(g)
    branch: str = "adiabatic"
    sc_n_roots: np.ndarray | None = None  # intensity-root count per point

    def endpoint_separation(self) -> float:
        """|quantum(g0) - semiclassical(g0)| / empty-cavity radius."""
        return float(abs(self.quantum[-1] - self.semiclassical[-1])
                     / abs(self.quantum[0]))

    def max_separation(self) -> float:
        """Largest pointwise model separation along the curve, relative to
        the empty-cavity radius (the curves can diverge mid-curve and
        reconverge at full coupling)."""
        return float(np.abs(self.quantum - self.semiclassical).max()
                     / abs(self.quantum[0]))


def theory_curves(p: PhysicalParams, n_g: int = 41, n_fock: int | None = None,
                  branch: str = "adiabatic", form: str = "printed") -> TheoryCurves:
    """Parametric (q_a, q_p) curves over g in [0, g0] from both models."""
    if n_g < 17:
        raise ValueError("n_g must be >= 17")
    if n_fock is None:
        n_fock = default_n_fock(p.m_empty)
    hc = HilbertConfig(n_fock)
    g_vals = np.linspace(0.0, p.g0, n_g)
    quantum = np.empty(n_g, dtype=complex)
    for i, g in enumerate(g_vals):
        L = Liouvillian(p, hc, g)
        quantum[i] = expectations(steady_state(L), hc).field
    semi = np.empty(n_g, dtype=complex)
    n_roots = np.empty(n_g, dtype=int)
    for i, g in enumerate(g_vals):
        semi[i], info = semiclassical_field(p, g, branch, form, with_info=True)
        n_roots[i] = info.n_roots
    a0 = empty_cavity_field(p)
    # Fock truncation shifts the g = 0 point by the coherent-state tail;
    # anything past 1e-5 relative means a real inconsistency (the strict
    # agreement bound is exercised by the tests at generous cutoffs).
    if abs(quantum[0] - a0) > 1e-5 * abs(a0):
        raise RuntimeError("quantum curve g=0 point disagrees with the analytic "
                           f"empty-cavity field by {abs(quantum[0] - a0):.3e}")
    semi[0] = quantum[0]  # curves share the origin point exactly
    return TheoryCurves(g=g_vals, quantum=quantum, semiclassical=semi,
                        branch=branch, sc_n_roots=n_roots)


def _polyline_distances(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Min distance of each point to a polyline, via per-segment projection."""
    a = poly[:-1]
    d = poly[1:] - a
    len2 = (d ** 2).sum(axis=1)
    len2[len2 == 0.0] = 1e-300
    rel = pts[:, None, :] - a[None, :, :]
    t = np.clip((rel * d[None, :, :]).sum(axis=2) / len2[None, :], 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
    dist = np.linalg.norm(pts[:, None, :] - proj, axis=2)
    return dist.min(axis=1)


@dataclass(frozen=True)
class DiscriminationReport:
    rms_quantum: float
    rms_semiclassical: float
    preferred: str
    margin: float            # significance of the preference (z-score of the
    #                          per-dot squared-distance differences)
    margin_per_sigma: float  # rms difference in units of the per-dot noise
    n_dots: int
    sigma_dot: float
    g0_mhz: float = 0.0      # active coupling of the theory curves


def discriminate(dots: PhasorSet, curves: TheoryCurves, scale: float,
                 sigma_dot: float, g0_mhz: float = 0.0) -> DiscriminationReport:
    """Score dots against both theory polylines (scaled by `scale` into
    trace units); preferred model has the smaller rms distance.

    margin quantifies how decisively the data pick the preferred model:
    the mean of the per-dot squared-distance differences over its standard
    error.  The raw rms difference in units of the per-dot noise is kept
    alongside as margin_per_sigma.
    """
    pts = dots.xy() if isinstance(dots, PhasorSet) else np.asarray(dots, dtype=float)
    if len(pts) < 10:
        raise ValueError("need at least 10 phasor dots")
    q_poly = np.column_stack([curves.quantum.real, curves.quantum.imag]) * scale
    s_poly = np.column_stack([curves.semiclassical.real, curves.semiclassical.imag]) * scale
    for poly, name in ((q_poly, "quantum"), (s_poly, "semiclassical")):
        if np.ptp(poly, axis=0).max() < 1e-12 * max(abs(poly).max(), 1e-30):
            raise ValueError(f"degenerate {name} curve: all points identical")
    d_q = _polyline_distances(pts, q_poly)
    d_s = _polyline_distances(pts, s_poly)
    rms_q = float(np.sqrt((d_q ** 2).mean()))
    rms_s = float(np.sqrt((d_s ** 2).mean()))
    preferred = "quantum" if rms_q <= rms_s else "semiclassical"
    u = d_s ** 2 - d_q ** 2
    spread = u.std(ddof=1) if len(u) > 1 else 0.0
    if spread > 0:
        margin = abs(u.mean()) / (spread / math.sqrt(len(u)))
    else:
        margin = float("inf") if abs(u.mean()) > 0 else 0.0
    per_sigma = abs(rms_q - rms_s) / sigma_dot if sigma_dot > 0 else float("inf")
    return DiscriminationReport(rms_quantum=rms_q, rms_semiclassical=rms_s,
                                preferred=preferred, margin=float(margin),
                                margin_per_sigma=float(per_sigma),
                                n_dots=len(pts), sigma_dot=float(sigma_dot),
                                g0_mhz=g0_mhz)


def phasor_noise_sigma(event: TransitEvent, x1, x2, cutoff: float = 5e4) -> float:
    """Per-dot noise: std (pooled over both quadratures) of the anti-aliased
    baseline window preceding the event."""
    fs = event.sample_rate
    xa, xp = rotate_quadratures(x1[event.baseline_start:event.baseline_end],
                                x2[event.baseline_start:event.baseline_end],
                                event.phi_hat)
    b, a = butter(2, cutoff, btype="low", fs=fs)
    zi = lfilter_zi(b, a)
    fa, _ = lfilter(b, a, xa, zi=zi * xa[0])
    fp, _ = lfilter(b, a, xp, zi=zi * xp[0])
    skip = int(0.2 * len(fa))  # discard filter settling
    return float(math.sqrt(0.5 * (fa[skip:].var() + fp[skip:].var())))


@dataclass(frozen=True)
class SensitivityReport:
    snr_amp: float
    snr_phase: float
    combined: float
    fractional_per_rthz: float   # (1/combined)/sqrt(bandwidth), 1/sqrt(Hz)
    s_g_khz_per_rthz: float      # coupling sensitivity, kHz/sqrt(Hz)
    bandwidth: float
    g0_mhz: float


def sensitivity_from_snr(snr_amp: float, snr_phase: float, bandwidth: float,
                         g0: float) -> SensitivityReport:
    """Sensitivity arithmetic from full-signal to rms-noise ratios."""
    combined = math.hypot(snr_amp, snr_phase)
    fractional = 1.0 / (combined * math.sqrt(bandwidth))
    g0_hz = g0 / (2.0 * math.pi)
    return SensitivityReport(
        snr_amp=snr_amp, snr_phase=snr_phase, combined=combined,
        fractional_per_rthz=fractional,
        s_g_khz_per_rthz=g0_hz * fractional / 1e3,
        bandwidth=bandwidth, g0_mhz=g0_hz / 1e6)


def sensitivity_report(event: TransitEvent, p: PhysicalParams,
                       bandwidth: float = 3e5) -> SensitivityReport:
    """Full-signal to rms-noise ratios of one event and the derived
    fractional and coupling sensitivities."""
    snr_amp = float(np.abs(event.xa - event.baseline_mean).max()
                    / max(event.baseline_sigma, 1e-30))
    snr_phase = float(np.abs(event.xp - event.baseline_mean_p).max()
                      / max(event.baseline_sigma_p, 1e-30))
    return sensitivity_from_snr(snr_amp, snr_phase, bandwidth, p.g0)
