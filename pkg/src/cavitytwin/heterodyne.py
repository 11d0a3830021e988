"""Balanced-heterodyne photocurrent synthesis and calibration formulas.

The rf chain is modeled at baseband: the intracavity field record becomes
the two demodulated quadratures, rotated by a slowly drifting local
oscillator phase, with per-sample Gaussian noise of variance
beta^2 f_s / (4 eta kappa_b) injected ahead of a 2nd-order 300 kHz
low-pass (bilinear-discretized Butterworth, 12 dB/octave), then decimated
to the 10 MHz acquisition grid and quantized to 12-bit counts.  That noise
normalization is the unique one reproducing the heterodyne signal-to-noise
relation S^2/N = 4 T eta kappa_b m under T-averaging.
"""

from __future__ import annotations

import json
import math
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, lfilter, lfilter_zi

from .params import PhysicalParams, empty_cavity_field, params_hash

TRACE_MAGIC = b"CQTR"
TRACE_VERSION = 1


@dataclass(frozen=True)
class DriftModel:
    """Random-walk local-oscillator phase; rms drift over `window` seconds."""

    rms: float = 0.02          # rad accumulated over window
    window: float = 2e-3       # s
    initial_phase: float | None = None  # None: uniform in (-pi, pi]
    enabled: bool = True

    @property
    def diffusion(self) -> float:
        """Phase diffusion constant (rad^2/s)."""
        return self.rms ** 2 / self.window


@dataclass
class QuadratureTrace:
    """Two-channel sampled photocurrent in ADC counts plus acquisition metadata."""

    sample_rate: float
    x1: np.ndarray                 # int16 counts
    x2: np.ndarray
    bit_depth: int = 12
    full_scale: int = 2047
    analog_bandwidth: float = 3e5
    scale: float = 1.0             # counts per sqrt(photon)
    params_hash: str = ""
    seed: int = 0
    clip_fraction: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.x1) != len(self.x2):
            raise ValueError("channels must have equal length")
        if self.sample_rate <= 2.0 * self.analog_bandwidth:
            raise ValueError("sample rate must exceed twice the analog bandwidth")
        for ch in (self.x1, self.x2):
            if len(ch) and int(np.abs(ch).max()) > self.full_scale:
                raise ValueError("samples exceed full scale")

    @property
    def n_samples(self) -> int:
        return len(self.x1)

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) / self.sample_rate


def design_analog_filter(cutoff: float, fs: float):
    """2nd-order low-pass (Butterworth alignment), bilinear discretization."""
    return butter(2, cutoff, btype="low", fs=fs)


def _causal_lowpass(x: np.ndarray, b, a) -> np.ndarray:
    zi = lfilter_zi(b, a) * x[0]
    y, _ = lfilter(b, a, x, zi=zi)
    return y


def synthesize(times: np.ndarray, field_values: np.ndarray, p: PhysicalParams,
               drift: DriftModel = DriftModel(), seed: int = 0,
               sample_rate: float = 1e7, analog_bandwidth: float = 3e5,
               bit_depth: int = 12, full_scale_amplitudes: float = 6.0,
               noise: bool = True, pre_pad: float = 0.0,
               post_pad: float = 0.0, return_analog: bool = False):
    """Synthesize the sampled two-channel photocurrent from a field record.

    The record must be uniform-rate with rate >= sample_rate; pre/post_pad
    seconds of empty-cavity field are prepended/appended (the baseline the
    analysis needs).  Draw order from the seed: initial LO phase, phase
    increments, channel-1 noise, channel-2 noise.  return_analog=True also
    returns the pre-quantization channels in sqrt(photon) units.
    """
    field_values = np.asarray(field_values, dtype=complex)
    if len(times) != len(field_values):
        raise ValueError("times and field record must have equal length")
    if len(times) < 2:
        raise ValueError("field record too short")
    dt_in = float(times[1] - times[0])
    f_in = 1.0 / dt_in
    if f_in < sample_rate * (1.0 - 1e-9):
        raise ValueError(f"record rate {f_in:.3e} below sample rate {sample_rate:.3e}")

    a_empty = empty_cavity_field(p)
    n_pre = int(round(pre_pad * f_in))
    n_post = int(round(post_pad * f_in))
    rec = np.concatenate([np.full(n_pre, a_empty), field_values,
                          np.full(n_post, a_empty)])
    n = len(rec)

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    phi0 = rng.uniform(-math.pi, math.pi)
    increments = rng.standard_normal(n) * math.sqrt(drift.diffusion * dt_in)
    if drift.enabled:
        phi = phi0 + np.cumsum(increments)
        phi[0] = phi0
    else:
        phi = np.zeros(n)

    q_a, q_p = rec.real, rec.imag
    cphi, sphi = np.cos(phi), np.sin(phi)
    x1 = cphi * q_a - sphi * q_p
    x2 = sphi * q_a + cphi * q_p

    sigma = p.beta * math.sqrt(f_in / (4.0 * p.eta * p.kappa_b))
    noise1 = rng.standard_normal(n)
    noise2 = rng.standard_normal(n)
    if noise:
        x1 = x1 + sigma * noise1
        x2 = x2 + sigma * noise2

    b, a = design_analog_filter(analog_bandwidth, f_in)
    x1 = _causal_lowpass(x1, b, a)
    x2 = _causal_lowpass(x2, b, a)

    if abs(f_in - sample_rate) > 1e-6 * sample_rate:
        t_in = np.arange(n) * dt_in
        n_out = int(math.floor(t_in[-1] * sample_rate)) + 1
        t_out = np.arange(n_out) / sample_rate
        x1 = np.interp(t_out, t_in, x1)
        x2 = np.interp(t_out, t_in, x2)

    full_scale = 2 ** (bit_depth - 1) - 1
    scale = full_scale / (full_scale_amplitudes * math.sqrt(p.m_empty)) \
        if p.m_empty > 0 else full_scale / full_scale_amplitudes
    raw1 = np.rint(x1 * scale)
    raw2 = np.rint(x2 * scale)
    clipped = (np.abs(raw1) > full_scale).sum() + (np.abs(raw2) > full_scale).sum()
    clip_fraction = clipped / (len(raw1) + len(raw2))
    if clip_fraction > 1e-3:
        warnings.warn(f"ADC clipping fraction {clip_fraction:.2%} exceeds 0.1%")
    c1 = np.clip(raw1, -full_scale, full_scale).astype(np.int16)
    c2 = np.clip(raw2, -full_scale, full_scale).astype(np.int16)

    trace = QuadratureTrace(
        sample_rate=sample_rate, x1=c1, x2=c2, bit_depth=bit_depth,
        full_scale=full_scale, analog_bandwidth=analog_bandwidth, scale=scale,
        params_hash=params_hash(p), seed=seed, clip_fraction=clip_fraction,
        meta={"m_empty": p.m_empty, "noise": bool(noise),
              "drift": bool(drift.enabled), "pre_pad": pre_pad,
              "post_pad": post_pad, "g0_mhz": p.g0 / (2e6 * math.pi)})
    if return_analog:
        return trace, x1, x2
    return trace


# -- calibration formulas ------------------------------------------------------

def imbalance_efficiency(g_imb: float, phi_imb: float) -> float:
    """Detection-efficiency factor |1 + g e^{i phi}|^2 / (2 (1 + g^2)) from
    gain/phase imbalance of the balanced pair."""
    if g_imb < 0:
        raise ValueError("gain imbalance ratio must be >= 0")
    num = abs(1.0 + g_imb * np.exp(1j * phi_imb)) ** 2
    return float(num / (2.0 * (1.0 + g_imb ** 2)))


def calibrate_photon_number(S: float, N: float, T: float, eta: float,
                            kappa_b: float) -> float:
    """Invert S^2/N = 4 T eta kappa_b m for the intracavity photon number."""
    if N <= 0 or T <= 0 or eta <= 0 or kappa_b <= 0:
        raise ValueError("N, T, eta and kappa_b must all be positive")
    return S ** 2 / (N * 4.0 * T * eta * kappa_b)


@dataclass(frozen=True)
class LoNoiseFit:
    a: float
    b: float
    b_over_a: float
    a_stderr: float
    b_stderr: float


def lo_excess_noise_fit(points) -> LoNoiseFit:
    """Least-squares fit of detector noise vs LO power to n = a P + b P^2.

    Two distinct powers determine the fit exactly; standard errors are
    reported once there are at least three.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be (power, noise) pairs")
    P, nval = pts[:, 0], pts[:, 1]
    if len(np.unique(P)) < 2:
        raise ValueError("need at least 2 distinct powers")
    X = np.column_stack([P, P ** 2])
    coef, _, rank, _ = np.linalg.lstsq(X, nval, rcond=None)
    if rank < 2:
        raise ValueError("rank-deficient design (powers do not separate a and b)")
    a, b = float(coef[0]), float(coef[1])
    dof = len(P) - 2
    if dof > 0:
        resid = nval - X @ coef
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        a_se, b_se = math.sqrt(cov[0, 0]), math.sqrt(cov[1, 1])
    else:
        a_se = b_se = float("nan")
    return LoNoiseFit(a=a, b=b, b_over_a=b / a if a != 0 else float("inf"),
                      a_stderr=a_se, b_stderr=b_se)


def measure_windowed_snr(amplitude_quadrature: np.ndarray, sample_rate: float,
                         window: float) -> tuple:
    """(S, N) from a rotated amplitude-quadrature record: S is the global
    mean, N the variance of disjoint window means (the T-averaged noise
    power entering the photon-number calibration)."""
    w = int(round(window * sample_rate))
    n_win = len(amplitude_quadrature) // w
    if n_win < 2:
        raise ValueError("need at least 2 windows")
    means = amplitude_quadrature[:n_win * w].reshape(n_win, w).mean(axis=1)
    return float(means.mean()), float(means.var(ddof=1))


# -- persistence ---------------------------------------------------------------

def save_trace(trace: QuadratureTrace, path) -> None:
    """version, little-endian JSON header, interleaved int16 (x1, x2) samples."""
    header = {
        "version": TRACE_VERSION,
        "sample_rate": trace.sample_rate,
        "bit_depth": trace.bit_depth,
        "full_scale": trace.full_scale,
        "analog_bandwidth": trace.analog_bandwidth,
        "scale": trace.scale,
        "params_hash": trace.params_hash,
        "seed": trace.seed,
        "clip_fraction": trace.clip_fraction,
        "n_samples": trace.n_samples,
        "meta": trace.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    inter = np.empty(2 * trace.n_samples, dtype="<i2")
    inter[0::2] = trace.x1
    inter[1::2] = trace.x2
    with open(path, "wb") as fh:
        fh.write(TRACE_MAGIC)
        fh.write(struct.pack("<HH", TRACE_VERSION, 0))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(inter.tobytes())


def load_trace(path) -> QuadratureTrace:
    with open(path, "rb") as fh:
        if fh.read(4) != TRACE_MAGIC:
            raise ValueError(f"{path}: not a quadrature-trace file")
        version, _ = struct.unpack("<HH", fh.read(4))
        if version != TRACE_VERSION:
            raise ValueError(f"{path}: unsupported trace version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        inter = np.frombuffer(fh.read(4 * header["n_samples"]), dtype="<i2")
    return QuadratureTrace(
        sample_rate=header["sample_rate"], x1=inter[0::2].astype(np.int16),
        x2=inter[1::2].astype(np.int16), bit_depth=header["bit_depth"],
        full_scale=header["full_scale"],
        analog_bandwidth=header["analog_bandwidth"], scale=header["scale"],
        params_hash=header["params_hash"], seed=header["seed"],
        clip_fraction=header["clip_fraction"], meta=header["meta"])


def export_trace_csv(trace: QuadratureTrace, path) -> None:
    with open(path, "w") as fh:
        fh.write("# sampled quadrature photocurrents (ADC counts)\n")
        fh.write("t_s,x1_counts,x2_counts\n")
        t = trace.times()
        for i in range(trace.n_samples):
            fh.write(f"{float(t[i])!r},{int(trace.x1[i])},{int(trace.x2[i])}\n")
