"""Physical parameters, unit conventions, and the cavity mode geometry.

Internal convention: every rate and detuning is stored as an angular
frequency in rad/s.  Configuration files and presets specify rates as
frequency/2pi in MHz (the usual lab notation, e.g. ``g0 = 11.0`` means
g0/2pi = 11 MHz); lengths, masses and accelerations are SI.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields, replace

import numpy as np

HBAR = 1.054571817e-34  # J s

# Cesium-133 mass; external physical constant, configurable per run.
CS133_MASS = 2.2069e-25  # kg

MHZ = 2.0 * math.pi * 1.0e6  # rad/s per "MHz over 2pi" config unit

# Config keys carrying rates/detunings in MHz-over-2pi units.
_RATE_KEYS = ("g0", "gamma_perp", "kappa_a", "kappa_b", "kappa_c",
              "delta_ap", "theta_cp")
_PLAIN_KEYS = ("m_empty", "waist", "wavelength", "atom_mass", "gravity",
               "eta", "beta")
CONFIG_KEYS = _RATE_KEYS + _PLAIN_KEYS


class ParamsError(ValueError):
    """Invalid physical parameter set."""


@dataclass(frozen=True)
class PhysicalParams:
    """Rates, detunings, geometry and efficiencies of the atom-cavity-detector system.

    All rates/detunings are angular (rad/s).  Immutable; safe to share
    across workers.
    """

    g0: float            # peak coupling (rad/s)
    gamma_perp: float    # atomic dipole decay rate (rad/s)
    kappa_a: float       # input-mirror field decay rate (rad/s)
    kappa_b: float       # output-mirror field decay rate (rad/s)
    kappa_c: float       # internal-loss field decay rate (rad/s)
    delta_ap: float      # atom-probe detuning nu_a - nu_p (rad/s)
    theta_cp: float      # cavity-probe detuning nu_c - nu_p (rad/s)
    m_empty: float       # empty-cavity photon number at theta_cp = 0
    waist: float         # Gaussian mode waist w (m)
    wavelength: float    # probe wavelength (m)
    atom_mass: float     # kg
    gravity: float       # m/s^2, along -z
    eta: float           # overall photodetection efficiency
    beta: float          # excess noise factor (>= 1)

    def __post_init__(self):
        for name in ("g0", "gamma_perp", "kappa_a", "kappa_b", "kappa_c",
                     "m_empty"):
            if getattr(self, name) < 0:
                raise ParamsError(f"{name} must be >= 0")
        if not (0.0 < self.eta <= 1.0):
            raise ParamsError("eta must lie in (0, 1]")
        if self.beta < 1.0:
            raise ParamsError("beta must be >= 1")
        if self.waist <= 0:
            raise ParamsError("waist must be > 0")
        if self.wavelength <= 0:
            raise ParamsError("wavelength must be > 0")
        if self.atom_mass <= 0:
            raise ParamsError("atom_mass must be > 0")
        if self.kappa_total <= 0:
            raise ParamsError("kappa_a + kappa_b + kappa_c must be > 0")

    @property
    def kappa_total(self) -> float:
        return self.kappa_a + self.kappa_b + self.kappa_c

    @property
    def k_probe(self) -> float:
        """Probe wavenumber k_L = 2pi/lambda (1/m)."""
        return 2.0 * math.pi / self.wavelength

    @property
    def spontaneous_rate(self) -> float:
        """Spontaneous emission rate Gamma; radiative two-level relation 2*gamma_perp."""
        return 2.0 * self.gamma_perp

    def replace(self, **kw) -> "PhysicalParams":
        return replace(self, **kw)

    @classmethod
    def reference_preset(cls, coupling: str = "sigma", **overrides) -> "PhysicalParams":
        """Default experiment parameter set.

        coupling="sigma" uses the stretched-transition peak coupling
        g0/2pi = 11 MHz; coupling="pi" uses 6 MHz.  Reports downstream
        always state the active g0.
        """
        g0_mhz = {"sigma": 11.0, "pi": 6.0}.get(coupling)
        if g0_mhz is None:
            raise ParamsError(f"unknown coupling preset {coupling!r}")
        cfg = {
            "g0": g0_mhz,
            "gamma_perp": 2.6,
            "kappa_a": 1.6,
            "kappa_b": 1.6,
            "kappa_c": 0.0,
            "delta_ap": 10.0,
            "theta_cp": 0.0,
            "m_empty": 1.5,
            "waist": 45.0e-6,
            "wavelength": 852.36e-9,
            "atom_mass": CS133_MASS,
            "gravity": 9.8,
            "eta": 0.32,
            "beta": 1.5,
        }
        cfg.update(overrides)
        return cls.from_config(cfg)

    @classmethod
    def from_config(cls, mapping: dict) -> "PhysicalParams":
        """Build from a config mapping (rates in MHz-over-2pi, rest SI)."""
        missing = [k for k in CONFIG_KEYS if k not in mapping]
        if missing:
            raise ParamsError(f"missing config key(s): {', '.join(missing)}")
        unknown = [k for k in mapping if k not in CONFIG_KEYS]
        if unknown:
            raise ParamsError(f"unknown config key(s): {', '.join(unknown)}")
        kw = {}
        for k in _RATE_KEYS:
            kw[k] = float(mapping[k]) * MHZ
        for k in _PLAIN_KEYS:
            kw[k] = float(mapping[k])
        return cls(**kw)

    def to_config(self) -> dict:
        """Inverse of from_config (rates back to MHz-over-2pi)."""
        out = {}
        for k in _RATE_KEYS:
            out[k] = getattr(self, k) / MHZ
        for k in _PLAIN_KEYS:
            out[k] = getattr(self, k)
        return out


def params_hash(p: PhysicalParams) -> str:
    """Stable sha256 of the SI parameter values."""
    payload = {f.name: repr(getattr(p, f.name)) for f in fields(p)}
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def saturation_photon_number(p: PhysicalParams, g: float | None = None) -> float:
    """Saturation photon number gamma_perp^2 / (2 g^2) at coupling g (default g0)."""
    g = p.g0 if g is None else g
    if g == 0:
        raise ParamsError("saturation photon number undefined at g = 0")
    return p.gamma_perp ** 2 / (2.0 * g ** 2)


def cooperativity(p: PhysicalParams, g: float | None = None) -> float:
    """Cooperativity C = g^2 / (2 kappa_total gamma_perp)."""
    g = p.g0 if g is None else g
    denom = 2.0 * p.kappa_total * p.gamma_perp
    if denom == 0:
        raise ParamsError("cooperativity undefined: kappa_total * gamma_perp = 0")
    return g ** 2 / denom


def drive_amplitude(p: PhysicalParams) -> float:
    """Drive amplitude E >= 0 such that m_empty = 2 kappa_a E^2 / kappa_total^2."""
    if p.kappa_a <= 0:
        raise ParamsError("drive_amplitude requires kappa_a > 0")
    return p.kappa_total * math.sqrt(p.m_empty / (2.0 * p.kappa_a))


def empty_cavity_field(p: PhysicalParams) -> complex:
    """Steady intracavity field of the bare driven cavity, sqrt(2 kappa_a) E / (kappa_total + i theta_cp)."""
    e = drive_amplitude(p)
    return math.sqrt(2.0 * p.kappa_a) * e / (p.kappa_total + 1j * p.theta_cp)


def mode_coupling(p: PhysicalParams, r) -> tuple:
    """Coupling g(r) and its analytic gradient at position(s) r.

    r has shape (3,) or (..., 3); x is the standing-wave axis, z is
    vertical.  g(r) = g0 cos(k x) exp(-(y^2+z^2)/w^2).
    Returns (g, grad) with grad shape (..., 3).
    """
    r = np.asarray(r, dtype=float)
    x, y, z = r[..., 0], r[..., 1], r[..., 2]
    k = p.k_probe
    inv_w2 = 1.0 / p.waist ** 2
    envelope = np.exp(-(y ** 2 + z ** 2) * inv_w2)
    g = p.g0 * np.cos(k * x) * envelope
    grad = np.empty(r.shape, dtype=float)
    grad[..., 0] = -p.g0 * k * np.sin(k * x) * envelope
    grad[..., 1] = -2.0 * y * inv_w2 * g
    grad[..., 2] = -2.0 * z * inv_w2 * g
    return g, grad
