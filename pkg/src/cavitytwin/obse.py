"""Semiclassical optical bistability state equation (OBSE).

The intracavity field obeys y = x * (1 + 2C/(1 + delta^2 + |x|^2)
+ i (phi - 2 C delta)/(1 + delta^2 + |x|^2)) in scaled variables
x = <a>/sqrt(m0), y = sqrt(2 kappa_a) E / ((kappa_a + kappa_b) sqrt(m0)).
Saturation is taken on the intensity |x|^2, so the intensity X = |x|^2
satisfies a real cubic with up to three nonnegative roots (bistability).

The dispersive term above divides the scaled cavity detuning phi by the
saturation factor; the textbook variant divides only the 2*C*delta part.
Both forms coincide at phi = 0 and are selectable via ``form``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import PhysicalParams, cooperativity, drive_amplitude, saturation_photon_number

FORMS = ("printed", "conventional")


@dataclass(frozen=True)
class ObseParams:
    """Scaled-variable inputs: cooperativity, detunings, drive and saturation scale."""

    C: float        # cooperativity at the working coupling
    delta: float    # (nu_a - nu_p) / gamma_perp
    phi: float      # (nu_c - nu_p) / kappa_total
    y: complex      # scaled drive
    m0: float       # saturation photon number at the working coupling

    def __post_init__(self):
        if self.m0 <= 0:
            raise ValueError("m0 must be > 0")
        if self.C < 0:
            raise ValueError("C must be >= 0")


def obse_params(p: PhysicalParams, g: float) -> ObseParams:
    """Scaled OBSE parameters for physical params at coupling g (g != 0)."""
    m0 = saturation_photon_number(p, g)
    e = drive_amplitude(p)
    y = math.sqrt(2.0 * p.kappa_a) * e / ((p.kappa_a + p.kappa_b) * math.sqrt(m0))
    return ObseParams(C=cooperativity(p, g), delta=p.delta_ap / p.gamma_perp,
                      phi=p.theta_cp / p.kappa_total, y=y, m0=m0)


@dataclass(frozen=True)
class RootSet:
    values: np.ndarray          # distinct nonnegative roots, ascending
    multiplicities: np.ndarray  # matching multiplicities

    @property
    def count(self) -> int:
        return int(self.multiplicities.sum())


def _cubic_coeffs(o: ObseParams, form: str) -> tuple:
    A = 1.0 + o.delta ** 2
    Y = abs(o.y) ** 2
    C, d, phi = o.C, o.delta, o.phi
    if form == "printed":
        B = phi - 2.0 * C * d
        return (1.0,
                2.0 * (A + 2.0 * C) - Y,
                (A + 2.0 * C) ** 2 + B ** 2 - 2.0 * A * Y,
                -Y * A ** 2)
    if form == "conventional":
        return (1.0 + phi ** 2,
                2.0 * A * (1.0 + phi ** 2) + 4.0 * C * (1.0 - d * phi) - Y,
                (1.0 + phi ** 2) * A ** 2 + 4.0 * C * A * (1.0 - d * phi)
                + 4.0 * C ** 2 * A - 2.0 * A * Y,
                -Y * A ** 2)
    raise ValueError(f"unknown OBSE form {form!r}")


def _saturation_response(o: ObseParams, X: float, form: str) -> complex:
    """The complex factor y/x at intensity X."""
    u = 1.0 + o.delta ** 2 + X
    if form == "printed":
        return 1.0 + 2.0 * o.C / u + 1j * (o.phi - 2.0 * o.C * o.delta) / u
    return 1.0 + 2.0 * o.C / u + 1j * (o.phi - 2.0 * o.C * o.delta / u)


def _drive_intensity(o: ObseParams, X: float, form: str) -> float:
    return X * abs(_saturation_response(o, X, form)) ** 2


def obse_intensity_roots(o: ObseParams, form: str = "printed") -> RootSet:
    """All nonnegative real intensity roots X = |x|^2, sorted ascending.

    Each root is Newton-polished on the real cubic and verified by
    back-substitution into the state equation to 1e-9 relative.
    """
    Y = abs(o.y) ** 2
    if not math.isfinite(Y):
        raise ValueError("|y|^2 must be finite")
    if Y == 0.0:
        return RootSet(values=np.array([0.0]), multiplicities=np.array([1]))

    coeffs = np.array(_cubic_coeffs(o, form), dtype=float)
    raw = np.roots(coeffs)
    scale = max(abs(r) for r in raw) or 1.0
    real = [r.real for r in raw if abs(r.imag) <= 1e-8 * max(scale, 1.0)]
    poly = np.polynomial.Polynomial(coeffs[::-1])
    dpoly = poly.deriv()

    polished = []
    for x in real:
        if x < -1e-9 * scale:
            continue
        x = max(x, 0.0)
        for _ in range(3):  # Newton polish; double roots just stall harmlessly
            f, df = poly(x), dpoly(x)
            if df != 0.0 and abs(f) > 0.0:
                step = f / df
                if abs(step) < 0.5 * max(abs(x), 1.0):
                    x = max(x - step, 0.0)
        polished.append(x)
    polished.sort()

    # cluster near-equal roots into multiplicities
    values, mult = [], []
    for x in polished:
        if values and abs(x - values[-1]) <= 1e-6 * max(abs(x), abs(values[-1]), 1e-12):
            mult[-1] += 1
            values[-1] = 0.5 * (values[-1] + x)
        else:
            values.append(x)
            mult.append(1)

    for x, m in zip(values, mult):
        resid = abs(_drive_intensity(o, x, form) - Y)
        tol = 1e-9 * max(Y, 1e-300) * (1.0 if m == 1 else 1e3)
        if resid > tol and m == 1:
            raise RuntimeError(
                f"intensity root {x} fails back-substitution (residual {resid:.3e})")
    return RootSet(values=np.asarray(values), multiplicities=np.asarray(mult, dtype=int))


@dataclass(frozen=True)
class BranchInfo:
    branch: str
    n_roots: int
    intensity: float
    ambiguous: bool  # more than one root existed at the operating point


def obse_field(o: ObseParams, branch: str = "adiabatic",
               form: str = "printed") -> tuple:
    """Complex scaled field x for the chosen branch policy.

    Policies: "adiabatic" follows the root continuously connected to X = 0
    as the drive ramps up from zero (jumping only when that branch
    disappears); "lowest"/"highest" pick the extreme intensity roots.
    Returns (x, BranchInfo).
    """
    roots = obse_intensity_roots(o, form)
    n = roots.count
    if n == 1 or branch == "lowest":
        X = float(roots.values[0])
    elif branch == "highest":
        X = float(roots.values[-1])
    elif branch == "adiabatic":
        X = _adiabatic_intensity(o, form)
    else:
        raise ValueError(f"unknown branch policy {branch!r}")
    x = o.y / _saturation_response(o, X, form)
    return x, BranchInfo(branch=branch, n_roots=n, intensity=X, ambiguous=n > 1)


def _adiabatic_intensity(o: ObseParams, form: str, n_ramp: int = 400) -> float:
    """Track the intensity root from zero drive up to |y|^2 by continuity."""
    Y_target = abs(o.y) ** 2
    X = 0.0
    for k in range(1, n_ramp + 1):
        yk = o.y * math.sqrt(k / n_ramp)
        ok = ObseParams(C=o.C, delta=o.delta, phi=o.phi, y=yk, m0=o.m0)
        vals = obse_intensity_roots(ok, form).values
        X = float(vals[np.argmin(np.abs(vals - X))])
    return X


def semiclassical_field(p: PhysicalParams, g: float, branch: str = "adiabatic",
                        form: str = "printed", with_info: bool = False):
    """Semiclassical intracavity field <a>_sc = x sqrt(m0) at coupling g.

    g = 0 reduces to the empty-cavity field of the scaled drive variable,
    sqrt(2 kappa_a) E / ((kappa_a + kappa_b)(1 + i phi)).
    """
    if g == 0.0:
        e = drive_amplitude(p)
        y_unscaled = math.sqrt(2.0 * p.kappa_a) * e / (p.kappa_a + p.kappa_b)
        val = y_unscaled / (1.0 + 1j * p.theta_cp / p.kappa_total)
        return (val, BranchInfo(branch, 1, abs(val) ** 2, False)) if with_info else val
    o = obse_params(p, g)
    x, info = obse_field(o, branch, form)
    val = x * math.sqrt(o.m0)
    return (val, info) if with_info else val
