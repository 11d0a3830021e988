"""Precomputed steady-state observables versus coupling g, and the mapping
from atomic position to mean force and momentum-diffusion coefficients.

All steady-state properties of the coupled system depend on position only
through the local coupling g(r), so the tables are one-dimensional on a
uniform grid over [0, g0].  Parity fixes the extension to negative g:
the field, excitation and dipole-correlation tables are even, the force
scalar is odd.  The dipole diffusion acts along the standing-wave axis
(D = hbar^2 (dg/dx)^2 d(g)); recoil diffusion is isotropic per axis with
coefficient (hbar k)^2 (Gamma/25) <sigma^+ sigma^->.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .params import HBAR, PhysicalParams, mode_coupling, params_hash
from .steady import (HilbertConfig, Liouvillian, default_n_fock, expectations,
                     force_observable, qrt_correlation_integral, steady_state)

TABLE_MAGIC = b"CQTB"
TABLE_VERSION = 1
COUPLING_CUTOFF_WAISTS = 6.0  # beyond this transverse offset the coupling is treated as zero


class TableBuildError(RuntimeError):
    """A node solve or a build-time consistency check failed."""


class TableHashError(ValueError):
    """Loaded tables do not match the requested parameter set."""


@dataclass
class SteadyTables:
    """Per-coupling steady observables on a uniform grid over [0, g0]."""

    g_grid: np.ndarray        # rad/s, ascending, g_grid[0] = 0
    field: np.ndarray         # complex <a>(g), sqrt(photon) units
    excitation: np.ndarray    # <sigma^dag sigma>(g)
    force_scalar: np.ndarray  # s(g), dimensionless, odd in g
    dipole_corr: np.ndarray   # d(g), seconds; D_dipole = hbar^2 (dg/dx)^2 d
    params: PhysicalParams
    n_fock: int
    params_hash: str = ""
    potential: np.ndarray = field(default=None, repr=False)  # -hbar * cumint(s dg)

    def __post_init__(self):
        if self.params_hash == "":
            self.params_hash = params_hash(self.params)
        if self.potential is None:
            # U(g) = -hbar Int_0^g s dg', even under g -> -g since s is odd.
            s, g = self.force_scalar, self.g_grid
            seg = 0.5 * (s[1:] + s[:-1]) * np.diff(g)
            self.potential = -HBAR * np.concatenate([[0.0], np.cumsum(seg)])

    @property
    def n_grid(self) -> int:
        return len(self.g_grid)

    def _interp_even(self, table: np.ndarray, g):
        return np.interp(np.abs(g), self.g_grid, table)

    def field_at(self, g):
        """<a>(g); even in g."""
        re = self._interp_even(self.field.real, g)
        im = self._interp_even(self.field.imag, g)
        return re + 1j * im

    def excitation_at(self, g):
        return self._interp_even(self.excitation, g)

    def force_scalar_at(self, g):
        """s(g); odd in g."""
        return np.sign(g) * self._interp_even(self.force_scalar, g)

    def dipole_corr_at(self, g):
        return self._interp_even(self.dipole_corr, g)

    def potential_at(self, g):
        """Adiabatic dipole potential U(g) = -hbar Int_0^|g| s dg' (J)."""
        return self._interp_even(self.potential, g)


def _solve_node(args):
    p, n_fock, g = args
    hc = HilbertConfig(n_fock)
    L = Liouvillian(p, hc, g)
    rho = steady_state(L)
    ex = expectations(rho, hc)
    d = qrt_correlation_integral(L, rho, force_observable(hc))
    return ex.field, ex.excitation, ex.force_scalar, d


def build_tables(p: PhysicalParams, n_grid: int = 201, n_fock: int | None = None,
                 workers: int = 1, check_truncation: bool = True,
                 check_interpolation: int = 4) -> SteadyTables:
    """Solve the steady state and correlation integral on a uniform g grid.

    check_truncation re-solves representative nodes with n_fock + 8 and
    rejects the build if steady <a> moves by more than 1e-6.
    check_interpolation spot-solves that many interval midpoints and rejects
    the build if linear interpolation misses by more than 0.5 % of each
    table's maximum.
    """
    if n_grid < 33:
        raise ValueError("n_grid must be >= 33")
    if n_fock is None:
        n_fock = default_n_fock(p.m_empty)

    g_grid = np.linspace(0.0, p.g0, n_grid)
    jobs = [(p, n_fock, g) for g in g_grid]
    results = [None] * n_grid
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {pool.submit(_solve_node, job): i for i, job in enumerate(jobs)}
            for fut, i in futs.items():
                try:
                    results[i] = fut.result()
                except Exception as exc:  # noqa: BLE001 - annotate with node index
                    raise TableBuildError(
                        f"node {i} (g = {g_grid[i]:.4e} rad/s): {exc}") from exc
    else:
        for i, job in enumerate(jobs):
            try:
                results[i] = _solve_node(job)
            except Exception as exc:  # noqa: BLE001
                raise TableBuildError(
                    f"node {i} (g = {g_grid[i]:.4e} rad/s): {exc}") from exc

    fields = np.array([r[0] for r in results], dtype=complex)
    excitation = np.array([r[1] for r in results])
    force_scalar = np.array([r[2] for r in results])
    dipole_corr = np.array([r[3] for r in results])

    if (excitation < -1e-12).any() or (excitation > 1.0 + 1e-12).any():
        raise TableBuildError("excitation left [0, 1]")
    if (dipole_corr < -1e-12 * max(dipole_corr.max(), 1e-300)).any():
        raise TableBuildError("negative dipole correlation integral")
    dipole_corr = np.clip(dipole_corr, 0.0, None)
    excitation = np.clip(excitation, 0.0, 1.0)

    if check_truncation:
        hc_big = n_fock + 8
        for idx in (0, n_grid // 2, n_grid - 1):
            a_big = _solve_node((p, hc_big, g_grid[idx]))[0]
            if abs(a_big - fields[idx]) > 1e-6:
                raise TableBuildError(
                    f"truncation not converged at g = {g_grid[idx]:.4e}: "
                    f"n_fock {n_fock} -> {hc_big} moves <a> by "
                    f"{abs(a_big - fields[idx]):.3e}")

    tables = SteadyTables(g_grid=g_grid, field=fields, excitation=excitation,
                          force_scalar=force_scalar, dipole_corr=dipole_corr,
                          params=p, n_fock=n_fock)

    if check_interpolation:
        idxs = np.linspace(0, n_grid - 2, check_interpolation).astype(int)
        scales = {
            "field": np.abs(fields).max(),
            "excitation": max(excitation.max(), 1e-300),
            "force_scalar": max(np.abs(force_scalar).max(), 1e-300),
            "dipole_corr": max(dipole_corr.max(), 1e-300),
        }
        for i in idxs:
            g_mid = 0.5 * (g_grid[i] + g_grid[i + 1])
            f_mid, e_mid, s_mid, d_mid = _solve_node((p, n_fock, g_mid))
            checks = [
                ("field", abs(tables.field_at(g_mid) - f_mid), scales["field"]),
                ("excitation", abs(tables.excitation_at(g_mid) - e_mid), scales["excitation"]),
                ("force_scalar", abs(tables.force_scalar_at(g_mid) - s_mid), scales["force_scalar"]),
                ("dipole_corr", abs(tables.dipole_corr_at(g_mid) - d_mid), scales["dipole_corr"]),
            ]
            for name, err, scale in checks:
                if err > 5e-3 * scale:
                    raise TableBuildError(
                        f"interpolation error {err:.3e} in {name} at "
                        f"g = {g_mid:.4e} exceeds 0.5% of max ({scale:.3e})")
    return tables


@dataclass(frozen=True)
class DiffusionCoefficients:
    dipole_x: float  # kg^2 m^2 / s^3, applied along the standing-wave axis
    recoil: float    # kg^2 m^2 / s^3, applied per axis


def _transverse_outside(p: PhysicalParams, r) -> bool:
    return (abs(r[1]) > COUPLING_CUTOFF_WAISTS * p.waist
            or abs(r[2]) > COUPLING_CUTOFF_WAISTS * p.waist)


def mean_force(t: SteadyTables, p: PhysicalParams, r) -> np.ndarray:
    """Mean cavity force hbar s(g(r)) grad g(r) (N); zero beyond 6 waists."""
    r = np.asarray(r, dtype=float)
    if _transverse_outside(p, r):
        return np.zeros(3)
    g, grad = mode_coupling(p, r)
    return HBAR * t.force_scalar_at(g) * grad


def diffusion(t: SteadyTables, p: PhysicalParams, r) -> DiffusionCoefficients:
    """Dipole (along x) and per-axis recoil momentum-diffusion coefficients."""
    r = np.asarray(r, dtype=float)
    if _transverse_outside(p, r):
        return DiffusionCoefficients(0.0, 0.0)
    g, grad = mode_coupling(p, r)
    d_dip = HBAR ** 2 * grad[0] ** 2 * t.dipole_corr_at(g)
    d_rec = (HBAR * p.k_probe) ** 2 * (p.spontaneous_rate / 25.0) * t.excitation_at(g)
    return DiffusionCoefficients(float(d_dip), float(d_rec))


# -- persistence --------------------------------------------------------------

_ARRAYS = ("g_grid", "field", "excitation", "force_scalar", "dipole_corr")


def save_tables(t: SteadyTables, path) -> None:
    """Versioned little-endian binary dump (header JSON + raw arrays)."""
    header = {
        "version": TABLE_VERSION,
        "params": t.params.to_config(),
        "params_hash": t.params_hash,
        "n_fock": t.n_fock,
        "n_grid": t.n_grid,
        "arrays": [{"name": name,
                    "dtype": str(getattr(t, name).dtype),
                    "shape": list(getattr(t, name).shape)}
                   for name in _ARRAYS],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<HH", TABLE_VERSION, 0))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in _ARRAYS:
            arr = np.ascontiguousarray(getattr(t, name))
            fh.write(arr.astype(arr.dtype.newbyteorder("<")).tobytes())


def load_tables(path, params: PhysicalParams | None = None) -> SteadyTables:
    """Load a table file; refuses tables whose hash mismatches params."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TABLE_MAGIC:
            raise ValueError(f"{path}: not a steady-tables file")
        version, _ = struct.unpack("<HH", fh.read(4))
        if version != TABLE_VERSION:
            raise ValueError(f"{path}: unsupported table version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        arrays = {}
        for entry in header["arrays"]:
            dtype = np.dtype(entry["dtype"]).newbyteorder("<")
            count = int(np.prod(entry["shape"]))
            arr = np.frombuffer(fh.read(count * dtype.itemsize), dtype=dtype)
            arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    file_params = PhysicalParams.from_config(header["params"])
    if header["params_hash"] != params_hash(file_params):
        raise TableHashError(f"{path}: header hash does not match stored params")
    if params is not None and params_hash(params) != header["params_hash"]:
        raise TableHashError(
            f"{path}: tables were built for a different parameter set "
            f"({header['params_hash'][:12]}... vs {params_hash(params)[:12]}...)")
    return SteadyTables(params=file_params, n_fock=header["n_fock"],
                        params_hash=header["params_hash"], **arrays)


def tables_to_csv(t: SteadyTables, path) -> None:
    """Steady-state records {g, Re<a>, Im<a>, excitation, s, d} as CSV."""
    with open(path, "w") as fh:
        fh.write("# steady-state tables; units: g rad/s; field sqrt(photon); "
                 "excitation dimensionless; force scalar dimensionless; "
                 "dipole correlation s\n")
        fh.write("g_rad_per_s,re_field,im_field,excitation,force_scalar,dipole_corr_s\n")
        for i in range(t.n_grid):
            fh.write(f"{float(t.g_grid[i])!r},{float(t.field[i].real)!r},"
                     f"{float(t.field[i].imag)!r},{float(t.excitation[i])!r},"
                     f"{float(t.force_scalar[i])!r},{float(t.dipole_corr[i])!r}\n")
