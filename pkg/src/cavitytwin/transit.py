"""Stochastic 3-D center-of-mass transits through the cavity mode.

Ito-Euler integration (strong order 0.5): per step the momentum picks up
the mean cavity force, gravity, a dipole-diffusion kick along the
standing-wave axis and an isotropic recoil kick, all evaluated at the
pre-step position; the position then advances with the updated momentum
(the symplectic sequencing, which keeps the noise-free energy drift
bounded).  Everything except the classical motion is slaved to the
precomputed steady-state tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .params import HBAR, PhysicalParams
from .tables import COUPLING_CUTOFF_WAISTS, SteadyTables

# SeedSequence stage tags for the documented master-seed derivation scheme.
STAGE_TRANSIT = 1
STAGE_TRACE = 2


@dataclass(frozen=True)
class TransitConfig:
    """Timestep, duration, launch condition ranges and the RNG seed."""

    dt: float = 7.5e-9
    duration: float = 1.2e-3
    z0_waists: float = 7.0          # launch height in waists above the axis
    vz0: float = -0.47              # m/s
    # Launch ranges narrow enough that a sizeable fraction of drops give a
    # detectable signal (transverse velocity drifts the atom off-axis over
    # the ~0.7 ms fall, so the velocity spread matters most).
    x0_range: tuple | None = None   # default [0, lambda/2)
    y0_range: tuple | None = None   # default [-w/2, w/2]
    vx0_range: tuple = (-0.03, 0.03)
    vy0_range: tuple = (-0.03, 0.03)
    decimation: int = 10            # record every n-th step
    seed: int = 0
    recoil_mode: str = "per_axis"   # or "total": D_rec split over the 3 axes
    exit_waists: float = 8.0        # stop once z < -exit_waists * w
    noise: bool = True              # False: deterministic mean-force motion
    gravity: bool = True            # False: drop the constant -z acceleration

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.duration / self.dt > 1e7:
            raise ValueError("duration/dt exceeds the 1e7 runaway guard")
        if self.recoil_mode not in ("per_axis", "total"):
            raise ValueError(f"unknown recoil_mode {self.recoil_mode!r}")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")


@dataclass
class AtomState:
    r: np.ndarray  # position (m), shape (3,)
    v: np.ndarray  # velocity (m/s), shape (3,)


@dataclass
class AtomTrajectory:
    """Decimated record of one simulated transit."""

    t: np.ndarray          # s, uniform grid
    positions: np.ndarray  # (n, 3) m
    velocities: np.ndarray  # (n, 3) m/s
    g: np.ndarray          # signed coupling g(r(t)), rad/s
    field: np.ndarray      # complex steady <a>(g(t))
    decimation: int
    seed: int
    terminated_early: bool = False
    adiabaticity_strained: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.positions).all() and np.isfinite(self.velocities).all()):
            raise ValueError("non-finite trajectory samples")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0


class _Kernel:
    """Precomputed scalars and table arrays for the inner integration loop."""

    def __init__(self, tables: SteadyTables, p: PhysicalParams, cfg: TransitConfig, dt: float):
        self.k = p.k_probe
        self.g0 = p.g0
        self.inv_w2 = 1.0 / p.waist ** 2
        self.cut2 = (COUPLING_CUTOFF_WAISTS * p.waist) ** 2
        self.mass = p.atom_mass
        self.grav = p.gravity if cfg.gravity else 0.0
        self.noise = 1.0 if cfg.noise else 0.0
        self.dt = dt
        n = tables.n_grid
        self.inv_dg = (n - 1) / p.g0
        self.s_tab = np.ascontiguousarray(tables.force_scalar)
        self.d_tab = np.ascontiguousarray(tables.dipole_corr)
        self.e_tab = np.ascontiguousarray(tables.excitation)
        self.f_re = np.ascontiguousarray(tables.field.real)
        self.f_im = np.ascontiguousarray(tables.field.imag)
        self.n_top = n - 2
        rec_scale = (HBAR * self.k) ** 2 * (p.spontaneous_rate / 25.0)
        if cfg.recoil_mode == "total":
            rec_scale /= 3.0
        self.rec_scale = rec_scale
        self.hbar = HBAR

    def step(self, x, y, z, vx, vy, vz, x1, x2, x3, x4):
        """One Ito-Euler step from pre-step state; returns the new state."""
        k = self
        dt = k.dt
        t2 = y * y + z * z
        if t2 > k.cut2:
            # negligible coupling: ballistic fall
            vz -= k.grav * dt
            return (x + vx * dt, y + vy * dt, z + vz * dt, vx, vy, vz)
        gauss = math.exp(-t2 * k.inv_w2)
        c = math.cos(k.k * x)
        g = k.g0 * c * gauss
        ag = abs(g)
        fi = ag * k.inv_dg
        i = int(fi)
        if i > k.n_top:
            i = k.n_top
        w1 = fi - i
        w0 = 1.0 - w1
        s = (k.s_tab[i] * w0 + k.s_tab[i + 1] * w1) * (1.0 if g >= 0.0 else -1.0)
        dcorr = k.d_tab[i] * w0 + k.d_tab[i + 1] * w1
        ecorr = k.e_tab[i] * w0 + k.e_tab[i + 1] * w1

        dgdx = -k.g0 * k.k * math.sin(k.k * x) * gauss
        dgdy = -2.0 * y * k.inv_w2 * g
        dgdz = -2.0 * z * k.inv_w2 * g

        hs = k.hbar * s
        d_dip = k.hbar * k.hbar * dgdx * dgdx * dcorr
        d_rec = k.rec_scale * ecorr
        kick_dip = k.noise * math.sqrt(2.0 * d_dip * dt)
        kick_rec = k.noise * math.sqrt(2.0 * d_rec * dt)

        inv_m = 1.0 / k.mass
        vx += (hs * dgdx * dt + kick_dip * x1 + kick_rec * x2) * inv_m
        vy += (hs * dgdy * dt + kick_rec * x3) * inv_m
        vz += (hs * dgdz * dt + kick_rec * x4) * inv_m - k.grav * dt
        return (x + vx * dt, y + vy * dt, z + vz * dt, vx, vy, vz)

    def coupling(self, x, y, z):
        t2 = y * y + z * z
        if t2 > self.cut2:
            return 0.0
        return self.g0 * math.cos(self.k * x) * math.exp(-t2 * self.inv_w2)

    def field_at(self, ag):
        fi = ag * self.inv_dg
        i = int(fi)
        if i > self.n_top:
            i = self.n_top
        w1 = fi - i
        w0 = 1.0 - w1
        return (self.f_re[i] * w0 + self.f_re[i + 1] * w1,
                self.f_im[i] * w0 + self.f_im[i + 1] * w1)


def step(state: AtomState, tables: SteadyTables, p: PhysicalParams, dt: float,
         noise: np.ndarray, cfg: TransitConfig | None = None) -> AtomState:
    """Single integrator step; noise holds the 4 standard-normal draws
    (dipole kick, then recoil kicks on x, y, z)."""
    cfg = cfg or TransitConfig(dt=dt)
    kern = _Kernel(tables, p, cfg, dt)
    out = kern.step(state.r[0], state.r[1], state.r[2],
                    state.v[0], state.v[1], state.v[2],
                    float(noise[0]), float(noise[1]), float(noise[2]), float(noise[3]))
    new = AtomState(r=np.array(out[:3]), v=np.array(out[3:]))
    if not (np.isfinite(new.r).all() and np.isfinite(new.v).all()):
        raise RuntimeError(f"non-finite state after step from r={state.r}, v={state.v}")
    return new


def _draw_initials(cfg: TransitConfig, p: PhysicalParams, rng: np.random.Generator):
    x_lo, x_hi = cfg.x0_range if cfg.x0_range is not None else (0.0, p.wavelength / 2.0)
    y_lo, y_hi = cfg.y0_range if cfg.y0_range is not None else (-p.waist / 2.0, p.waist / 2.0)
    x0 = rng.uniform(x_lo, x_hi)
    y0 = rng.uniform(y_lo, y_hi)
    vx0 = rng.uniform(*cfg.vx0_range)
    vy0 = rng.uniform(*cfg.vy0_range)
    return x0, y0, cfg.z0_waists * p.waist, vx0, vy0, cfg.vz0


def run_transit(cfg: TransitConfig, tables: SteadyTables, p: PhysicalParams) -> AtomTrajectory:
    """Simulate one atom drop; deterministic for a given (cfg, tables, params)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed))
    x, y, z, vx, vy, vz = _draw_initials(cfg, p, rng)

    n_steps = int(round(cfg.duration / cfg.dt))
    dec = cfg.decimation
    n_rec = n_steps // dec + 1
    kern = _Kernel(tables, p, cfg, cfg.dt)

    t_rec = np.empty(n_rec)
    pos = np.empty((n_rec, 3))
    vel = np.empty((n_rec, 3))
    g_rec = np.empty(n_rec)
    f_rec = np.empty(n_rec, dtype=complex)

    strain_limit = p.wavelength / 20.0 / cfg.dt  # |vx| above this strains adiabaticity
    z_exit = -cfg.exit_waists * p.waist
    strained = False
    early = False

    chunk = 8192
    noise = rng.standard_normal((chunk, 4))
    ni = chunk  # force first refill
    i_rec = 0
    i = 0
    while i <= n_steps:
        if i % dec == 0:
            g = kern.coupling(x, y, z)
            fr, fi_ = kern.field_at(abs(g))
            t_rec[i_rec] = i * cfg.dt
            pos[i_rec] = (x, y, z)
            vel[i_rec] = (vx, vy, vz)
            g_rec[i_rec] = g
            f_rec[i_rec] = complex(fr, fi_)
            i_rec += 1
        if i == n_steps:
            break
        if ni >= chunk:
            noise = rng.standard_normal((chunk, 4))
            ni = 0
        x1, x2, x3, x4 = noise[ni]
        ni += 1
        x, y, z, vx, vy, vz = kern.step(x, y, z, vx, vy, vz, x1, x2, x3, x4)
        if abs(vx) > strain_limit:
            strained = True
        i += 1
        if z < z_exit:
            # far below the axis: coupling is dead, stop (keeps the grid uniform)
            early = True
            break

    if not (np.isfinite(pos[:i_rec]).all() and np.isfinite(vel[:i_rec]).all()):
        raise RuntimeError("trajectory produced non-finite samples")
    return AtomTrajectory(t=t_rec[:i_rec], positions=pos[:i_rec], velocities=vel[:i_rec],
                          g=g_rec[:i_rec], field=f_rec[:i_rec], decimation=dec,
                          seed=cfg.seed, terminated_early=early,
                          adiabaticity_strained=strained)


def derive_seed(master_seed: int, stage: int, index: int) -> int:
    """Documented counter scheme: one 64-bit stream seed per (stage, index)."""
    ss = np.random.SeedSequence(entropy=(int(master_seed), int(stage), int(index)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class EnsembleResult:
    trajectories: list
    seeds: list
    failures: list  # (index, message)


def run_ensemble(n: int, cfg: TransitConfig, tables: SteadyTables,
                 p: PhysicalParams, workers: int = 1) -> EnsembleResult:
    """n independent transits with per-trajectory streams derived from cfg.seed.

    Per-trajectory failures are collected, not raised; results are keyed by
    index so worker scheduling cannot reorder them.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    seeds = [derive_seed(cfg.seed, STAGE_TRANSIT, i) for i in range(n)]
    configs = [replace(cfg, seed=s) for s in seeds]
    trajectories: list = [None] * n
    failures = []

    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_transit_job, configs[i], tables, p, i) for i in range(n)]
            for fut in futs:
                idx, traj, err = fut.result()
                if err is None:
                    trajectories[idx] = traj
                else:
                    failures.append((idx, err))
    else:
        for i in range(n):
            try:
                trajectories[i] = run_transit(configs[i], tables, p)
            except Exception as exc:  # noqa: BLE001 - aggregate, do not abort
                failures.append((i, str(exc)))
    return EnsembleResult(trajectories=trajectories, seeds=seeds, failures=failures)


def _run_transit_job(cfg, tables, p, idx):
    try:
        return idx, run_transit(cfg, tables, p), None
    except Exception as exc:  # noqa: BLE001
        return idx, None, str(exc)


def trajectory_to_ndjson(traj: AtomTrajectory, fh) -> None:
    """One record per decimated sample: {t, x, y, z, vx, vy, vz, g, re_a, im_a}."""
    for i in range(len(traj.t)):
        rec = {
            "t": traj.t[i],
            "x": traj.positions[i, 0], "y": traj.positions[i, 1], "z": traj.positions[i, 2],
            "vx": traj.velocities[i, 0], "vy": traj.velocities[i, 1], "vz": traj.velocities[i, 2],
            "g": traj.g[i], "re_a": traj.field[i].real, "im_a": traj.field[i].imag,
        }
        fh.write(json.dumps(rec) + "\n")
