"""Monte Carlo for the mode-ell stochastic shear equation.

Each path solves

    d phi = nu phi'' dt - i sqrt(2 kappa) ell sum_j u_j(y) phi o dW_j

by Strang splitting: half heat step, the exact Stratonovich phase for the full
increment, half heat step.  Increments come from per-path Philox streams keyed
by (seed, path index), so results do not depend on batching or thread count.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import numerics as nm
from .profiles import ProfileFamily

log = logging.getLogger(__name__)

BATCH = 256


class PathBlowup(ArithmeticError):
    pass


@dataclass
class SimConfig:
    nu: float
    kappa: float
    ell: int
    family: ProfileFamily
    N: int
    dt: float
    T: float
    n_paths: int
    seed: int = 0
    checkpoints: int = 0  # number of evenly spaced checkpoints for g_hat (0: none)
    antithetic: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.dt <= 0 or self.T <= 0:
            raise ValueError("dt and T must be positive")
        steps = self.T / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise ValueError(f"T/dt = {steps} is not an integer")
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if self.antithetic and self.n_paths % 2:
            raise ValueError("antithetic sampling needs an even number of paths")
        nm.TorusGrid(self.N)

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def amplitude(self) -> float:
        return math.sqrt(2.0 * self.kappa) * self.ell

    def checkpoint_steps(self) -> list[int]:
        if self.checkpoints <= 0:
            return []
        idx = np.linspace(0, self.steps, self.checkpoints + 1)[1:]
        return sorted({int(round(i)) for i in idx})


def path_increments(seed: int, path: int, steps: int, n_profiles: int, dt: float) -> np.ndarray:
    """Brownian increments, shape (steps, n_profiles), for one path index."""
    ss = np.random.SeedSequence([int(seed) & (2 ** 64 - 1), int(path)])
    rng = np.random.Generator(np.random.Philox(ss))
    return math.sqrt(dt) * rng.standard_normal((steps, n_profiles))


def _increments(cfg: SimConfig, paths: range, n_profiles: int) -> np.ndarray:
    out = np.empty((len(paths), cfg.steps, n_profiles))
    for r, p in enumerate(paths):
        if cfg.antithetic:
            base = path_increments(cfg.seed, p // 2, cfg.steps, n_profiles, cfg.dt)
            out[r] = base if p % 2 == 0 else -base
        else:
            out[r] = path_increments(cfg.seed, p, cfg.steps, n_profiles, cfg.dt)
    return out


def heat_half(phi: np.ndarray, mult: np.ndarray, workers: int = 1) -> np.ndarray:
    return sfft.ifft(sfft.fft(phi, axis=-1, workers=workers) * mult, axis=-1, workers=workers)


def step_path(phi: np.ndarray, dW: np.ndarray, profiles: np.ndarray, nu: float,
              amplitude: float, dt: float, workers: int = 1) -> np.ndarray:
    """One Strang step for a single path (1D) or a batch (rows are paths).

    profiles has shape (n_profiles, N) with u_j sampled on the grid; dW has shape
    (n_profiles,) or (batch, n_profiles).
    """
    phi = np.asarray(phi, dtype=complex)
    N = phi.shape[-1]
    k2 = nm.TorusGrid(N).k_squared()
    half = np.exp(-0.5 * nu * dt * k2)
    phi = heat_half(phi, half, workers) if nu > 0 else phi
    phase = np.asarray(dW) @ profiles
    phi = phi * np.exp(-1j * amplitude * phase)
    return heat_half(phi, half, workers) if nu > 0 else phi


def sq_norm(phi: np.ndarray, h: float) -> np.ndarray:
    return h * np.sum(np.abs(phi) ** 2, axis=-1)


@dataclass
class EnsembleStats:
    t: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_paths: int
    checkpoint_t: list[float] = field(default_factory=list)
    g_hat: list[np.ndarray] = field(default_factory=list)
    g_se: list[np.ndarray] = field(default_factory=list)

    def rows(self) -> list[dict]:
        return [{"t": float(a), "mean_norm2": float(b), "stderr": float(c)}
                for a, b, c in zip(self.t, self.mean, self.stderr)]


def _profile_table(family: ProfileFamily, N: int, shift_at: float | None = None) -> np.ndarray:
    y = nm.TorusGrid(N).points()
    rows = []
    for u in family:
        v = u(y)
        if shift_at is not None:
            v = v - float(u(shift_at))
        rows.append(v)
    return np.array(rows)


def run_ensemble(cfg: SimConfig, phi0: np.ndarray | None = None) -> EnsembleStats:
    """Mean and standard error of ||phi(t)||^2 at every step, plus g_hat at checkpoints.

    With antithetic sampling the standard error is computed from pair averages.
    """
    grid = nm.TorusGrid(cfg.N)
    if phi0 is None:
        phi0 = np.exp(1j * grid.points()) / math.sqrt(2 * math.pi)
    phi0 = np.asarray(phi0, dtype=complex)
    grid.check(phi0)
    table = _profile_table(cfg.family, cfg.N)
    J = table.shape[0]
    steps = cfg.steps
    half = np.exp(-0.5 * cfg.nu * cfg.dt * grid.k_squared())
    ck = cfg.checkpoint_steps()
    units = cfg.n_paths // 2 if cfg.antithetic else cfg.n_paths
    unit_values = []
    g1 = {c: np.zeros((cfg.N, cfg.N), complex) for c in ck}
    g2 = {c: np.zeros((cfg.N, cfg.N)) for c in ck}
    batch = BATCH if not cfg.antithetic else 2 * (BATCH // 2)
    for start in range(0, cfg.n_paths, batch):
        paths = range(start, min(start + batch, cfg.n_paths))
        dW = _increments(cfg, paths, J)
        phi = np.tile(phi0, (len(paths), 1))
        per_step = np.empty((steps + 1, len(paths)))
        per_step[0] = sq_norm(phi, grid.h)
        for n in range(steps):
            if cfg.nu > 0:
                phi = heat_half(phi, half, cfg.workers)
            phi = phi * np.exp(-1j * cfg.amplitude * (dW[:, n, :] @ table))
            if cfg.nu > 0:
                phi = heat_half(phi, half, cfg.workers)
            per_step[n + 1] = sq_norm(phi, grid.h)
            if not np.all(np.isfinite(per_step[n + 1])):
                bad = [paths[i] for i in np.flatnonzero(~np.isfinite(per_step[n + 1]))]
                raise PathBlowup(f"non-finite field on paths {bad[:5]} at step {n + 1}")
            if n + 1 in g1:
                pair = phi[:, :, None] * phi[:, None, :].conj()
                if cfg.antithetic:
                    pair = 0.5 * (pair[0::2] + pair[1::2])
                g1[n + 1] += pair.sum(axis=0)
                g2[n + 1] += (np.abs(pair) ** 2).sum(axis=0)
        if cfg.antithetic:
            per_unit = 0.5 * (per_step[:, 0::2] + per_step[:, 1::2])
        else:
            per_unit = per_step
        unit_values.append(per_unit)
    # fixed path order in the concatenation keeps the reduction deterministic
    vals = np.concatenate(unit_values, axis=1)
    mean = vals.mean(axis=1)
    se = vals.std(axis=1, ddof=1) / math.sqrt(units)
    t = cfg.dt * np.arange(steps + 1)
    stats = EnsembleStats(t, mean, se, cfg.n_paths)
    for c in ck:
        gm = g1[c] / units
        gv = np.maximum(g2[c] / units - np.abs(gm) ** 2, 0.0) * units / (units - 1)
        stats.checkpoint_t.append(float(c * cfg.dt))
        stats.g_hat.append(gm)
        stats.g_se.append(np.sqrt(gv / units))
    return stats


# ------------------------------------------------------------ lower bound

@dataclass
class MeanFieldSeries:
    t: np.ndarray
    norm: np.ndarray  # ||E phi||
    stderr: np.ndarray  # standard error of ||E phi|| (delta method)
    mean_field: np.ndarray  # final E phi estimate
    oracle_norm: np.ndarray | None = None


def mean_field_oracle(phi0: np.ndarray, family: ProfileFamily, y0: float, nu: float,
                      kappa: float, ell: int, dt: float, steps: int) -> np.ndarray:
    """Exact expectation of the recentred scheme: Strang steps of
    d_t m = nu m'' - kappa ell^2 V0 m with V0 = sum_j (u_j - u_j(y0))^2.

    Returns ||m|| after every step (including t = 0).
    """
    grid = nm.TorusGrid(len(phi0))
    table = _profile_table(family, grid.N, shift_at=y0)
    damp = np.exp(-kappa * ell ** 2 * dt * np.sum(table ** 2, axis=0))
    half = np.exp(-0.5 * nu * dt * grid.k_squared())
    m = np.asarray(phi0, dtype=complex)
    out = [nm.l2_norm(m)]
    for _ in range(steps):
        m = heat_half(m, half)
        m = m * damp
        m = heat_half(m, half)
        out.append(nm.l2_norm(m))
    return np.array(out)


def lower_bound_experiment(family: ProfileFamily, y0: float, cfg: SimConfig,
                           phi0: np.ndarray) -> MeanFieldSeries:
    """Path average of the recentred equation (profiles u_j - u_j(y0)).

    y0 must be a critical point of every profile; the average E[phi] then solves a
    1D Schrodinger-type equation whose oracle is `mean_field_oracle`.
    """
    for u in family:
        if abs(float(u.derivative(1)(y0))) > 1e-8 * max(u.derivative(1).sup_norm(), 1.0):
            raise ValueError(f"y0={y0:.6g} is not a critical point of every profile")
    grid = nm.TorusGrid(cfg.N)
    phi0 = np.asarray(phi0, dtype=complex)
    grid.check(phi0)
    table = _profile_table(family, cfg.N, shift_at=y0)
    J = table.shape[0]
    steps = cfg.steps
    half = np.exp(-0.5 * cfg.nu * cfg.dt * grid.k_squared())
    units = cfg.n_paths // 2 if cfg.antithetic else cfg.n_paths
    m1 = np.zeros((steps + 1, cfg.N), complex)
    m2 = np.zeros((steps + 1, cfg.N))
    batch = BATCH
    for start in range(0, cfg.n_paths, batch):
        paths = range(start, min(start + batch, cfg.n_paths))
        dW = _increments(cfg, paths, J)
        phi = np.tile(phi0, (len(paths), 1))
        hist = np.empty((steps + 1, len(paths), cfg.N), complex)
        hist[0] = phi
        for n in range(steps):
            if cfg.nu > 0:
                phi = heat_half(phi, half, cfg.workers)
            phi = phi * np.exp(-1j * cfg.amplitude * (dW[:, n, :] @ table))
            if cfg.nu > 0:
                phi = heat_half(phi, half, cfg.workers)
            hist[n + 1] = phi
        unit = 0.5 * (hist[:, 0::2] + hist[:, 1::2]) if cfg.antithetic else hist
        m1 += unit.sum(axis=1)
        m2 += (np.abs(unit) ** 2).sum(axis=1)
    mean = m1 / units
    var = np.maximum(m2 / units - np.abs(mean) ** 2, 0.0) * units / (units - 1)
    norms = np.sqrt(grid.h * np.sum(np.abs(mean) ** 2, axis=1))
    # |d||m||| <= ||dm||, so the L2 size of the pointwise errors bounds the error of the norm
    se = np.sqrt(grid.h * np.sum(var, axis=1) / units)
    t = cfg.dt * np.arange(steps + 1)
    return MeanFieldSeries(t, norms, se, mean[-1])


# ------------------------------------------------------ deterministic check

@dataclass
class MomentComparison:
    t: np.ndarray
    mc_mean: np.ndarray
    mc_stderr: np.ndarray
    trace: np.ndarray
    z: np.ndarray
    bias: float = 0.0

    @property
    def max_z(self) -> float:
        return float(self.z.max()) if self.z.size else 0.0

    def within(self, k: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.mc_mean - self.trace) <= k * self.mc_stderr + self.bias))

    def rows(self) -> list[dict]:
        return [{"t": float(a), "mc_mean": float(b), "stderr": float(c), "trace": float(d),
                 "z": float(e)} for a, b, c, d, e in
                zip(self.t, self.mc_mean, self.mc_stderr, self.trace, self.z)]


def compare_with_moments(cfg: SimConfig, stats: EnsembleStats,
                         phi0: np.ndarray | None = None) -> MomentComparison:
    """Deterministic trace at the ensemble checkpoints, from the same Strang step.

    The expectation of the path scheme is exactly the moment scheme with the same
    dt, so the splitting bias between the two is zero and only sampling error remains.
    """
    from .moments import evolve, init_rank_one
    grid = nm.TorusGrid(cfg.N)
    if phi0 is None:
        phi0 = np.exp(1j * grid.points()) / math.sqrt(2 * math.pi)
    state = init_rank_one(phi0, cfg.nu, cfg.kappa, cfg.ell)
    _, series = evolve(state, cfg.family, cfg.dt, cfg.steps, record_every=1, check_rule=False)
    idx = cfg.checkpoint_steps() or list(range(1, cfg.steps + 1))
    idx = np.array(idx)
    mean, se, tr = stats.mean[idx], stats.stderr[idx], series.trace[idx]
    z = np.abs(mean - tr) / np.maximum(se, 1e-300)
    return MomentComparison(stats.t[idx], mean, se, tr, z)
