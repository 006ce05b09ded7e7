"""Two-point Schrodinger operators -Laplacian + lam^2 V and their ground energies.

The torus operators are applied matrix-free (spectral Laplacian plus a
pointwise potential) and the lowest eigenvalue is found with thick-restart
Lanczos.  Dense eigensolves are kept for small grids as an independent check.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.linalg as sla

from . import numerics as nm
from .krylov import ConvergenceError, lanczos_smallest
from .profiles import ProfileFamily

log = logging.getLogger(__name__)


class GridRuleWarning(UserWarning):
    pass


@dataclass
class PotentialGrid:
    values: np.ndarray
    grid: nm.TorusGrid
    provenance: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.grid.check(self.values)

    @property
    def max(self) -> float:
        return float(self.values.max())

    @property
    def nonneg(self) -> bool:
        return bool(self.values.min() >= -1e-14 * max(self.max, 1e-300))


@dataclass
class EigenResult:
    mu: float
    vector: np.ndarray
    residual: float
    N: int
    lam: float
    method: str = "lanczos"
    matvecs: int = 0
    warnings: list[str] = field(default_factory=list)


def assemble_potential_2d(family: ProfileFamily, grid: nm.TorusGrid) -> PotentialGrid:
    """V(y, y') = sum_j (u_j(y) - u_j(y'))^2, rows indexed by y."""
    if grid.dim != 2:
        raise ValueError("assemble_potential_2d needs a 2D grid")
    y = grid.points()
    V = np.zeros(grid.shape)
    for u in family:
        uy = u(y)
        # a - b == -(b - a) exactly, so V is exactly symmetric with a zero diagonal
        V += np.subtract.outer(uy, uy) ** 2
    return PotentialGrid(V, grid, provenance=f"two-point, {len(family)} profiles")


def assemble_potential_1d(family: ProfileFamily, y0: float, grid: nm.TorusGrid) -> PotentialGrid:
    """V0(y) = sum_j (u_j(y) - u_j(y0))^2, the potential pinned at y0."""
    if grid.dim != 1:
        raise ValueError("assemble_potential_1d needs a 1D grid")
    y = grid.points()
    V = np.zeros(grid.shape)
    for u in family:
        V += (u(y) - float(u(y0))) ** 2
    return PotentialGrid(V, grid, provenance=f"pinned at y0={y0:.6g}")


def grid_rule(lam: float) -> int:
    """Smallest admissible N for coupling lam: max(128, next pow2 >= 16 sqrt(lam))."""
    target = 16.0 * math.sqrt(max(lam, 0.0))
    return max(128, 1 << max(0, math.ceil(math.log2(max(target, 1.0)))))


def default_tol(V: PotentialGrid, lam: float) -> float:
    return 1e-6 * (lam ** 2 * V.max + V.grid.N ** 2)


def hamiltonian_matvec(V: PotentialGrid, lam: float):
    W = lam ** 2 * V.values
    shape = V.grid.shape

    def matvec(x):
        x = x.reshape(shape)
        return (nm.laplacian_apply(x) + W * x).ravel()

    return matvec


def dense_laplacian_1d(N: int) -> np.ndarray:
    """Matrix of the spectral -d^2/dy^2 on an N-point periodic grid."""
    k2 = nm.TorusGrid(N).k_squared()
    F = np.fft.fft(np.eye(N), axis=0)
    return np.real(np.fft.ifft(k2[:, None] * F, axis=0))


def dense_hamiltonian(V: PotentialGrid, lam: float) -> np.ndarray:
    N = V.grid.N
    D = dense_laplacian_1d(N)
    if V.grid.dim == 1:
        H = D.copy()
    else:
        I = np.eye(N)
        H = np.kron(D, I) + np.kron(I, D)
    H[np.diag_indices_from(H)] += lam ** 2 * V.values.ravel()
    return H


def _dense_smallest(H: np.ndarray) -> tuple[float, np.ndarray]:
    w, v = sla.eigh(H, subset_by_index=[0, 0], driver="evr")
    return float(w[0]), v[:, 0]


def smallest_eigenvalue(V: PotentialGrid, lam: float, tol_eig: float | None = None,
                        v0: np.ndarray | None = None, method: str = "lanczos",
                        override: bool = False) -> EigenResult:
    """Lowest eigenpair of H = -Laplacian + lam^2 V on the torus grid of V.

    v0 may live on a coarser or finer grid; it is resampled spectrally.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    grid = V.grid
    notes = []
    if not override and grid.N < grid_rule(lam):
        msg = f"N={grid.N} below grid rule N(lam)={grid_rule(lam)} for lam={lam:g}"
        notes.append(msg)
        warnings.warn(msg, GridRuleWarning, stacklevel=2)
    tol = default_tol(V, lam) if tol_eig is None else tol_eig
    h_norm = math.sqrt(grid.h ** grid.dim)
    if method == "dense":
        mu, vec = _dense_smallest(dense_hamiltonian(V, lam))
        vec = vec.reshape(grid.shape)
        res = float(np.linalg.norm(hamiltonian_matvec(V, lam)(vec.ravel()) - mu * vec.ravel())
                    / np.linalg.norm(vec))
        return EigenResult(mu, _normalize(vec, h_norm), res, grid.N, lam, "dense", 0, notes)
    if v0 is None:
        v0 = np.ones(grid.shape) + 1e-3 * np.random.default_rng(0).standard_normal(grid.shape)
    else:
        v0 = np.real(np.asarray(v0))
        if v0.shape != grid.shape:
            v0 = np.real(nm.resample(v0, grid.N))
    try:
        out = lanczos_smallest(hamiltonian_matvec(V, lam), grid.size, tol, v0=v0)
    except ConvergenceError:
        if grid.N <= 64:
            log.info("Lanczos failed at N=%d, falling back to a dense solve", grid.N)
            return smallest_eigenvalue(V, lam, tol, method="dense", override=True)
        raise
    vec = out.vector.reshape(grid.shape)
    return EigenResult(out.value, _normalize(vec, h_norm), out.residual, grid.N, lam,
                       "lanczos", out.matvecs, notes)


def _normalize(vec: np.ndarray, h_norm: float) -> np.ndarray:
    vec = vec / (h_norm * np.linalg.norm(vec))
    # sign convention: positive mean
    s = np.sum(vec)
    return -vec if np.real(s) < 0 else vec


def two_point_ground(family: ProfileFamily, lam: float, N: int | None = None,
                     tol_eig: float | None = None, seed_N: int = 64,
                     v0: np.ndarray | None = None) -> EigenResult:
    """Ground energy of the two-point operator, solved on a ladder of grids up to N."""
    N = grid_rule(lam) if N is None else N
    levels = []
    n = N
    while n > seed_N:
        n //= 2
        levels.append(n)
    levels = [lv for lv in reversed(levels) if lv >= 16] + [N]
    vec = v0
    res = None
    for n in levels:
        V = assemble_potential_2d(family, nm.TorusGrid(n, 2))
        final = n == N
        res = smallest_eigenvalue(V, lam, tol_eig if final else None, v0=vec, override=True)
        vec = res.vector
    if N < grid_rule(lam):
        res.warnings.append(f"N={N} below grid rule N(lam)={grid_rule(lam)}")
    return res


# ---------------------------------------------------------------- scaling study

@dataclass
class ScalingPoint:
    lam: float
    mu: float
    N: int
    residual: float
    converged: bool
    mu_coarse: float
    rel_change: float


@dataclass
class ScalingFit:
    points: list[ScalingPoint]
    slope: float
    intercept: float
    r2: float
    n0: int
    target: float

    @property
    def gap(self) -> float:
        return self.slope - self.target

    def summary(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "target": self.target,
                "r2": self.r2, "n0": self.n0, "gap": self.gap}

    def rows(self) -> list[dict]:
        return [{"lambda": p.lam, "mu": p.mu, "N": p.N, "residual": p.residual,
                 "converged": p.converged} for p in self.points]


def loglog_fit(x, y) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2 of log y against log x."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = slope * lx + intercept
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def scaling_study(family: ProfileFamily, lams, tol_eig: float | None = None,
                  richardson_tol: float = 0.01) -> ScalingFit:
    """Fit mu(lam) ~ lam^s over a geometric lam sweep with grid-doubling certification."""
    lams = [float(x) for x in lams]
    if any(b <= a for a, b in zip(lams, lams[1:])):
        raise ValueError("lam list must be increasing")
    if len(lams) < 5 or lams[-1] / lams[0] < 10.0 - 1e-9:
        raise ValueError("need at least 5 values of lam spanning one decade")
    points = []
    for lam in lams:
        N = grid_rule(lam)
        coarse = two_point_ground(family, lam, N, tol_eig)
        fine = two_point_ground(family, lam, 2 * N, tol_eig, v0=coarse.vector)
        change = abs(fine.mu - coarse.mu) / abs(fine.mu)
        ok = change < richardson_tol
        if not ok:
            log.warning("lam=%g failed the grid-doubling check (change %.3g)", lam, change)
        points.append(ScalingPoint(lam, fine.mu, 2 * N, fine.residual, ok, coarse.mu, change))
        log.info("lam=%g mu=%.6g N=%d change=%.2e", lam, fine.mu, 2 * N, change)
    good = [p for p in points if p.converged]
    if len(good) < 5:
        raise ConvergenceError(f"only {len(good)} lam values passed the grid-doubling check",
                               max(p.rel_change for p in points))
    slope, intercept, r2 = loglog_fit([p.lam for p in good], [p.mu for p in good])
    n0 = family.n0
    return ScalingFit(points, slope, intercept, r2, n0, 2.0 / (n0 + 2))


# ---------------------------------------------------------------- model problems

@dataclass
class BoxGrid:
    """Interior nodes of the Dirichlet box [-R, R]^2 for the type-I sine transform."""
    R: float
    N: int

    @property
    def h(self) -> float:
        return 2 * self.R / (self.N + 1)

    def points(self) -> np.ndarray:
        return -self.R + self.h * np.arange(1, self.N + 1)

    def k_squared(self) -> np.ndarray:
        k = math.pi * np.arange(1, self.N + 1) / (2 * self.R)
        return k[:, None] ** 2 + k[None, :] ** 2


def model_exponent(m: int, n: int) -> float:
    return 2 * n / (2 * n + n * m - m)


def model_problem_eig(m: int, n: int, sign: int, lam: float, R: float, N: int,
                      tol_eig: float | None = None, v0: np.ndarray | None = None) -> EigenResult:
    """Lowest eigenvalue of -Laplacian + lam^2 (x^m + sign*y^n)^2 on the Dirichlet box."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    box = BoxGrid(R, N)
    x = box.points()
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = lam ** 2 * (X ** m + sign * Y ** n) ** 2
    k2 = box.k_squared()

    def matvec(v):
        v = v.reshape(N, N)
        return (sfft.idstn(k2 * sfft.dstn(v, type=1, workers=1), type=1, workers=1) + W * v).ravel()

    tol = 1e-6 * (W.max() + k2.max()) if tol_eig is None else tol_eig
    if v0 is None:
        v0 = np.exp(-(X ** 2 + Y ** 2))
    elif v0.shape != (N, N):
        v0 = _box_resample(v0, N)
    out = lanczos_smallest(matvec, N * N, tol, v0=v0)
    vec = out.vector.reshape(N, N)
    vec = vec / (box.h * np.linalg.norm(vec))
    notes = []
    bm = boundary_mass(vec, 0.1)
    if bm > 0.01:
        msg = f"box too small: {bm:.2%} of eigenvector mass in the outer strip (R={R})"
        notes.append(msg)
        warnings.warn(msg, GridRuleWarning, stacklevel=2)
    return EigenResult(out.value, vec, out.residual, N, lam, "lanczos", out.matvecs, notes)


def boundary_mass(vec: np.ndarray, frac: float) -> float:
    """Fraction of |v|^2 within frac * (box width / 2) of the boundary."""
    N = vec.shape[0]
    w = max(1, int(round(frac * N / 2)))
    inner = np.abs(vec[w:N - w, w:N - w]) ** 2
    total = np.sum(np.abs(vec) ** 2)
    return float(1.0 - inner.sum() / total)


def _box_resample(v: np.ndarray, N: int) -> np.ndarray:
    c = sfft.dstn(v, type=1, workers=1)
    M = v.shape[0]
    out = np.zeros((N, N))
    k = min(M, N)
    out[:k, :k] = c[:k, :k]
    return sfft.idstn(out, type=1, workers=1) * ((N + 1) / (M + 1))


def model_problem_sweep(m: int, n: int, sign: int, lams, R: float, N: int) -> ScalingFit:
    lams = [float(x) for x in lams]
    points = []
    vec = None
    for lam in lams:
        res = model_problem_eig(m, n, sign, lam, R, N, v0=vec)
        vec = res.vector
        points.append(ScalingPoint(lam, res.mu, N, res.residual, not res.warnings, res.mu, 0.0))
    slope, intercept, r2 = loglog_fit(lams, [p.mu for p in points])
    return ScalingFit(points, slope, intercept, r2, -1, model_exponent(m, n))
