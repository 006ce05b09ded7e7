"""Anharmonic-oscillator quasimodes for the pinned one-dimensional Schrodinger operator.

Near a critical point y0 of overlap order n0 the pinned potential behaves like
c (y - y0)^(2 n0 + 2), so the ground state of -d^2 + lam^2 V0 is modelled by a
rescaled ground state p of -d^2 + c y^(2 n0 + 2) cut off smoothly:

    q(y) = chi(lam^beta (y - y0)) p(lam^(1/(n0+2)) (y - y0)).

Its Rayleigh quotient is an upper bound for the ground energy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh_tridiagonal

from . import numerics as nm
from .profiles import ProfileFamily
from .schrodinger import assemble_potential_1d, smallest_eigenvalue

PLATEAU = 4 * math.pi / 5
SUPPORT = 8 * math.pi / 9


class BoundaryMassError(RuntimeError):
    pass


@dataclass
class AnharmonicGroundState:
    n0: int
    c: float
    R: float
    x: np.ndarray  # interior grid
    p: np.ndarray  # ground function, unit L2 norm, positive
    mu0: float
    _spline: CubicSpline = field(init=False, repr=False)

    def __post_init__(self):
        xs = np.concatenate([[-self.R], self.x, [self.R]])
        ps = np.concatenate([[0.0], self.p, [0.0]])
        self._spline = CubicSpline(xs, ps)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        inside = np.abs(s) < self.R
        out[inside] = self._spline(s[inside])
        return out

    def boundary_mass(self, frac: float = 0.1) -> float:
        h = self.x[1] - self.x[0]
        edge = np.abs(self.x) > (1 - frac) * self.R
        return float(math.sqrt(h * np.sum(self.p[edge] ** 2)))


def _fd_ground(n0: int, c: float, R: float, N: int):
    h = 2 * R / (N + 1)
    x = -R + h * np.arange(1, N + 1)
    diag = 2.0 / h ** 2 + c * x ** (2 * n0 + 2)
    off = -np.ones(N - 1) / h ** 2
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))
    p = v[:, 0] / math.sqrt(h * np.sum(v[:, 0] ** 2))
    if p.sum() < 0:
        p = -p
    return x, p, float(w[0])


def anharmonic_ground(n0: int, c: float = 1.0, R: float | None = None, N: int = 4096,
                      mass_tol: float = 1e-6) -> AnharmonicGroundState:
    """Dirichlet ground state of -d^2 + c y^(2 n0 + 2) on [-R, R] (second-order FD).

    R defaults to eight natural length scales and is doubled (at most three times)
    until the mass in the outer 10% of the box is below `mass_tol`.
    """
    if n0 < 0 or c <= 0:
        raise ValueError("need n0 >= 0 and c > 0")
    if N < 512:
        raise ValueError("N must be at least 512")
    R = 8.0 * c ** (-1.0 / (2 * n0 + 4)) if R is None else float(R)
    for _ in range(4):
        x, p, mu = _fd_ground(n0, c, R, N)
        gs = AnharmonicGroundState(n0, c, R, x, p, mu)
        if gs.boundary_mass() < mass_tol:
            return gs
        R *= 2
    raise BoundaryMassError(f"boundary mass {gs.boundary_mass():.2e} after 3 doublings (R={R / 2:g})")


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, from the profile exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    f = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    u = 1 - t
    g = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    return f / (f + g)


def cutoff(z):
    """Equal to 1 on |z| <= 4pi/5, 0 on |z| >= 8pi/9, smooth in between."""
    z = np.abs(np.asarray(z, dtype=float))
    return 1.0 - smooth_step((z - PLATEAU) / (SUPPORT - PLATEAU))


def beta_interval(n0: int) -> tuple[float, float]:
    return ((2 * n0 + 2) / ((n0 + 2) * (2 * n0 + 3)), 1.0 / (n0 + 2))


def default_beta(n0: int) -> float:
    lo, hi = beta_interval(n0)
    return 0.5 * (lo + hi)


def leading_coefficient(family: ProfileFamily, y0: float, n0: int) -> float:
    """c = sum_j (u_j^(n0+1)(y0) / (n0+1)!)^2, the coefficient of (y-y0)^(2n0+2) in V0."""
    f = math.factorial(n0 + 1)
    return float(sum((float(u.derivative(n0 + 1)(y0)) / f) ** 2 for u in family))


def _wrapped_offset(y: np.ndarray, y0: float) -> np.ndarray:
    return (y - y0 + math.pi) % (2 * math.pi) - math.pi


def build_quasimode(gs: AnharmonicGroundState, lam: float, beta: float,
                    family: ProfileFamily | None, y0: float, N: int = 2048,
                    plateau_scale: float = 1.0) -> np.ndarray:
    """q(y) on an N-point torus grid, unit L2 norm, supported within (y0 - pi, y0 + pi).

    When `family` is given, y0 is checked to be a zero of V0 of order 2 n0 + 2.
    `plateau_scale` > 1 widens the cutoff (used to test that it is subdominant).
    """
    lo, hi = beta_interval(gs.n0)
    if not lo < beta < hi:
        raise ValueError(f"beta={beta} outside the admissible interval ({lo:.6g}, {hi:.6g})")
    if lam < 1:
        raise ValueError("lam must be at least 1")
    if family is not None:
        for k in range(1, gs.n0 + 1):
            for u in family:
                d = float(u.derivative(k)(y0))
                if abs(d) > 1e-8 * max(u.derivative(k).sup_norm(), 1.0):
                    raise ValueError(f"V0 vanishes to lower order than {2 * gs.n0 + 2} at y0={y0:.6g}")
    s = _wrapped_offset(nm.TorusGrid(N).points(), y0)
    q = cutoff(lam ** beta * s / plateau_scale) * gs(lam ** (1.0 / (gs.n0 + 2)) * s)
    norm = nm.l2_norm(q)
    if norm == 0:
        raise ValueError("quasimode vanishes on the grid; increase N")
    return q / norm


def rayleigh(q: np.ndarray, family: ProfileFamily, y0: float, lam: float) -> float:
    """||q'||^2 + lam^2 <V0 q, q> for unit-norm q."""
    grid = nm.TorusGrid.of(q)
    V0 = assemble_potential_1d(family, y0, grid)
    return float(nm.h1_seminorm(q) ** 2 + lam ** 2 * grid.h * np.sum(V0.values * np.abs(q) ** 2))


def pinned_ground(family: ProfileFamily, y0: float, lam: float, N: int = 2048) -> float:
    V0 = assemble_potential_1d(family, y0, nm.TorusGrid(N))
    return smallest_eigenvalue(V0, lam, method="dense", override=True).mu


@dataclass
class QuasimodeReport:
    lams: list[float]
    beta: float
    interval: tuple[float, float]
    n0: int
    y0: float
    rayleigh: list[float]
    ratios: list[float]
    mu_min: list[float]
    candidates: list[dict] = field(default_factory=list)

    def spread(self, decade_only: bool = True) -> float:
        """(max - min) / min of R / lam^(2/(n0+2)) over the top decade of lam."""
        lams = np.array(self.lams)
        r = np.array(self.ratios)
        if decade_only:
            r = r[lams >= lams.max() / 10]
        return float((r.max() - r.min()) / r.min())

    def sandwich_ok(self) -> bool:
        return all(m <= R * (1 + 1e-10) for m, R in zip(self.mu_min, self.rayleigh))

    def to_json(self) -> dict:
        return {"beta": self.beta, "interval": list(self.interval), "n0": self.n0, "y0": self.y0,
                "points": [{"lambda": l, "rayleigh": R, "ratio": q, "mu_min": m}
                           for l, R, q, m in zip(self.lams, self.rayleigh, self.ratios,
                                                 self.mu_min)],
                "candidates": self.candidates}


def quasimode_study(family: ProfileFamily, lams, beta: float | None = None, N: int = 2048,
                    y0: float | None = None, plateau_scale: float = 1.0) -> QuasimodeReport:
    """Rayleigh quotients of q^lam over a lam sweep at every maximal-order overlap point.

    The point with the smallest quotient at the largest lam is reported.
    """
    n0 = family.n0
    beta = default_beta(n0) if beta is None else beta
    points = [y for y, order in family.overlapping_points() if order == n0]
    if y0 is not None:
        points = [y0]
    if not points:
        points = [0.0]
    lams = [float(l) for l in lams]
    reports = []
    for y in points:
        c = leading_coefficient(family, y, n0)
        gs = anharmonic_ground(n0, c)
        Rs, mus = [], []
        for lam in lams:
            q = build_quasimode(gs, lam, beta, family, y, N, plateau_scale)
            Rs.append(rayleigh(q, family, y, lam))
            mus.append(pinned_ground(family, y, lam, N))
        ratios = [R / lam ** (2.0 / (n0 + 2)) for R, lam in zip(Rs, lams)]
        reports.append(QuasimodeReport(lams, beta, beta_interval(n0), n0, y, Rs, ratios, mus))
    best = min(reports, key=lambda r: r.rayleigh[-1])
    best.candidates = [{"y0": r.y0, "rayleigh_at_max": r.rayleigh[-1]} for r in reports]
    return best
