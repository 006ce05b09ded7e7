"""Trigonometric shear profiles, their critical points and the overlap order.

A profile is the finite Fourier series

    u(y) = a_0 + sum_{k=1}^{K} a_k cos(k y) + b_k sin(k y)

so derivatives of every order are available in closed form and vanishing
orders can be decided without numerical differentiation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# relative threshold below which a derivative counts as vanishing
VANISH_TOL = 1e-8
# critical points of different profiles closer than this are the same location
MATCH_TOL = 1e-6


class ProfileError(ValueError):
    """Raised for malformed or degenerate profile input."""


class RootFindingError(RuntimeError):
    """Newton refinement of a critical point did not converge."""

    def __init__(self, message: str, bracket: tuple[float, float]):
        super().__init__(f"{message} (bracket [{bracket[0]:.6g}, {bracket[1]:.6g}])")
        self.bracket = bracket


@dataclass(frozen=True)
class ShearProfile:
    """u(y) = a[0] + sum_k a[k] cos(ky) + b[k-1] sin(ky), k = 1..K."""

    a: tuple[float, ...]
    b: tuple[float, ...] = ()
    constant_ok: bool = False

    def __post_init__(self):
        a = tuple(float(x) for x in self.a) or (0.0,)
        b = tuple(float(x) for x in self.b)
        if not all(math.isfinite(x) for x in a + b):
            raise ProfileError("profile coefficients must be finite")
        K = max(len(a) - 1, len(b))
        a = a + (0.0,) * (K + 1 - len(a))
        b = b + (0.0,) * (K - len(b))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.is_constant and not self.constant_ok:
            raise ProfileError("profile is constant; pass constant_ok=True to allow it")

    @classmethod
    def from_dict(cls, spec: dict) -> "ShearProfile":
        return cls(a=tuple(spec.get("a", (0.0,))), b=tuple(spec.get("b", ())),
                   constant_ok=bool(spec.get("constant", False)))

    def to_dict(self) -> dict:
        return {"a": list(self.a), "b": list(self.b)}

    @property
    def degree(self) -> int:
        return len(self.b)

    @property
    def is_constant(self) -> bool:
        return not any(self.a[1:]) and not any(self.b)

    @property
    def cos_coeffs(self) -> np.ndarray:
        return np.asarray(self.a[1:], dtype=float)

    @property
    def sin_coeffs(self) -> np.ndarray:
        return np.asarray(self.b, dtype=float)

    def derivative(self, order: int = 1) -> "ShearProfile":
        """Exact derivative of the given order, again a trigonometric polynomial."""
        a = np.asarray(self.a[1:], dtype=float)
        b = np.asarray(self.b, dtype=float)
        k = np.arange(1, self.degree + 1, dtype=float)
        for _ in range(order):
            a, b = k * b, -k * a
        return ShearProfile(a=(0.0, *a), b=tuple(b), constant_ok=True)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if self.degree == 0:
            return np.full(y.shape, self.a[0])
        k = np.arange(1, self.degree + 1)
        ky = np.multiply.outer(y, k)
        return self.a[0] + np.cos(ky) @ self.cos_coeffs + np.sin(ky) @ self.sin_coeffs

    def fourier(self) -> dict[int, complex]:
        """Complex coefficients c_k with u(y) = sum_k c_k e^{iky}."""
        out = {0: complex(self.a[0])}
        for k in range(1, self.degree + 1):
            ak, bk = self.a[k], self.b[k - 1]
            out[k] = 0.5 * (ak - 1j * bk)
            out[-k] = 0.5 * (ak + 1j * bk)
        return out

    def sup_norm(self) -> float:
        """max_y |u(y)|, sampled finely enough to be exact to a few ulps of scale."""
        if self.degree == 0:
            return abs(self.a[0])
        y = np.linspace(0.0, TWO_PI, 64 * self.degree + 64, endpoint=False)
        vals = np.abs(self(y))
        # polish around the sampled max
        i = int(np.argmax(vals))
        yy = np.linspace(y[i] - TWO_PI / len(y), y[i] + TWO_PI / len(y), 257)
        return float(max(vals.max(), np.abs(self(yy)).max()))


def sine(k: int = 1, amplitude: float = 1.0) -> ShearProfile:
    b = [0.0] * k
    b[k - 1] = amplitude
    return ShearProfile(a=(0.0,), b=tuple(b))


def cosine(k: int = 1, amplitude: float = 1.0) -> ShearProfile:
    a = [0.0] * (k + 1)
    a[k] = amplitude
    return ShearProfile(a=tuple(a))


def sin_cubed() -> ShearProfile:
    """sin^3 y = (3 sin y - sin 3y) / 4."""
    return ShearProfile(a=(0.0,), b=(0.75, 0.0, -0.25))


@dataclass(frozen=True)
class CriticalPoint:
    y: float
    order: int
    leading_coeff: float

    def to_dict(self) -> dict:
        return {"y": self.y, "order": self.order, "leading_coeff": self.leading_coeff}


def _wrap(y: float) -> float:
    y = math.fmod(y, TWO_PI)
    return y + TWO_PI if y < 0 else y


def _angle_dist(a: float, b: float) -> float:
    d = abs(_wrap(a) - _wrap(b))
    return min(d, TWO_PI - d)


def _candidate_roots(du: ShearProfile) -> np.ndarray:
    """Angles of the roots of du on the unit circle via the companion matrix.

    With z = e^{iy}, z^K du(y) is a degree-2K polynomial in z.
    """
    K = du.degree
    c = du.fourier()
    # numpy.roots wants highest degree first: coefficient of z^{K+k} is c_k
    poly = np.array([c.get(k, 0.0) for k in range(K, -K - 1, -1)], dtype=complex)
    nz = np.flatnonzero(np.abs(poly) > 0)
    poly = poly[nz[0]:nz[-1] + 1]
    roots = np.roots(poly) if len(poly) > 1 else np.array([], dtype=complex)
    # multiple roots scatter off the circle by ~eps^{1/m}
    near = roots[np.abs(np.abs(roots) - 1.0) < 1e-2]
    return np.sort(np.array([_wrap(float(np.angle(z))) for z in near]))


def _cluster(angles: Sequence[float], radius: float) -> list[list[float]]:
    if len(angles) == 0:
        return []
    angles = sorted(angles)
    groups = [[angles[0]]]
    for a in angles[1:]:
        if a - groups[-1][-1] <= radius:
            groups[-1].append(a)
        else:
            groups.append([a])
    # merge across the 0 / 2pi seam
    if len(groups) > 1 and groups[0][0] + TWO_PI - groups[-1][-1] <= radius:
        groups[0] = [a - TWO_PI for a in groups.pop()] + groups[0]
    return groups


def _circular_mean(angles: Sequence[float]) -> float:
    return _wrap(float(np.angle(np.mean(np.exp(1j * np.asarray(angles))))))


def _newton(f: ShearProfile, df: ShearProfile, y0: float, radius: float,
            maxiter: int = 50) -> float:
    """Newton on a simple root of f started at y0, kept within radius of y0."""
    y = y0
    scale = max(f.sup_norm(), 1e-300)
    for _ in range(maxiter):
        fy, dfy = float(f(y)), float(df(y))
        if abs(fy) <= 4e-16 * scale:
            return y
        if dfy == 0.0:
            break
        step = fy / dfy
        y -= step
        if _angle_dist(y, y0) > radius:
            break
        if abs(step) <= 1e-15 * max(1.0, abs(y)):
            return y
    if abs(float(f(y))) <= 1e-12 * scale:
        return y
    raise RootFindingError("Newton refinement failed", (y0 - radius, y0 + radius))


def vanishing_order(profile: ShearProfile, y: float, tol: float = VANISH_TOL,
                    max_order: int | None = None) -> int:
    """Number m of consecutive vanishing derivatives u', ..., u^(m) at y."""
    max_order = 2 * profile.degree + 1 if max_order is None else max_order
    m = 0
    d = profile.derivative(1)
    while m < max_order:
        scale = d.sup_norm()
        if scale == 0.0 or abs(float(d(y))) > tol * scale:
            return m
        m += 1
        d = d.derivative(1)
    return m


def critical_points(profile: ShearProfile, tol_root: float = VANISH_TOL,
                    tol_order: float = VANISH_TOL,
                    radius: float | None = None) -> list[CriticalPoint]:
    """All zeros of u' on [0, 2pi) with their vanishing order and leading coefficient.

    The order m means u', ..., u^(m) vanish at y* while u^(m+1)(y*) does not;
    the leading coefficient is u^(m+1)(y*) / (m+1)!.
    """
    if profile.is_constant:
        raise ProfileError("constant profile has no isolated critical points")
    K = profile.degree
    radius = (math.pi / (8 * K)) if radius is None else radius
    du = profile.derivative(1)
    out: list[CriticalPoint] = []
    for group in _cluster(_candidate_roots(du), radius=1e-3):
        y0 = _circular_mean(group)
        mult = len(group)
        # u^(mult) has a simple root where u' has a root of multiplicity mult
        f = profile.derivative(mult)
        y = _wrap(_newton(f, f.derivative(1), y0, radius))
        if abs(float(du(y))) > tol_root * du.sup_norm():
            raise RootFindingError("refined point is not a zero of u'", (y0 - radius, y0 + radius))
        m = vanishing_order(profile, y, tol_order, max_order=2 * K + 1)
        if m > 2 * K:
            raise ArithmeticError(
                f"vanishing order {m} exceeds 2K={2 * K} at y={y:.6g}: inconsistent profile")
        if m == 0:
            continue
        lead = float(profile.derivative(m + 1)(y)) / math.factorial(m + 1)
        if any(_angle_dist(y, p.y) <= radius for p in out):
            continue
        out.append(CriticalPoint(y=y, order=m, leading_coeff=lead))
    out.sort(key=lambda p: p.y)
    return out


@dataclass
class ProfileFamily:
    profiles: list[ShearProfile]
    tol_match: float = MATCH_TOL
    critical: list[list[CriticalPoint]] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.profiles:
            raise ProfileError("empty profile family")
        degenerate = [j for j, p in enumerate(self.profiles) if p.is_constant]
        if degenerate:
            raise ProfileError(f"degenerate family: profiles {degenerate} are constant "
                               "(infinite vanishing order everywhere)")
        self.critical = [critical_points(p) for p in self.profiles]

    @classmethod
    def from_config(cls, specs: Sequence) -> "ProfileFamily":
        return cls([parse_profile(s) for s in specs])

    def __len__(self) -> int:
        return len(self.profiles)

    def __iter__(self):
        return iter(self.profiles)

    @property
    def n0(self) -> int:
        return overlap_order(self, self.tol_match)

    def max_degree(self) -> int:
        return max(p.degree for p in self.profiles)

    def overlapping_points(self) -> list[tuple[float, int]]:
        """Candidate locations with their overlap order (min over profiles)."""
        return _overlap_table(self, self.tol_match)


_NAMED = {"sin": sine(1), "cos": cosine(1), "sin3": sin_cubed()}


def parse_profile(spec) -> ShearProfile:
    """Accepts a ShearProfile, a coefficient dict {a, b}, or a name like 'sin', 'cos2'."""
    if isinstance(spec, ShearProfile):
        return spec
    if isinstance(spec, dict):
        return ShearProfile.from_dict(spec)
    if isinstance(spec, str):
        if spec in _NAMED:
            return _NAMED[spec]
        for name, make in (("sin", sine), ("cos", cosine)):
            if spec.startswith(name) and spec[len(name):].isdigit():
                return make(int(spec[len(name):]))
    raise ProfileError(f"cannot parse profile {spec!r}")


def _overlap_table(family: ProfileFamily, tol_match: float) -> list[tuple[float, int]]:
    locations = [p.y for crit in family.critical for p in crit]
    table = []
    for group in _cluster(locations, tol_match):
        y = _circular_mean(group)
        orders = []
        for crit in family.critical:
            hit = [p.order for p in crit if _angle_dist(p.y, y) <= tol_match]
            orders.append(max(hit) if hit else 0)
        table.append((y, min(orders)))
    return table


def overlap_order(family: ProfileFamily, tol_match: float = MATCH_TOL) -> int:
    """Smallest n with: for every y some u_j has u_j^(k+1)(y) != 0 for a k <= n."""
    if not isinstance(family, ProfileFamily):
        family = ProfileFamily(list(family))
    table = _overlap_table(family, tol_match)
    return max((order for _, order in table), default=0)
