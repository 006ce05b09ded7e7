"""Second moment of the mode-ell shear problem.

g(t, y, y') = E[f(t, y) conj(f(t, y'))] obeys

    d_t g = nu (Lap_y + Lap_y') g - a V(y, y') g,   V = sum_j (u_j(y) - u_j(y'))^2,

with a = kappa * ell^2 for noise of strength sqrt(2 kappa) in Stratonovich form
(see `coupling`).  The trace h * sum_i g(y_i, y_i) is E||f||^2 for that mode.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from . import numerics as nm
from .profiles import ProfileFamily
from .schrodinger import assemble_potential_2d, two_point_ground

log = logging.getLogger(__name__)

DT_SAFETY = 0.05


class InvariantViolation(ArithmeticError):
    pass


class SplittingWarning(UserWarning):
    pass


def coupling(kappa: float, ell: int) -> float:
    """Potential coefficient of the moment equation.

    The phase exp(-i sqrt(2 kappa) ell sum_j u_j dW_j) damps E[f(y) conj f(y')] by
    exp(-kappa ell^2 V dt) per step, so the two-point coupling is kappa * ell^2.
    """
    return kappa * ell ** 2


def effective_lambda(nu: float, kappa: float, ell: int, coeff: float | None = None) -> float:
    a = coupling(kappa, ell) if coeff is None else coeff
    return math.sqrt(a / nu)


@dataclass
class MomentState:
    g: np.ndarray
    t: float = 0.0
    nu: float = 0.0
    kappa: float = 0.0
    ell: int = 0
    coeff: float | None = None  # overrides coupling(kappa, ell) when set

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=complex)
        nm.TorusGrid.of(self.g)

    @property
    def grid(self) -> nm.TorusGrid:
        return nm.TorusGrid.of(self.g)

    @property
    def a(self) -> float:
        return coupling(self.kappa, self.ell) if self.coeff is None else self.coeff

    def hermitian_defect(self) -> float:
        scale = max(np.abs(self.g).max(), 1e-300)
        return float(np.abs(self.g - self.g.conj().T).max() / scale)

    def min_eigenvalue(self) -> float:
        """Smallest eigenvalue of g as an integral kernel (weight h)."""
        return float(self.grid.h * np.linalg.eigvalsh((self.g + self.g.conj().T) / 2)[0])


def init_rank_one(phi: np.ndarray, nu: float = 0.0, kappa: float = 0.0, ell: int = 0,
                  coeff: float | None = None) -> MomentState:
    """g(y, y') = phi(y) conj(phi(y'))."""
    phi = np.asarray(phi, dtype=complex)
    nm.TorusGrid.of(phi)
    if not np.any(phi):
        raise ValueError("phi must be nonzero")
    return MomentState(np.outer(phi, phi.conj()), 0.0, nu, kappa, ell, coeff)


def default_phi(N: int) -> np.ndarray:
    """e^{iy} normalized to unit L2 norm."""
    y = nm.TorusGrid(N).points()
    return np.exp(1j * y) / math.sqrt(2 * math.pi)


def trace_diag(state: MomentState) -> float:
    tr = float(state.grid.h * np.sum(np.real(np.diag(state.g))))
    if tr < -1e-10 * max(np.abs(state.g).max(), 1e-300):
        raise InvariantViolation(f"negative trace {tr:.3e}")
    return tr


def estimate_mu(family: ProfileFamily, lam: float, N: int = 64) -> float:
    """Coarse ground energy of -Lap + lam^2 V used by the step-size rule."""
    return two_point_ground(family, lam, N=N, tol_eig=1e-3 * (lam ** 2 * 4 * len(family) + N ** 2),
                            seed_N=N).mu


def dt_rule(family: ProfileFamily, nu: float, kappa: float, ell: int,
            coeff: float | None = None, mu_est: float | None = None) -> float:
    """dt = 0.05 / (nu * mu_est): resolves the slowest-decaying (ground) mode.

    Both sub-flows are exact, so only the commutator error on the modes that
    survive matters; for kappa = 0 the rate is set by the lowest heat mode.
    """
    a = coupling(kappa, ell) if coeff is None else coeff
    if nu <= 0:
        vmax = 4.0 * sum(u.sup_norm() ** 2 for u in family)
        return DT_SAFETY / max(a * vmax, 1e-300)
    if mu_est is None:
        mu_est = estimate_mu(family, math.sqrt(a / nu)) if a > 0 else 1.0
    return DT_SAFETY / (nu * max(mu_est, 1.0))


@dataclass
class TraceSeries:
    t: np.ndarray
    trace: np.ndarray

    def rows(self) -> list[dict]:
        return [{"t": float(a), "trace": float(b),
                 "log_trace": float(math.log(b)) if b > 0 else float("-inf")}
                for a, b in zip(self.t, self.trace)]


class _Stepper:
    """Strang step heat(dt/2) -> potential(dt) -> heat(dt/2) in Fourier/physical form."""

    def __init__(self, family: ProfileFamily, state: MomentState, dt: float, workers: int = 1):
        grid = state.grid
        self.N = grid.N
        self.h = grid.h
        self.workers = workers
        k2 = nm.TorusGrid(grid.N, 2).k_squared()
        self.half = np.exp(-0.5 * state.nu * dt * k2)
        self.full = self.half * self.half
        V = assemble_potential_2d(family, nm.TorusGrid(grid.N, 2)).values
        self.pot = np.exp(-state.a * dt * V)

    def fft(self, x):
        return sfft.fft2(x, workers=self.workers)

    def ifft(self, x):
        return sfft.ifft2(x, workers=self.workers)

    def diag_sum(self, G_hat):
        # sum_i g(y_i, y_i) = (1/N) sum_k G_hat[k, -k]
        k = np.arange(self.N)
        return float(np.real(G_hat[k, (-k) % self.N].sum()) / self.N)


def evolve(state: MomentState, family: ProfileFamily, dt: float, steps: int,
           record_every: int = 1, check_rule: bool = True, workers: int = 1,
           mu_est: float | None = None):
    """Advance by `steps` Strang steps; returns (new state, TraceSeries).

    The trace is recorded at t0 and after every `record_every` steps.
    """
    if dt <= 0 or steps < 0:
        raise ValueError("dt must be positive and steps nonnegative")
    if check_rule and state.nu > 0 and state.a > 0:
        rule = dt_rule(family, state.nu, state.kappa, state.ell, state.coeff, mu_est)
        if dt > rule * (1 + 1e-12):
            rho = dt * state.nu * (mu_est if mu_est else DT_SAFETY / (rule * state.nu))
            warnings.warn(f"dt={dt:.4g} exceeds the splitting rule {rule:.4g}; "
                          f"relative rate error of order {rho ** 2 / 12:.2e}",
                          SplittingWarning, stacklevel=2)
    st = _Stepper(family, state, dt, workers)
    g = state.g.copy()
    ts, trs = [state.t], [trace_diag(state)]
    G = st.fft(g) * st.half  # pending half step
    for n in range(1, steps + 1):
        g = st.ifft(G) * st.pot
        g = 0.5 * (g + g.conj().T)
        G = st.fft(g)
        if n % record_every == 0 or n == steps:
            Gh = G * st.half
            ts.append(state.t + n * dt)
            trs.append(st.h * st.diag_sum(Gh))
        G *= st.full if n < steps else st.half
    g = st.ifft(G)
    g = 0.5 * (g + g.conj().T)
    out = replace(state, g=g, t=state.t + steps * dt)
    tr = np.array(trs)
    if np.any(tr < -1e-10 * max(abs(tr[0]), 1e-300)):
        raise InvariantViolation("negative trace during evolution")
    if np.any(np.diff(tr) > 1e-10 * abs(tr[0])):
        raise InvariantViolation("trace increased during evolution")
    return out, TraceSeries(np.array(ts), tr)


# ------------------------------------------------------------------ fitting

class InsufficientDecay(ValueError):
    pass


@dataclass
class DecayFit:
    t: np.ndarray
    trace: np.ndarray
    window: tuple[float, float]
    rate: float
    r2: float
    reference: float | None = None
    extra: dict = field(default_factory=dict)

    @property
    def rel_gap(self) -> float | None:
        if self.reference is None:
            return None
        return abs(self.rate - self.reference) / self.reference

    def summary(self) -> dict:
        return {"rate": self.rate, "nu_mu": self.reference, "rel_gap": self.rel_gap,
                "window": list(self.window), "r2": self.r2}


def _linfit(t, y):
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum((y - pred) ** 2) / ss if ss > 0 else 1.0
    return coef[0], coef[1], r2


def fit_decay(t, trace, reference: float | None = None, resid_tol: float = 1e-3,
              min_efolds: float = 2.0) -> DecayFit:
    """Exponential rate from the terminal log-linear part of a decaying series.

    Start from the last half of the samples and extend the window backwards while
    each added point stays within `resid_tol` of the current line.
    """
    t = np.asarray(t, dtype=float)
    trace = np.asarray(trace, dtype=float)
    if t.size < 4:
        raise InsufficientDecay("need at least four samples")
    if np.any(trace <= 0):
        raise InsufficientDecay("trace must stay positive to fit a rate")
    y = np.log(trace)
    if y[0] - y[-1] < min_efolds:
        raise InsufficientDecay(f"series decays by only {y[0] - y[-1]:.2f} e-folds; "
                                "run to a longer horizon")
    start = t.size // 2
    slope, icpt, r2 = _linfit(t[start:], y[start:])
    while start > 0:
        j = start - 1
        if abs(y[j] - (slope * t[j] + icpt)) >= resid_tol:
            break
        start = j
        slope, icpt, r2 = _linfit(t[start:], y[start:])
    return DecayFit(t, trace, (float(t[start]), float(t[-1])), float(-slope), float(r2),
                    reference)


def reference_rate(family: ProfileFamily, nu: float, kappa: float, ell: int,
                   coeff: float | None = None, N: int | None = None) -> float:
    """nu * mu_min(-Lap + (a / nu) V), the predicted terminal decay rate."""
    lam = effective_lambda(nu, kappa, ell, coeff)
    return nu * two_point_ground(family, lam, N=N).mu


def decay_experiment(family: ProfileFamily, nu: float, kappa: float, ell: int, N: int,
                     efolds: float = 8.0, dt: float | None = None, phi=None,
                     coeff: float | None = None, records: int = 400,
                     reference: bool = True):
    """Evolve from rank-one data until the trace has dropped by `efolds` e-folds and fit."""
    lam = effective_lambda(nu, kappa, ell, coeff)
    ref = None
    mu_est = None
    if reference:
        ref = nu * two_point_ground(family, lam, N=max(N, 128)).mu
        mu_est = ref / nu
    if dt is None:
        dt = dt_rule(family, nu, kappa, ell, coeff, mu_est)
    phi = default_phi(N) if phi is None else phi
    state = init_rank_one(phi, nu, kappa, ell, coeff)
    rate_guess = ref if ref else nu * (mu_est or estimate_mu(family, lam))
    steps = max(int(math.ceil(efolds / rate_guess / dt)), 20)
    state, series = evolve(state, family, dt, steps, record_every=max(1, steps // records),
                           check_rule=False)
    fit = fit_decay(series.t, series.trace, ref)
    fit.extra.update({"lambda_eff": lam, "dt": dt, "N": N, "steps": steps})
    return state, series, fit
