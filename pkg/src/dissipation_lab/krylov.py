"""Thick-restart Lanczos for the lowest eigenpair of a real symmetric operator.

Full reorthogonalization is used throughout; the projected matrix is kept
explicitly so that restarted (arrowhead) structure needs no special casing.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, best_residual: float):
        super().__init__(f"{message}; best residual {best_residual:.3e}")
        self.best_residual = best_residual


@dataclass
class LanczosResult:
    value: float
    vector: np.ndarray
    residual: float
    matvecs: int
    restarts: int


def lanczos_smallest(matvec: Callable[[np.ndarray], np.ndarray], n: int, tol: float,
                     v0: np.ndarray | None = None, basis_size: int = 48, keep: int = 8,
                     max_restarts: int = 400, seed: int = 0) -> LanczosResult:
    """Lowest eigenpair of a symmetric operator, certified by ||Av - theta v|| <= tol."""
    basis_size = min(basis_size, n)
    keep = min(keep, basis_size - 2) if basis_size > 2 else 0
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n) if v0 is None else np.array(v0, dtype=float).ravel()
    nq = np.linalg.norm(q)
    if nq == 0:
        q = rng.standard_normal(n)
        nq = np.linalg.norm(q)
    Q = np.empty((n, basis_size))
    T = np.zeros((basis_size, basis_size))
    Q[:, 0] = q / nq
    j0 = 0  # number of kept Ritz vectors at the front of Q
    j = 0
    matvecs = 0
    best = np.inf
    for restart in range(max_restarts + 1):
        # expand basis from column j0 to basis_size
        r = None
        for j in range(j0, basis_size):
            w = matvec(Q[:, j])
            matvecs += 1
            h = Q[:, : j + 1].T @ w
            w -= Q[:, : j + 1] @ h
            h2 = Q[:, : j + 1].T @ w
            w -= Q[:, : j + 1] @ h2
            h += h2
            T[: j + 1, j] = h
            T[j, : j + 1] = h
            beta = np.linalg.norm(w)
            r = w
            if j + 1 < basis_size:
                if beta <= 1e-14 * max(1.0, abs(h[-1])):
                    # invariant subspace: stop early
                    break
                Q[:, j + 1] = w / beta
        m = j + 1
        theta, S = np.linalg.eigh(T[:m, :m])
        beta = np.linalg.norm(r)
        res_est = beta * abs(S[m - 1, 0])
        if res_est <= 0.5 * tol or m < basis_size or restart == max_restarts:
            x = Q[:, :m] @ S[:, 0]
            x /= np.linalg.norm(x)
            ax = matvec(x)
            matvecs += 1
            val = float(x @ ax)
            res = float(np.linalg.norm(ax - val * x))
            best = min(best, res)
            if res <= tol:
                return LanczosResult(val, x, res, matvecs, restart)
            if m < basis_size or restart == max_restarts:
                raise ConvergenceError("Lanczos did not reach the residual tolerance", best)
        best = min(best, res_est)
        # thick restart: keep the lowest Ritz vectors plus the residual direction
        k = keep
        Y = Q[:, :m] @ S[:, :k]
        Q[:, :k] = Y
        T[:] = 0.0
        T[np.arange(k), np.arange(k)] = theta[:k]
        # couplings of kept Ritz vectors to the new direction are recomputed on expansion
        Q[:, k] = r / beta
        # reorthogonalize the new direction against the kept block (rounding drift)
        Q[:, k] -= Q[:, :k] @ (Q[:, :k].T @ Q[:, k])
        Q[:, k] /= np.linalg.norm(Q[:, k])
        j0 = k
    raise ConvergenceError("Lanczos exhausted restarts", best)
