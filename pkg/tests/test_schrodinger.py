import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissipation_lab import numerics as nm
from dissipation_lab import schrodinger as sc
from dissipation_lab.profiles import ProfileFamily, cosine, sine

SIN = ProfileFamily([sine(1)])
SINCOS = ProfileFamily([sine(1), cosine(1)])


def spectral_d2(N: int) -> np.ndarray:
    """Closed-form periodic spectral second-derivative matrix (even N)."""
    h = 2 * math.pi / N
    j = np.arange(N)
    diff = j[:, None] - j[None, :]
    with np.errstate(divide="ignore"):
        D = -((-1.0) ** diff) / (2 * np.sin(diff * h / 2) ** 2)
    D[np.diag_indices(N)] = -math.pi ** 2 / (3 * h ** 2) - 1.0 / 6
    return D


def oracle_ground(V: np.ndarray, lam: float) -> float:
    N = V.shape[0]
    D = spectral_d2(N)
    if V.ndim == 1:
        H = -D
    else:
        I = np.eye(N)
        H = -(np.kron(D, I) + np.kron(I, D))
    H = H + np.diag(lam ** 2 * V.ravel())
    return float(np.linalg.eigvalsh(H)[0])


def test_potential_2d_examples():
    g = nm.TorusGrid(16, 2)
    V = sc.assemble_potential_2d(SIN, g).values
    i0, ipi, ih = 0, 8, 4
    assert V[i0, ipi] == pytest.approx(0.0, abs=1e-30)
    assert V[i0, ih] == pytest.approx(1.0, abs=1e-15)
    W = sc.assemble_potential_2d(SINCOS, g).values
    assert W[i0, ipi] == pytest.approx(4.0, abs=1e-15)
    assert np.array_equal(W, W.T)
    assert np.all(np.diag(W) == 0.0)


def test_potential_1d_examples():
    g = nm.TorusGrid(64)
    y = g.points()
    V = sc.assemble_potential_1d(SIN, math.pi / 2, g).values
    assert np.allclose(V, (np.sin(y) - 1) ** 2, atol=1e-15)
    assert V[16] <= 1e-30
    V = sc.assemble_potential_1d(SINCOS, 0.0, g).values
    assert np.allclose(V, np.sin(y) ** 2 + (np.cos(y) - 1) ** 2, atol=1e-15)
    assert np.count_nonzero(V < 1e-20) == 1


def test_zero_coupling_gives_constant_ground_state():
    V = sc.assemble_potential_2d(SIN, nm.TorusGrid(16, 2))
    res = sc.smallest_eigenvalue(V, 0.0, override=True)
    assert abs(res.mu) < 1e-8
    assert np.allclose(res.vector, res.vector.flat[0], atol=1e-6)


def test_constant_potential_shift():
    g = nm.TorusGrid(32, 2)
    V = sc.PotentialGrid(np.ones(g.shape), g)
    res = sc.smallest_eigenvalue(V, 3.0, override=True)
    assert res.mu == pytest.approx(9.0, rel=1e-10)


def test_dense_oracle_two_point():
    g = nm.TorusGrid(32, 2)
    V = sc.assemble_potential_2d(SIN, g)
    res = sc.smallest_eigenvalue(V, 25.0, tol_eig=1e-9, override=True)
    ref = oracle_ground(V.values, 25.0)
    assert res.mu == pytest.approx(ref, rel=1e-8)
    assert res.residual <= 1e-9


def test_dense_oracle_at_n64_lambda25():
    g = nm.TorusGrid(64, 2)
    V = sc.assemble_potential_2d(SIN, g)
    res = sc.smallest_eigenvalue(V, 25.0, tol_eig=1e-8, override=True)
    dense = sc.smallest_eigenvalue(V, 25.0, method="dense", override=True)
    assert res.mu == pytest.approx(dense.mu, rel=1e-8)


def test_grid_rule():
    assert sc.grid_rule(1.0) == 128
    assert sc.grid_rule(100.0) == 256
    assert sc.grid_rule(400.0) == 512
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        res = sc.smallest_eigenvalue(sc.assemble_potential_2d(SIN, nm.TorusGrid(16, 2)), 4.0)
    assert res.warnings and any(issubclass(w.category, sc.GridRuleWarning) for w in rec)


def test_scaling_study_rejects_short_sweep():
    with pytest.raises(ValueError):
        sc.scaling_study(SIN, [1, 2, 3, 4, 5])
    with pytest.raises(ValueError):
        sc.scaling_study(SIN, [10, 5, 20, 40, 100])


def test_model_problem_zero_coupling():
    R, N = 3.0, 64
    res = sc.model_problem_eig(1, 1, -1, 0.0, R, N)
    assert res.mu == pytest.approx(2 * (math.pi / (2 * R)) ** 2, rel=1e-10)


def test_model_problem_rotated_oscillator():
    lam = 16.0
    res = sc.model_problem_eig(1, 1, -1, lam, 4.0, 128)
    # sqrt(2) lam from the confined direction plus a small box term along x = y
    assert 0 < res.mu - math.sqrt(2) * lam < 0.5


def test_self_adjoint_and_positive():
    g = nm.TorusGrid(32, 2)
    V = sc.assemble_potential_2d(SINCOS, g)
    H = sc.hamiltonian_matvec(V, 7.0)
    rng = np.random.default_rng(3)
    v, w = rng.standard_normal((2, g.size))
    lhs, rhs = np.dot(H(v), w), np.dot(v, H(w))
    assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(v) * np.linalg.norm(w) * 7.0 ** 2 * V.max
    assert np.dot(H(v), v) >= 0


@settings(max_examples=15, deadline=None)
@given(lam=st.floats(0.0, 30.0), pin=st.floats(0, 2 * math.pi))
def test_pinned_1d_matches_oracle(lam, pin):
    g = nm.TorusGrid(64)
    V = sc.assemble_potential_1d(SIN, pin, g)
    res = sc.smallest_eigenvalue(V, lam, method="dense", override=True)
    assert res.mu == pytest.approx(oracle_ground(V.values, lam), rel=1e-9, abs=1e-9)


@settings(max_examples=10, deadline=None)
@given(l1=st.floats(1.0, 20.0), ratio=st.floats(1.0, 3.0))
def test_ground_energy_monotone_in_lambda(l1, ratio):
    V = sc.assemble_potential_2d(SIN, nm.TorusGrid(16, 2))
    a = sc.smallest_eigenvalue(V, l1, method="dense", override=True).mu
    b = sc.smallest_eigenvalue(V, l1 * ratio, method="dense", override=True).mu
    assert b >= a - 1e-9 * max(a, 1.0)


def test_loglog_fit_recovers_power():
    lams = np.geomspace(10, 1000, 6)
    slope, icpt, r2 = sc.loglog_fit(lams, 3.0 * lams ** 0.7)
    assert slope == pytest.approx(0.7, abs=1e-12)
    assert icpt == pytest.approx(math.log(3.0), abs=1e-12)
    assert r2 == pytest.approx(1.0)
