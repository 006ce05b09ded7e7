"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdicts are printed in a
summary section at the end of the session.
"""
import math
import time

import numpy as np
import pytest
import scipy.linalg as sla

from dissipation_lab import mcsim
from dissipation_lab import moments as mo
from dissipation_lab import numerics as nm
from dissipation_lab import quasimode as qm
from dissipation_lab import schrodinger as sc
from dissipation_lab import twopoint as tp
from dissipation_lab.profiles import ProfileFamily, ShearProfile, cosine, sin_cubed, sine

from test_profiles import symbolic_n0, y_sym
from test_twopoint import brute_commutant_dim, random_family

pytestmark = pytest.mark.slow

SIN = ProfileFamily([sine(1)])
SINCOS = ProfileFamily([sine(1), cosine(1)])
SWEEP = [25, 50, 100, 200, 400]


def test_01_kernel_commutant_equivalence(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_angle, mismatches, n_degenerate = 0.0, 0, 0
    for i in range(50):
        d = int(rng.integers(2, 13))
        k = int(rng.integers(1, 4))
        degenerate = i % 2 == 0
        n_degenerate += degenerate
        fam = random_family(rng, d, k, degenerate)
        kb = tp.kernel_basis(fam)
        mismatches += kb.dim != brute_commutant_dim(fam)
        worst_angle = max(worst_angle, kb.oracle_max_angle)
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and worst_angle < 1e-6 and elapsed < 60
    verdict(1, ok, f"50 families ({n_degenerate} degenerate), dim mismatches {mismatches}, "
                   f"max angle {worst_angle:.1e}, {elapsed:.1f}s")
    assert ok


def _scaling(number, family, lo, hi, verdict):
    start = time.perf_counter()
    fit = sc.scaling_study(family, SWEEP)
    elapsed = time.perf_counter() - start
    certified = all(p.converged for p in fit.points)
    ok = lo <= fit.slope <= hi and certified and elapsed < 600
    verdict(number, ok, f"slope {fit.slope:.4f} in [{lo}, {hi}] (target {fit.target:.4f}), "
                        f"grid-doubling certified {certified}, {elapsed:.0f}s")
    return ok


def test_02_scaling_n0_zero(verdict):
    assert _scaling(2, SINCOS, 0.93, 1.05, verdict)


def test_03_scaling_n0_one(verdict):
    assert _scaling(3, SIN, 0.61, 0.72, verdict)


def test_04_model_problem_exponents(verdict):
    lams = [16, 32, 64, 128, 256, 512]
    start = time.perf_counter()
    parts, ok = [], True
    for m, n in ((1, 1), (1, 2), (2, 1)):
        fit = sc.model_problem_sweep(m, n, -1, lams, R=4.0, N=256)
        good = abs(fit.slope - fit.target) <= 0.06
        ok &= good
        parts.append(f"({m},{n}) slope {fit.slope:.3f} vs {fit.target:.3f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    verdict(4, ok, "; ".join(parts) + f", {elapsed:.0f}s")
    assert ok


def test_05_mc_matches_moments(verdict):
    nu, kappa, ell, N = 1e-3, 1.0, 8, 128
    start = time.perf_counter()
    rate = mo.reference_rate(SIN, nu, kappa, ell)
    horizon = 1.05 * math.log(10.0) / rate
    dt = mo.dt_rule(SIN, nu, kappa, ell, mu_est=rate / nu)
    steps = max(40, math.ceil(horizon / dt))
    dt = horizon / steps
    cfg = mcsim.SimConfig(nu, kappa, ell, SIN, N, dt, steps * dt, 2000, seed=1,
                          checkpoints=steps)
    stats = mcsim.run_ensemble(cfg)
    cmp = mcsim.compare_with_moments(cfg, stats)
    elapsed = time.perf_counter() - start
    decay = cmp.trace[0] / cmp.trace[-1] if cmp.trace[0] > 0 else 0.0
    ok = cmp.within(3.0) and len(cmp.t) >= 20 and decay >= 10 and elapsed < 900
    verdict(5, ok, f"{len(cmp.t)} checkpoints, max |z| {cmp.max_z:.2f} (bound 3), "
                   f"trace decay x{decay:.1f}, {elapsed:.0f}s")
    assert ok


TRIPLES = [(1e-2, 1.0, 2, 64), (1e-2, 0.5, 4, 128), (1e-3, 1.0, 4, 256)]


def test_06_decay_rate_matches_eigenvalue(verdict):
    start = time.perf_counter()
    parts, ok = [], True
    for nu, kappa, ell, N in TRIPLES:
        _, _, fit = mo.decay_experiment(SIN, nu, kappa, ell, N)
        ok &= fit.rel_gap < 0.05
        parts.append(f"(nu={nu:g}, kappa={kappa:g}, ell={ell}) gap {fit.rel_gap:.2%}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    verdict(6, ok, "; ".join(parts) + f", {elapsed:.0f}s")
    assert ok


def test_07_rate_scaling_in_ell(verdict):
    nu, kappa, ells = 1e-3, 1.0, [4, 8, 16, 32]
    start = time.perf_counter()
    rates = []
    for ell in ells:
        N = sc.grid_rule(mo.effective_lambda(nu, kappa, ell))
        _, _, fit = mo.decay_experiment(SIN, nu, kappa, ell, N, efolds=6.0)
        rates.append(fit.rate)
    slope, _, _ = sc.loglog_fit(ells, rates)
    elapsed = time.perf_counter() - start
    ok = 0.58 <= slope <= 0.75
    verdict(7, ok, f"rates {[f'{r:.4g}' for r in rates]}, slope {slope:.4f} in [0.58, 0.75], "
                   f"{elapsed:.0f}s")
    assert ok


def test_08_quasimode_sandwich(verdict):
    start = time.perf_counter()
    rep = qm.quasimode_study(SIN, [2.0 ** k for k in range(4, 10)], y0=math.pi / 2)
    elapsed = time.perf_counter() - start
    spread = rep.spread()
    ok = rep.sandwich_ok() and spread < 0.2 and elapsed < 300
    verdict(8, ok, f"mu_min <= R(q) at all lambda: {rep.sandwich_ok()}, "
                   f"R/lambda^(2/3) spread over top decade {spread:.1%}, {elapsed:.0f}s")
    assert ok


def test_09_hypoelliptic_kernel(verdict):
    start = time.perf_counter()
    sx = tp.TrigVectorField.shear_x(sine(1))
    sy = tp.TrigVectorField.shear_y(sine(1))
    rep = tp.enhancement_diagnostic(lambda K: tp.galerkin_2d([sx, sy], K), [8, 16, 32])
    flat = tp.TrigVectorField.shear_x(ShearProfile(a=(1.0,), constant_ok=True))
    counter = tp.enhancement_diagnostic(lambda K: tp.galerkin_2d([flat], K), [4, 8, 16])
    elapsed = time.perf_counter() - start
    dims = [c.nontrivial_dim for c in rep.cutoffs]
    h1 = [c.h1_min for c in counter.cutoffs]
    trivial = all(d == 0 for d in dims)
    found = counter.verdict == tp.VERDICT_FOUND
    ok = trivial and found and elapsed < 300
    verdict(9, ok, f"sin/sin kernel dims beyond scalars {dims} (need 0), verdict "
                   f"'{rep.verdict}'; constant shear '{counter.verdict}' with H1 "
                   f"{[round(x, 3) for x in h1]}, {elapsed:.0f}s")
    assert ok


def test_10_conservation_and_exactness(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(10)
    N = 64
    # inviscid paths
    tab = mcsim._profile_table(SIN, N)
    phi = rng.standard_normal((16, N)) + 1j * rng.standard_normal((16, N))
    norm0 = np.sqrt(np.sum(np.abs(phi) ** 2, axis=1))
    for _ in range(200):
        phi = mcsim.step_path(phi, rng.standard_normal((16, 1)) * 0.3, tab, 0.0, 8.0, 0.1)
    drift = float(np.max(np.abs(np.sqrt(np.sum(np.abs(phi) ** 2, axis=1)) / norm0 - 1)))
    # heat semigroup: e^{s nu Lap} e^{t nu Lap} = e^{(s+t) nu Lap}, and exact modal decay
    f = rng.standard_normal(N) + 1j * rng.standard_normal(N)
    lhs = nm.heat_step(nm.heat_step(f, 0.05, 0.7), 0.05, 1.3)
    rhs = nm.heat_step(f, 0.05, 2.0)
    y = nm.TorusGrid(N).points()
    mode = nm.heat_step(np.exp(5j * y), 0.05, 2.0)
    semigroup = max(float(np.abs(lhs - rhs).max()),
                    float(np.abs(mode - math.exp(-0.05 * 25 * 2.0) * np.exp(5j * y)).max()))
    # Hermitian symmetry of the moment after evolution
    s = mo.init_rank_one(f, nu=0.01, kappa=1.0, ell=3)
    out, _ = mo.evolve(s, SIN, 0.1, 50, check_rule=False)
    hermitian = bool(np.array_equal(out.g, out.g.conj().T))
    # Strang order against a dense matrix exponential
    n, nu, kappa, ell, T = 16, 0.05, 0.5, 2, 2.0
    D = sc.dense_laplacian_1d(n)
    I = np.eye(n)
    V = sc.assemble_potential_2d(SIN, nm.TorusGrid(n, 2)).values
    G = -nu * (np.kron(D, I) + np.kron(I, D)) - mo.coupling(kappa, ell) * np.diag(V.ravel())
    s = mo.init_rank_one(mo.default_phi(n), nu=nu, kappa=kappa, ell=ell)
    ref = nm.TorusGrid(n).h * np.trace((sla.expm(T * G) @ s.g.ravel()).reshape(n, n)).real
    errs = []
    for steps in (20, 40, 80):
        _, series = mo.evolve(s, SIN, T / steps, steps, check_rule=False)
        errs.append(abs(series.trace[-1] - ref))
    order = min(math.log2(errs[0] / errs[1]), math.log2(errs[1] / errs[2]))
    elapsed = time.perf_counter() - start
    ok = drift <= 1e-12 and semigroup <= 1e-12 and hermitian and order >= 1.8 and elapsed < 120
    verdict(10, ok, f"norm drift {drift:.1e}, semigroup defect {semigroup:.1e}, "
                    f"Hermitian exact {hermitian}, Strang order {order:.2f}, {elapsed:.1f}s")
    assert ok


def test_11_overlap_order_detection(verdict):
    import sympy as sym
    pts = [sym.Integer(0), sym.pi / 2, sym.pi, 3 * sym.pi / 2]
    cases = [
        ([sine(1)], [sym.sin(y_sym)], 1),
        ([sine(1), cosine(1)], [sym.sin(y_sym), sym.cos(y_sym)], 0),
        ([sin_cubed()], [sym.sin(y_sym) ** 3], 2),
    ]
    start = time.perf_counter()
    got = [ProfileFamily(fam).n0 for fam, _, _ in cases]
    elapsed = time.perf_counter() - start
    oracle = [symbolic_n0(exprs, pts) for _, exprs, _ in cases]
    expected = [e for _, _, e in cases]
    ok = got == oracle == expected and elapsed < 1.0
    verdict(11, ok, f"n0 {got}, symbolic oracle {oracle}, expected {expected}, "
                    f"{elapsed * 1e3:.0f}ms")
    assert ok
