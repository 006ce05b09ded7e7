import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dissipation_lab import numerics as nm


def test_grid_rejects_bad_sizes():
    for N in (8, 100, 0):
        with pytest.raises(ValueError):
            nm.TorusGrid(N)
    with pytest.raises(ValueError):
        nm.TorusGrid(32, 3)


def test_grid_mismatch_raises():
    with pytest.raises(nm.GridMismatch):
        nm.inner(np.ones(32), np.ones(64))
    with pytest.raises(nm.GridMismatch):
        nm.TorusGrid(32).check(np.ones(64))


def test_norm_of_unit_exponential():
    g = nm.TorusGrid(64)
    f = np.exp(3j * g.points()) / math.sqrt(2 * math.pi)
    assert nm.l2_norm(f) == pytest.approx(1.0, abs=1e-14)
    assert nm.modal_norm(f) == pytest.approx(1.0, abs=1e-14)
    assert nm.h1_seminorm(f) == pytest.approx(3.0, abs=1e-13)


def test_laplacian_of_cosine():
    g = nm.TorusGrid(32, 2)
    X, Y = g.mesh()
    f = np.cos(2 * X) * np.sin(3 * Y)
    assert np.allclose(nm.laplacian_apply(f), 13 * f, atol=1e-12)


def test_heat_step_exact_on_mode():
    g = nm.TorusGrid(64)
    y = g.points()
    f = np.sin(5 * y)
    out = nm.heat_step(f, 0.1, 0.3)
    assert np.allclose(out, math.exp(-0.1 * 25 * 0.3) * f, atol=1e-15)


def test_heat_semigroup_identity():
    rng = np.random.default_rng(1)
    f = rng.standard_normal((32, 32))
    a = nm.heat_step(nm.heat_step(f, 0.2, 0.4), 0.2, 0.6)
    b = nm.heat_step(f, 0.2, 1.0)
    assert np.abs(a - b).max() <= 1e-12 * np.abs(f).max()


def test_gradient_of_sine():
    g = nm.TorusGrid(64)
    y = g.points()
    assert np.allclose(nm.gradient(np.sin(2 * y)).real, 2 * np.cos(2 * y), atol=1e-12)


def test_resample_roundtrip():
    g = nm.TorusGrid(32)
    y = g.points()
    f = np.cos(3 * y) + 0.5 * np.sin(7 * y)
    up = nm.resample(f, 128)
    assert np.allclose(up, np.cos(3 * nm.TorusGrid(128).points())
                       + 0.5 * np.sin(7 * nm.TorusGrid(128).points()), atol=1e-13)
    assert np.allclose(nm.resample(up, 32), f, atol=1e-13)


def test_binary_and_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(2)
    f = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
    nm.write_binary(tmp_path / "f.bin", f)
    assert np.array_equal(nm.read_binary(tmp_path / "f.bin"), f)
    raw = (tmp_path / "f.bin").read_bytes()
    assert raw[:8] == (16).to_bytes(4, "little") + (2).to_bytes(4, "little")
    nm.write_csv(tmp_path / "f.csv", f)
    assert np.array_equal(nm.read_csv(tmp_path / "f.csv", dim=2), f)


def test_truncated_binary_rejected(tmp_path):
    nm.write_binary(tmp_path / "f.bin", np.ones(16))
    data = (tmp_path / "f.bin").read_bytes()
    (tmp_path / "g.bin").write_bytes(data[:-16])
    with pytest.raises(ValueError):
        nm.read_binary(tmp_path / "g.bin")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), logN=st.integers(4, 7), dim=st.integers(1, 2))
def test_parseval(seed, logN, dim):
    rng = np.random.default_rng(seed)
    shape = (2 ** logN,) * dim
    f = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    assert nm.l2_norm(f) == pytest.approx(nm.modal_norm(f), rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31), t1=st.floats(0, 2), t2=st.floats(0, 2))
def test_heat_contracts_and_composes(seed, t1, t2):
    rng = np.random.default_rng(seed)
    f = rng.standard_normal(64)
    a = nm.heat_step(f, 0.05, t1)
    assert nm.l2_norm(a) <= nm.l2_norm(f) * (1 + 1e-14)
    assert np.allclose(nm.heat_step(a, 0.05, t2), nm.heat_step(f, 0.05, t1 + t2),
                       atol=1e-12 * np.abs(f).max())


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_laplacian_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, 32, 32))
    lhs = nm.inner(nm.laplacian_apply(a), b)
    rhs = nm.inner(a, nm.laplacian_apply(b))
    assert abs(lhs - rhs) <= 1e-10 * (abs(lhs) + 1)
