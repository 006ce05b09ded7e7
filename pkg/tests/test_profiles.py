import math

import numpy as np
import pytest
import sympy as sym
from hypothesis import given, settings, strategies as st

from dissipation_lab.profiles import (
    ProfileError,
    ProfileFamily,
    ShearProfile,
    critical_points,
    cosine,
    overlap_order,
    parse_profile,
    sin_cubed,
    sine,
    vanishing_order,
)

y_sym = sym.symbols("y", real=True)


def symbolic(profile: ShearProfile):
    expr = sym.Float(profile.a[0])
    for k in range(1, profile.degree + 1):
        expr += sym.nsimplify(profile.a[k]) * sym.cos(k * y_sym)
        expr += sym.nsimplify(profile.b[k - 1]) * sym.sin(k * y_sym)
    return expr


def symbolic_n0(exprs, points):
    """Largest over candidate points of the smallest count of vanishing derivatives."""
    worst = 0
    for y0 in points:
        orders = []
        for e in exprs:
            m = 0
            d = sym.diff(e, y_sym)
            while sym.simplify(d.subs(y_sym, y0)) == 0 and m < 12:
                m += 1
                d = sym.diff(d, y_sym)
            orders.append(m)
        worst = max(worst, min(orders))
    return worst


@pytest.mark.parametrize("family, expected", [
    ([sine(1)], 1),
    ([sine(1), cosine(1)], 0),
    ([sin_cubed()], 2),
])
def test_overlap_order_examples(family, expected):
    assert ProfileFamily(family).n0 == expected
    exprs = [sym.sin(y_sym), sym.cos(y_sym), sym.sin(y_sym) ** 3]
    chosen = {1: [exprs[0]], 0: exprs[:2], 2: [exprs[2]]}[expected]
    pts = [sym.Integer(0), sym.pi / 2, sym.pi, 3 * sym.pi / 2]
    assert symbolic_n0(chosen, pts) == expected


def test_sin_cubed_matches_cube():
    y = np.linspace(0, 2 * np.pi, 101)
    assert np.allclose(sin_cubed()(y), np.sin(y) ** 3, atol=1e-15)


def test_critical_points_of_sine():
    crit = critical_points(sine(1))
    assert [round(c.y, 12) for c in crit] == [round(math.pi / 2, 12), round(3 * math.pi / 2, 12)]
    assert all(c.order == 1 for c in crit)
    assert crit[0].leading_coeff == pytest.approx(-0.5)
    assert crit[1].leading_coeff == pytest.approx(0.5)


def test_sin_cubed_degenerate_points():
    crit = critical_points(sin_cubed())
    orders = {round(c.y, 6): c.order for c in crit}
    assert orders[round(0.0, 6)] == 2
    assert orders[round(math.pi, 6)] == 2
    assert orders[round(math.pi / 2, 6)] == 1


def test_constant_profile_rejected():
    with pytest.raises(ProfileError):
        ShearProfile(a=(1.0,))
    with pytest.raises(ProfileError):
        ProfileFamily([ShearProfile(a=(2.0,), constant_ok=True)])


def test_parse_profile_names():
    assert parse_profile("sin") == sine(1)
    assert parse_profile("cos3") == cosine(3)
    assert parse_profile({"a": [0, 0], "b": [0, 1]}) == sine(2)
    with pytest.raises(ProfileError):
        parse_profile("tan")


def test_fourier_reconstructs():
    u = ShearProfile(a=(0.3, 1.0, -0.5), b=(0.2, 0.7))
    y = np.linspace(0, 2 * np.pi, 37)
    rec = sum(c * np.exp(1j * k * y) for k, c in u.fourier().items())
    assert np.allclose(rec.imag, 0, atol=1e-14)
    assert np.allclose(rec.real, u(y), atol=1e-14)


coeffs = st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=4)


@settings(max_examples=40, deadline=None)
@given(a=coeffs, b=coeffs, order=st.integers(1, 3))
def test_derivative_matches_sympy(a, b, order):
    u = ShearProfile(a=(0.0, *a), b=tuple(b), constant_ok=True)
    d = u.derivative(order)
    f = sym.lambdify(y_sym, sym.diff(symbolic(u), y_sym, order), "numpy")
    y = np.linspace(0, 2 * np.pi, 23)
    assert np.allclose(d(y), np.broadcast_to(f(y), y.shape), atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(a=coeffs, b=coeffs)
def test_critical_points_are_zeros(a, b):
    u = ShearProfile(a=(0.0, *a), b=tuple(b), constant_ok=True)
    if u.is_constant or u.derivative(1).sup_norm() < 1e-3:
        return
    du = u.derivative(1)
    for c in critical_points(u):
        assert abs(float(du(c.y))) <= 1e-8 * du.sup_norm()
        assert c.order == vanishing_order(u, c.y)


@settings(max_examples=25, deadline=None)
@given(k=st.integers(1, 4), shift=st.floats(0, 2 * math.pi))
def test_sine_cosine_pair_is_nondegenerate(k, shift):
    u = ShearProfile(a=(0.0,) + (0.0,) * (k - 1) + (math.cos(shift),),
                     b=(0.0,) * (k - 1) + (math.sin(shift),))
    v = ShearProfile(a=(0.0,) + (0.0,) * (k - 1) + (-math.sin(shift),),
                     b=(0.0,) * (k - 1) + (math.cos(shift),))
    assert overlap_order([u, v]) == 0
