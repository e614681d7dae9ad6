"""Kernel, Ein, phi, and growth-residual checks.

Reference values were computed independently with mpmath at 40
significant digits and are frozen here as literals.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatcloak.heat_kernel import (
    ein,
    growth_residual,
    heat_equation_residual,
    kernel_gradient,
    kernel_normal_derivative,
    kernel_value,
    phi_gradient,
    phi_value,
)

# mpmath oracles, 40-digit working precision
KERNEL_AT_DIAG = 3.0987498577413241548  # K((0.1,0.1), t=0.1, k=0.2)
KERNEL_AT_AXIS = 3.51134360774062958  # K((0.1,0.0), t=0.1, k=0.2)
GRAD_X1_AT_AXIS = -8.7783590193515739499  # first gradient component there
EIN_AT_1 = 0.79659959929705313428
EIN_AT_30 = 3.9784130465636912576
PHI_AT_UNIT_ARG = -0.063391381946574559653  # -Ein(1)/(4 pi)


def test_kernel_zero_for_nonpositive_time():
    assert kernel_value((1.0, 0.0), 0.0, 1.0) == 0.0
    assert kernel_value((1.0, 0.0), -0.5, 1.0) == 0.0
    assert kernel_value((0.0, 0.0), 0.0, 1.0) == 0.0


def test_kernel_peak_value_at_origin():
    for t, k in [(0.3, 1.0), (2.0, 0.2), (1e-4, 5.0)]:
        assert kernel_value((0.0, 0.0), t, k) == pytest.approx(1.0 / (4 * math.pi * k * t), rel=1e-14)


def test_kernel_matches_high_precision_oracle():
    assert kernel_value((0.1, 0.1), 0.1, 0.2) == pytest.approx(KERNEL_AT_DIAG, rel=1e-13)
    assert kernel_value((0.1, 0.0), 0.1, 0.2) == pytest.approx(KERNEL_AT_AXIS, rel=1e-13)


def test_kernel_other_dimensions():
    # d enters only through the normalization power.
    t, k = 0.7, 0.5
    base = math.exp(-0.25 / (4 * k * t))
    assert kernel_value((0.5,), t, k, d=1) == pytest.approx((4 * math.pi * k * t) ** -0.5 * base, rel=1e-13)
    assert kernel_value((0.5, 0.0, 0.0), t, k, d=3) == pytest.approx((4 * math.pi * k * t) ** -1.5 * base, rel=1e-13)


def test_kernel_rejects_bad_parameters():
    with pytest.raises(ValueError):
        kernel_value((0.0, 0.0), 1.0, 0.0)
    with pytest.raises(ValueError):
        kernel_value((0.0, 0.0), 1.0, -1.0)
    with pytest.raises(ValueError):
        kernel_value((0.0, 0.0), 1.0, 1.0, d=0)
    with pytest.raises(ValueError):
        kernel_value((1.0, 0.0, 0.0), 1.0, 1.0, d=2)


def test_kernel_broadcasts_over_points_and_times():
    pts = np.array([[0.1, 0.1], [0.0, 0.0], [1.0, 2.0]])
    vals = kernel_value(pts, 0.1, 0.2)
    assert vals.shape == (3,)
    assert vals[0] == pytest.approx(KERNEL_AT_DIAG, rel=1e-13)
    times = np.array([-1.0, 0.0, 0.1])
    mixed = kernel_value(np.array([0.1, 0.1]), times, 0.2)
    assert mixed[0] == 0.0 and mixed[1] == 0.0
    assert mixed[2] == pytest.approx(KERNEL_AT_DIAG, rel=1e-13)


def test_gradient_matches_oracle_and_vanishes_at_origin():
    g = kernel_gradient((0.1, 0.0), 0.1, 0.2)
    assert g[0] == pytest.approx(GRAD_X1_AT_AXIS, rel=1e-13)
    assert g[1] == 0.0
    assert np.all(kernel_gradient((0.0, 0.0), 0.5, 1.0) == 0.0)


def test_gradient_matches_finite_differences():
    x = np.array([0.3, -0.2])
    t, k = 0.4, 0.7
    h = 1e-6
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        fd = (kernel_value(x + e, t, k) - kernel_value(x - e, t, k)) / (2 * h)
        assert kernel_gradient(x, t, k)[axis] == pytest.approx(fd, rel=1e-8)


def test_gradient_rejects_nonpositive_time():
    with pytest.raises(ValueError):
        kernel_gradient((0.1, 0.0), 0.0, 1.0)
    with pytest.raises(ValueError):
        kernel_gradient((0.1, 0.0), -1.0, 1.0)


@given(
    x1=st.floats(-3, 3),
    x2=st.floats(-3, 3),
    t=st.floats(1e-3, 10),
    k=st.floats(1e-2, 5),
)
@settings(max_examples=60, deadline=None)
def test_gradient_is_odd_in_x(x1, x2, t, k):
    x = np.array([x1, x2])
    np.testing.assert_allclose(kernel_gradient(-x, t, k), -kernel_gradient(x, t, k), rtol=0, atol=1e-300)


def test_normal_derivative_projects_gradient():
    x, t, k = (0.1, 0.0), 0.1, 0.2
    assert kernel_normal_derivative(x, (1.0, 0.0), t, k) == pytest.approx(GRAD_X1_AT_AXIS, rel=1e-13)
    assert kernel_normal_derivative(x, (0.0, 1.0), t, k) == 0.0
    assert kernel_normal_derivative((0.0, 0.0), (1.0, 0.0), t, k) == 0.0


def test_normal_derivative_requires_unit_vector():
    with pytest.raises(ValueError):
        kernel_normal_derivative((0.1, 0.0), (1.0, 1.0), 0.1, 0.2)


def test_disk_normalization():
    # Radial integral of the kernel over a disk of radius 8 sqrt(kt):
    # 2 pi int_0^R K(r) r dr, evaluated by high-order quadrature.
    from numpy.polynomial.legendre import leggauss

    for t, k in [(0.1, 0.2), (1.0, 1.0), (0.01, 3.0)]:
        radius = 8.0 * math.sqrt(k * t)
        nodes, weights = leggauss(200)
        r = 0.5 * radius * (nodes + 1.0)
        w = 0.5 * radius * weights
        vals = kernel_value(np.stack([r, np.zeros_like(r)], axis=1), t, k)
        mass = 2 * math.pi * float(np.sum(w * vals * r))
        assert mass == pytest.approx(1.0, abs=1e-6)


def test_kernel_satisfies_heat_equation():
    pts = np.array([[0.2, 0.1], [0.5, -0.4], [1.0, 1.0], [0.05, 0.0]])
    for t, k in [(0.3, 0.2), (1.5, 1.0)]:
        res = heat_equation_residual(lambda p, s: kernel_value(p, s, k), pts, t, k)
        scale = max(1.0, float(np.max(np.abs(kernel_value(pts, t, k)))))
        assert np.all(res <= 1e-4 * scale)


def test_kernel_decays_monotonically_to_zero_at_small_time():
    x = np.array([0.5, 0.0])
    k = 0.3
    # Below |x|^2/(2kd) the value decreases as t shrinks; stop the sweep
    # above the underflow floor so strict inequalities stay meaningful.
    t_star = 0.25 / (2 * k * 2)
    times = t_star * np.geomspace(1.0, 0.02, 25)
    vals = kernel_value(x, times, k)
    assert np.all(np.diff(vals) < 0)
    assert vals[-1] < 1e-15


def test_ein_zero_and_reference_points():
    assert ein(0.0) == 0.0
    assert ein(1.0) == pytest.approx(EIN_AT_1, rel=1e-13)
    assert ein(30.0) == pytest.approx(EIN_AT_30, rel=1e-10)


def test_ein_rejects_negative():
    with pytest.raises(ValueError):
        ein(-1e-9)


def test_ein_matches_series_on_working_range():
    # Defining series summed in 50-digit arithmetic; float64 summation
    # would cancel catastrophically near the top of the range.
    mp = pytest.importorskip("mpmath")
    mp.mp.dps = 50
    for z in np.linspace(1e-6, 30.0, 49):
        zm = mp.mpf(float(z))
        ref = float(mp.nsum(lambda n: (-1) ** (n + 1) * zm**n / (n * mp.factorial(n)), [1, mp.inf]))
        assert ein(float(z)) == pytest.approx(ref, rel=1e-12)


def test_ein_branches_agree_at_switchover():
    below = ein(30.0 - 1e-9)
    above = ein(30.0 + 1e-9)
    assert below == pytest.approx(above, rel=1e-10)


def test_ein_derivative_identity():
    # d Ein/dz = (1 - exp(-z))/z
    for z in (0.3, 1.0, 7.5, 20.0):
        h = 1e-6 * max(1.0, z)
        fd = (ein(z + h) - ein(z - h)) / (2 * h)
        assert fd == pytest.approx(-math.expm1(-z) / z, rel=1e-8)


def test_phi_reference_value_and_origin():
    # |x|^2 = 4kt makes the argument exactly one.
    k, t = 0.2, 0.1
    r = math.sqrt(4 * k * t)
    assert phi_value((r, 0.0), t, k) == pytest.approx(PHI_AT_UNIT_ARG, rel=1e-13)
    assert phi_value((0.0, 0.0), t, k) == 0.0
    with pytest.raises(ValueError):
        phi_value((0.1, 0.0), 0.0, k)


def test_phi_magnitude_grows_with_radius():
    k, t = 0.5, 0.3
    radii = np.linspace(0.05, 2.0, 25)
    vals = phi_value(np.stack([radii, np.zeros_like(radii)], axis=1), t, k)
    assert np.all(np.diff(np.abs(vals)) > 0)
    assert np.all(vals < 0)


def test_phi_gradient_matches_finite_differences():
    k, t = 0.2, 0.15
    for x in ([0.3, -0.1], [1e-8, 0.0], [2.0, 1.0]):
        x = np.array(x)
        g = phi_gradient(x, t, k)
        for axis in range(2):
            e = np.zeros(2)
            e[axis] = 1e-6
            fd = (phi_value(x + e, t, k) - phi_value(x - e, t, k)) / 2e-6
            assert g[axis] == pytest.approx(fd, abs=1e-7)


def test_phi_gradient_finite_at_origin():
    g = phi_gradient((0.0, 0.0), 0.1, 0.2)
    assert np.all(g == 0.0)


def test_growth_residual_zero_field():
    assert growth_residual(lambda x, t: 0.0, 3.0, (1.0, 0.0), 0.5, 0.2) == 0.0


def test_growth_residual_kernel_uses_supplied_gradient():
    k = 0.2

    def field(x, t):
        return kernel_value(x, t, k)

    def grad(x, t):
        return kernel_gradient(x, t, k)

    exact = growth_residual(field, 2.0, (0.6, 0.8), 0.7, k, gradient=grad)
    fd = growth_residual(field, 2.0, (0.6, 0.8), 0.7, k)
    # For the kernel itself the combination cancels identically:
    # dK/dr = -(2r/4kt) K.  The finite-difference path sees truncation.
    assert exact <= 1e-14
    assert fd <= 1e-8


def test_growth_residual_bounded_over_sweep():
    k = 1.0
    radii = np.geomspace(1.5, 50.0, 12)
    times = np.geomspace(1e-3, 1e3, 12)
    xi = (1.0, 0.0)

    def dk1(x, t):
        return kernel_gradient(x, t, k)[0]

    def dk1_grad(x, t):
        # Hessian row of the kernel: d/dx of K * (-x1/(2kt)).
        x = np.asarray(x, float)
        kv = kernel_value(x, t, k)
        g = kernel_gradient(x, t, k)
        return np.array(
            [g[0] * (-x[0] / (2 * k * t)) + kv * (-1.0 / (2 * k * t)), g[1] * (-x[0] / (2 * k * t))]
        )

    worst = 0.0
    for r in radii:
        for t in times:
            res = growth_residual(dk1, float(r), xi, float(t), k, gradient=dk1_grad)
            assert math.isfinite(res)
            worst = max(worst, res)
    assert math.isfinite(worst)
