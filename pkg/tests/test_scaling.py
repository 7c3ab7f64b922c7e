import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from exclusion_lab import symmetric, tasep
from exclusion_lab.errors import (
    InsufficientOverlapError,
    InsufficientPointsError,
    LambdaOutOfRangeError,
    NegativeNormError,
    NonPositiveValuesError,
    TailDominatedError,
)
from exclusion_lab.estimators import DiffusivityCurve, TimeGrid, TwoPointEstimate, centered_sites, synthetic_curve
from exclusion_lab.oracle import CurrentCorrelation, build_oracle, exact_h1_norm, exact_integrated_current_norm
from exclusion_lab.scaling import (
    LaplaceProfile,
    compare_two_laws,
    curve_from_function,
    default_lambda_grid,
    extract_h1_profile,
    fit_power_law,
    fit_power_law_halves,
    h1_exponent,
    laplace_slope,
    laplace_transform_tD,
    scaling_collapse,
)

GRID = TimeGrid.geometric(1.0, 2**0.5, 1000.0)


def test_exact_power_law_is_recovered():
    fit = fit_power_law(curve_from_function(GRID, lambda t: 3.0 * t ** (1 / 3)))
    assert fit.exponent == pytest.approx(1 / 3, abs=1e-10)
    assert fit.amplitude == pytest.approx(3.0, rel=1e-10)
    assert fit.window == (GRID.points[-7], 1000.0)
    assert fit.residual_rms < 1e-12


def test_weighted_fit_of_a_constant():
    fit = fit_power_law(synthetic_curve(GRID, lambda t: 2.0))
    assert fit.exponent == pytest.approx(0.0, abs=1e-12)
    assert fit.exponent_ci[0] < 0 < fit.exponent_ci[1]


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(-0.5, 1.0), st.floats(0.1, 10.0))
def test_fit_is_scale_equivariant(c, alpha, amp):
    curve = synthetic_curve(GRID, lambda t: amp * t**alpha * (1 + 0.05 * np.sin(t)))
    a = fit_power_law(curve)
    b = fit_power_law(curve.scaled(c))
    assert b.exponent == pytest.approx(a.exponent, abs=1e-12)
    assert b.amplitude == pytest.approx(c * a.amplitude, rel=1e-9)


def test_fit_errors():
    with pytest.raises(InsufficientPointsError):
        fit_power_law(curve_from_function(GRID, lambda t: t), window=(10.0, 20.0))
    with pytest.raises(InsufficientPointsError):
        fit_power_law(curve_from_function(GRID, lambda t: t), window=(2000.0, 3000.0))
    with pytest.raises(NonPositiveValuesError):
        fit_power_law(curve_from_function(GRID, lambda t: np.where(t > 500, -1.0, 1.0)))


def test_halves_report_both_halves():
    halves = fit_power_law_halves(curve_from_function(GRID, lambda t: t**0.3))
    assert len(halves) == 2
    assert all(h.exponent == pytest.approx(0.3, abs=1e-10) for h in halves)


@pytest.mark.parametrize("a", [0.0, 0.25, 1 / 3, 0.5])
def test_laplace_closed_forms(a):
    lam = np.geomspace(0.01, 0.1, 9)
    prof = laplace_transform_tD(curve_from_function(GRID, lambda t: t**a), lam)
    exact = special.gamma(2 + a) * lam ** (-(2 + a))
    np.testing.assert_allclose(prof.values, exact, rtol=1e-2)
    assert laplace_slope(prof).slope == pytest.approx(-(2 + a), abs=1e-2)


def test_constant_curve_with_short_time_value_gives_inverse_square():
    lam = default_lambda_grid(1000.0)
    prof = laplace_transform_tD(curve_from_function(GRID, lambda t: 1.0), lam, short_time=1.0)
    np.testing.assert_allclose(prof.values, lam**-2.0, rtol=1e-10)
    assert np.all(prof.tail_fraction < 1e-2)


def test_default_lambda_grid():
    lam = default_lambda_grid(1000.0)
    assert lam[-1] == pytest.approx(0.01) and lam[0] < 0.1
    assert np.all(np.diff(lam) < 0)


def test_laplace_errors():
    curve = curve_from_function(GRID, lambda t: t ** (1 / 3))
    with pytest.raises(LambdaOutOfRangeError):
        laplace_transform_tD(curve, [0.005])
    with pytest.raises(TailDominatedError):
        laplace_transform_tD(curve_from_function(GRID, lambda t: t**5), [0.01])


def test_h1_round_trip_on_a_synthetic_profile():
    law, rho, c = tasep(), 0.5, 0.7
    chi = rho * (1 - rho)
    lam = default_lambda_grid(1000.0)
    target = c * lam ** (-1 / 3)
    prof = LaplaceProfile(lam, (law.second_moment + 2 * chi * target) / lam**2, np.zeros_like(lam))
    h1 = extract_h1_profile(prof, law, rho)
    np.testing.assert_allclose(h1.values, target, rtol=1e-8)
    assert h1_exponent(h1).slope == pytest.approx(-1 / 3, abs=1e-8)


def test_negative_norm_is_reported():
    lam = default_lambda_grid(1000.0)
    prof = LaplaceProfile(lam, 0.5 / lam**2, np.zeros_like(lam))
    with pytest.raises(NegativeNormError):
        extract_h1_profile(prof, tasep(), 0.5)
    assert extract_h1_profile(prof, tasep(), 0.5, allow_negative=True).negative.all()


def test_jackknife_errors_from_batches():
    rng = np.random.default_rng(0)
    base = GRID.as_array() ** (1 / 3)
    batches = base * (1 + 0.02 * rng.standard_normal((20, len(GRID))))
    curve = DiffusivityCurve(GRID, batches.mean(axis=0), batches.std(axis=0, ddof=1) / math.sqrt(20), "green_kubo", batches)
    prof = laplace_transform_tD(curve, short_time=1.0)
    assert prof.jackknife.shape == (20, prof.lambdas.size)
    assert np.all(prof.stderr > 0) and np.all(prof.stderr < 0.05 * prof.values)
    slope = laplace_slope(prof)
    assert abs(slope.slope + 7 / 3) < 0.05 and 0 < slope.stderr < 0.05


def test_identical_laws_compare_equal():
    curve = synthetic_curve(GRID, lambda t: 2 * t ** (1 / 3))
    cmp = compare_two_laws(curve, curve)
    assert cmp.difference == 0.0
    assert cmp.agree(1e-12) and not cmp.separated()
    other = synthetic_curve(GRID, lambda t: 0.3 * t**0.5)
    assert compare_two_laws(curve, other).difference == pytest.approx(-(7 / 3) + 2.5, abs=1e-2)
    with pytest.raises(InsufficientOverlapError):
        compare_two_laws(curve, synthetic_curve(TimeGrid.geometric(1.0, 2.0, 5.0), lambda t: t))


def _symmetric_kernel(L, t, rho=0.5):
    x = centered_sites(L)
    s = rho * (1 - rho) * special.ive(np.abs(x), t)
    return TwoPointEstimate(t, s, np.zeros(L), 1)


def test_collapse_identifies_the_diffusive_exponent():
    ests = [_symmetric_kernel(4096, t) for t in (50.0, 100.0, 200.0, 400.0)]
    diffusive = scaling_collapse(ests, symmetric(), 0.5, exponent=0.5)
    kpz = scaling_collapse(ests, symmetric(), 0.5, exponent=2 / 3)
    assert max(diffusive.discrepancy.values()) < 0.1 * min(kpz.discrepancy.values())
    assert kpz.trend() == "increasing" or min(kpz.discrepancy.values()) > 0.01
    same = scaling_collapse([ests[0], ests[0]], symmetric(), 0.5)
    assert list(same.discrepancy.values()) == [0.0]


def test_exact_ring_curve_reproduces_the_exact_h1_norm():
    """Quadrature of an exact ring Green-Kubo curve against the exact resolvent."""
    law, rho = tasep(), 0.5
    m = build_oracle(law, 8, rho)
    grid = TimeGrid.geometric(0.05, 2**0.25, 40.0)
    g = CurrentCorrelation(m, 40.0, "transport")
    d = [law.second_moment + m.chi * exact_integrated_current_norm(m, t, "transport", correlation=g) for t in grid]
    curve = DiffusivityCurve(grid, np.array(d), np.zeros(len(grid)), "green_kubo")
    lam = np.array([1.0, 0.5])
    h1 = extract_h1_profile(laplace_transform_tD(curve, lam, short_time=law.second_moment), law, rho)
    exact = [exact_h1_norm(m, v, "transport") for v in lam]
    np.testing.assert_allclose(h1.values, exact, rtol=5e-3)
