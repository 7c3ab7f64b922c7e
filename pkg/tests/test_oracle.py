"""Exact small-ring oracle, checked against dense linear algebra and closed forms."""

from pathlib import Path

import numpy as np
import pytest
import scipy.linalg as la
from hypothesis import given, settings
from hypothesis import strategies as st

from exclusion_lab import build_jump_law, symmetric, tasep
from exclusion_lab.errors import (
    DegenerateDensityError,
    InvalidLawError,
    NotMeanZeroError,
    TooLargeError,
    WrapDominatedError,
)
from exclusion_lab.golden import golden_rows, read_golden
from exclusion_lab.oracle import (
    build_oracle,
    check_current_bound,
    exact_diffusivity,
    exact_h1_norm,
    exact_inner_product,
    exact_integrated_current_norm,
    exact_two_point,
    flux_function,
    occupation_function,
    resolvent_solve,
    semigroup_apply,
)

GOLDEN = Path(__file__).parent / "golden"
LAW075 = build_jump_law({1: 0.75, -1: 0.25})
LONG = build_jump_law({2: 0.5, -1: 0.3, 1: 0.2})


def test_two_site_tasep_generator():
    m = build_oracle(tasep(), 2, 0.5)
    Q = m.generator.toarray()
    # states 01 (s=1, particle at 0) and 10 (s=2, particle at 1) swap at rate 1
    assert Q[1, 2] == 1.0 and Q[2, 1] == 1.0
    assert Q[0].tolist() == [0, 0, 0, 0] and Q[3].tolist() == [0, 0, 0, 0]
    np.testing.assert_allclose(Q.sum(axis=1), 0.0)


@pytest.mark.parametrize("law", [tasep(), LAW075, LONG])
def test_rows_sum_to_zero_and_product_measure_is_stationary(law):
    m = build_oracle(law, 6, 0.3)
    Q = m.generator
    np.testing.assert_allclose(Q @ np.ones(m.dim), 0.0, atol=1e-14)
    np.testing.assert_allclose(m.weights @ Q, 0.0, atol=1e-14)
    assert m.weights.sum() == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("law", [tasep(), LONG])
def test_shift_commutes_with_generator(law):
    m = build_oracle(law, 6, 0.4)
    Q = m.generator.toarray()
    for x in range(m.L):
        idx = m.shift_index(x)
        P = np.zeros((m.dim, m.dim))
        P[np.arange(m.dim), idx] = 1.0
        np.testing.assert_allclose(P @ Q, Q @ P, atol=1e-14)


@pytest.mark.parametrize("law", [tasep(), LONG])
def test_uniformization_matches_dense_expm(law):
    m = build_oracle(law, 6, 0.35)
    F = m.occupancy.astype(float) - m.rho
    for t in (0.3, 2.0, 7.5):
        E = la.expm(t * m.generator.toarray())
        np.testing.assert_allclose(semigroup_apply(m, F, t), E @ F, atol=1e-10)
        p0 = np.zeros(m.dim)
        p0[13] = 1.0
        np.testing.assert_allclose(semigroup_apply(m, p0, t, left=True), p0 @ E, atol=1e-10)


def test_semigroup_conserves_probability_at_long_times():
    m = build_oracle(LAW075, 8, 0.5)
    np.testing.assert_allclose(semigroup_apply(m, np.ones(m.dim), 50.0), 1.0, atol=1e-10)
    np.testing.assert_allclose(semigroup_apply(m, m.weights, 50.0, left=True), m.weights, atol=1e-12)


@pytest.mark.parametrize("law", [tasep(), LAW075, LONG])
def test_two_point_sum_rules(law):
    m = build_oracle(law, 8, 0.3)
    s0 = exact_two_point(m, 0.0)
    np.testing.assert_allclose(s0, m.chi * (np.arange(8) == 0), atol=1e-15)
    for t in (0.02, 0.1, 0.4):
        assert exact_two_point(m, t).sum() == pytest.approx(m.chi, abs=1e-12)
    # First moment chi (1 - 2 rho) b t: exact on the line, so only checked while
    # jumps across the antipodal cut are negligible (shorter for longer range).
    for t in (0.02, 0.1) if law.range == 1 else (0.02,):
        first = (m.centered_sites() * exact_two_point(m, t)).sum()
        expected = m.chi * (1 - 2 * m.rho) * law.drift * t
        assert first == pytest.approx(expected, rel=1e-4 if law.range == 1 else 1e-2)


def test_symmetric_two_point_is_the_ring_random_walk_kernel():
    L, rho = 8, 0.4
    m = build_oracle(symmetric(), L, rho)
    G = np.zeros((L, L))
    for x in range(L):
        G[x, (x + 1) % L] += 0.5
        G[x, (x - 1) % L] += 0.5
        G[x, x] -= 1.0
    for t in (0.02, 0.5, 3.0):
        kernel = la.expm(t * G)[0]
        np.testing.assert_allclose(exact_two_point(m, t), m.chi * kernel, atol=1e-12)


def test_symmetric_diffusivity_at_short_time():
    # On L = 8 the ring folds the kernel, so D = sigma^2 holds to 1e-6 only for short times.
    m = build_oracle(symmetric(), 8, 0.5)
    assert exact_diffusivity(m, 0.02) == pytest.approx(1.0, abs=1e-6)


def test_flux_self_product():
    for law, rho in ((tasep(), 0.5), (tasep(), 0.2), (LAW075, 0.3)):
        m = build_oracle(law, 6, rho)
        w = flux_function(m)
        assert exact_inner_product(m, w, w) == pytest.approx(1.0, abs=1e-12)
    m = build_oracle(LAW075, 6, 0.3)
    wt = flux_function(m, "transport")
    assert exact_inner_product(m, wt, wt) == pytest.approx(0.25, abs=1e-12)


def test_inner_product_rejects_uncentered_functions():
    m = build_oracle(tasep(), 6, 0.5)
    eta0 = occupation_function(m, 0) + m.rho
    with pytest.raises(NotMeanZeroError):
        exact_inner_product(m, eta0, eta0)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8), st.floats(0.1, 0.9))
def test_inner_product_is_positive_semidefinite(coeffs, rho):
    m = build_oracle(tasep(), 6, rho)
    occ = m.occupancy.astype(int)
    local = occ[:, 0] + 2 * occ[:, 1] + 4 * occ[:, 2]
    f = np.asarray(coeffs)[local]
    phi = f - m.expect(f)
    assert exact_inner_product(m, phi, phi) >= -1e-10


@pytest.mark.parametrize("law", [tasep(), LONG])
def test_h1_norm_matches_dense_solve(law):
    m = build_oracle(law, 6, 0.3)
    w = flux_function(m)
    A = np.eye(m.dim) * 0.7 - m.generator.toarray()
    u = np.linalg.solve(A, w)
    direct = sum(m.weights @ (w * u[m.shift_index(x)]) for x in range(m.L))
    assert exact_h1_norm(m, 0.7) == pytest.approx(direct, rel=1e-9)
    assert resolvent_solve(m, 0.7, w).residual <= 1e-9


def test_h1_norm_limits_and_monotonicity():
    m = build_oracle(tasep(), 6, 0.5)
    lam = 1e4
    assert lam * exact_h1_norm(m, lam) == pytest.approx(1.0, rel=1e-2)
    values = [exact_h1_norm(m, lam) for lam in (0.1, 0.3, 1.0, 3.0, 10.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_integrated_current_norm_slope_at_zero():
    m = build_oracle(LAW075, 6, 0.3)
    t = 1e-3
    assert exact_integrated_current_norm(m, t) / t == pytest.approx(1.0, rel=1e-2)


@pytest.mark.parametrize("L", [6, 8])
def test_inequality_holds_on_small_rings(L):
    report = check_current_bound(build_oracle(tasep(), L, 0.5), [0.5, 1.0, 2.0, 4.0, 8.0])
    assert report.holds
    assert all(r.lhs > 0 and r.rhs > 0 for r in report.rows)


def test_ring_green_kubo_identity():
    """Var of the total current equals the diffusivity sum on the ring, exactly."""
    m = build_oracle(tasep(), 8, 0.5)
    t = 0.5
    gk = 1.0 + m.chi * exact_integrated_current_norm(m, t, "transport")
    assert gk == pytest.approx(exact_diffusivity(m, t, check_wrap=False), abs=5e-3)


@pytest.mark.parametrize(
    "fname, law, rho",
    [("tasep_L8_rho0.5.csv", tasep(), 0.5), ("law075_L8_rho0.3.csv", LAW075, 0.3)],
)
def test_golden_values_are_frozen(fname, law, rho):
    frozen = read_golden(GOLDEN / fname)
    ts = sorted({t for t, q in frozen if q.startswith("S:")})
    lams = sorted({x for x, q in frozen if q == "h1_transport"})
    rows = golden_rows(law, 8, rho, ts, lams)
    fresh = {(float(r[3]), r[4]): float(r[5]) for r in rows}
    assert fresh.keys() == frozen.keys()
    for key, v in frozen.items():
        assert fresh[key] == pytest.approx(v, rel=1e-10, abs=1e-14), key


def test_oracle_errors():
    with pytest.raises(TooLargeError):
        build_oracle(tasep(), 13, 0.5)
    with pytest.raises(InvalidLawError):
        build_oracle(build_jump_law({4: 1.0}), 4, 0.5)
    with pytest.raises(DegenerateDensityError):
        build_oracle(tasep(), 6, 0.0)
    with pytest.raises(WrapDominatedError):
        exact_diffusivity(build_oracle(tasep(), 8, 0.5), 2.0)


def test_two_point_is_translation_equivariant():
    m = build_oracle(LONG, 7, 0.4)
    F = m.occupancy.astype(float) - m.rho
    evolved = semigroup_apply(m, F, 0.8)
    ref = exact_two_point(m, 0.8)
    for k in range(m.L):
        s_k = (m.weights * F[:, k]) @ evolved
        np.testing.assert_allclose(np.roll(s_k, -k), ref, atol=1e-13)


@pytest.mark.parametrize("lam", [0.1, 1.0, 10.0])
def test_resolvent_quadratic_form(lam):
    m = build_oracle(LAW075, 8, 0.3)
    w = flux_function(m)
    u = resolvent_solve(m, lam, w).u
    lhs = exact_inner_product(m, u, lam * u - m.generator @ u, check_mean_zero=False)
    assert lhs == pytest.approx(exact_h1_norm(m, lam), rel=1e-8)
