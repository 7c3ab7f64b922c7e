from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from exclusion_lab import build_jump_law, tasep
from exclusion_lab.errors import GridMissError, MissingAccumulatorError, NotTASEPError, WindowTooWideError
from exclusion_lab.estimators import (
    DiffusivityCurve,
    TimeGrid,
    TwoPointEstimate,
    centered_sites,
    diffusivity_from_two_point,
    estimate_two_point,
    green_kubo_diffusivity,
    height_profiles,
    height_variance_diffusivity,
    identity_check,
    second_class_statistics,
    sum_rule_defect,
    sum_rule_residuals,
    two_point_rows,
)
from exclusion_lab.golden import read_golden
from exclusion_lab.trace import SimulationPlan, simulate_replicas

GOLDEN = Path(__file__).parent / "golden"
TIMES = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)


@pytest.fixture(scope="module")
def tasep_traces():
    plan = SimulationPlan(tasep(), 128, 0.3, TIMES)
    return simulate_replicas(plan, 2024, range(3000))


def test_geometric_grid_is_anchored_at_t_max():
    g = TimeGrid.geometric(1.0, 2**0.5, 100.0)
    assert g.points[-1] == 100.0
    assert 1.0 <= g.points[0] < 2**0.5
    assert np.allclose(np.diff(np.log(g.as_array())), np.log(2**0.5))
    assert any(abs(p - 50.0) < 1e-9 for p in g)


@settings(max_examples=50, deadline=None)
@given(
    st.integers(1, 5).flatmap(
        lambda n: st.integers(3, 20).flatmap(
            lambda L: st.tuples(
                hnp.arrays(np.uint8, (n, L), elements=st.integers(0, 1)),
                hnp.arrays(np.uint8, (n, L), elements=st.integers(0, 1)),
            )
        )
    ),
    st.floats(0.05, 0.95),
)
def test_two_point_rows_match_direct_sum(arrays, rho):
    a, b = arrays
    n, L = a.shape
    rows = two_point_rows(a, b, rho)
    direct = np.array(
        [[sum((b[r, (y + x) % L] - rho) * (a[r, y] - rho) for y in range(L)) / L for x in range(L)] for r in range(n)]
    )
    np.testing.assert_allclose(rows, direct, atol=1e-12)
    # with eta(t) = eta(0) the row sums obey the sum rule exactly
    self_rows = two_point_rows(a, a, rho)
    assert np.max(np.abs(sum_rule_defect(self_rows, a.sum(axis=1), rho))) <= 1e-10


def test_time_zero_two_point(tasep_traces):
    rho = 0.3
    chi = rho * (1 - rho)
    s0 = estimate_two_point(tasep_traces, 0.0, rho)
    assert abs(s0.s_values[0] - chi) <= 4 * s0.stderr[0]
    z = np.abs(s0.s_values[1:]) / s0.stderr[1:]
    assert np.mean(z > 4) < 0.01


def test_sum_rules_on_simulation(tasep_traces):
    law, rho = tasep(), 0.3
    for t in TIMES[1:]:
        res = sum_rule_residuals(estimate_two_point(tasep_traces, t, rho), law, rho)
        assert abs(res.zeroth) <= 4 * res.zeroth_stderr
        assert abs(res.first) <= 4 * res.first_stderr
        assert res.max_identity_defect <= 1e-10


def test_point_mass_profiles():
    L, rho, t = 64, 0.5, 2.0
    chi = rho * (1 - rho)
    x = centered_sites(L)
    point = TwoPointEstimate(t, chi * (x == 0), np.zeros(L), 1)
    assert diffusivity_from_two_point(point, tasep(), rho)[0] == 0.0
    spread = TwoPointEstimate(t, chi * 0.5 * (np.abs(x) == 3), np.zeros(L), 1)
    assert diffusivity_from_two_point(spread, tasep(), rho)[0] == pytest.approx(9 / t)


def test_green_kubo_limits(tasep_traces):
    assert green_kubo_diffusivity(tasep_traces, 0.0, tasep(), 0.3, 128) == (1.0, 0.0)


def test_green_kubo_matches_exact_ring_values():
    frozen = read_golden(GOLDEN / "tasep_L8_rho0.5.csv")
    plan = SimulationPlan(tasep(), 8, 0.5, (0.0, 0.5, 1.0, 2.0), frozenset({"current"}))
    traces = simulate_replicas(plan, 77, range(20000))
    for t in (0.5, 1.0, 2.0):
        d, se = green_kubo_diffusivity(traces, t, tasep(), 0.5, 8)
        assert abs(d - frozen[(t, "D_green_kubo_ring")]) <= 4 * se


def test_estimators_agree_on_one_run(tasep_traces):
    law, rho, t = tasep(), 0.3, 8.0
    s0 = estimate_two_point(tasep_traces, 0.0, rho)
    d_def, se_def = diffusivity_from_two_point(estimate_two_point(tasep_traces, t, rho), law, rho, baseline=s0)
    d_gk, se_gk = green_kubo_diffusivity(tasep_traces, t, law, rho, 128)
    d_x = second_class_statistics(tasep_traces, t, law, rho)
    d_h = height_variance_diffusivity(tasep_traces, t, rho, law=law)
    for d, se in ((d_gk, se_gk), (d_x.d_value, d_x.stderr), (d_h.value, d_h.stderr)):
        assert abs(d - d_def) <= 4 * np.hypot(se, se_def)


def test_second_class_mean_displacement(tasep_traces):
    for t in TIMES[1:]:
        sc = second_class_statistics(tasep_traces, t, tasep(), 0.3)
        assert abs(sc.mean_displacement - 0.4 * t) <= 4 * sc.mean_stderr
        assert sc.probabilities.sum() == pytest.approx(1.0)


def test_second_class_is_nearly_free_at_low_density():
    law = build_jump_law({1: 0.75, -1: 0.25})
    plan = SimulationPlan(law, 2000, 0.002, (0.0, 4.0), frozenset({"second_class"}))
    traces = simulate_replicas(plan, 3, range(4000))
    sc = second_class_statistics(traces, 4.0, law, 0.002)
    assert abs(sc.d_value - law.second_moment) <= 4 * sc.stderr + 0.02


def test_doubling_the_ring_leaves_the_diffusivity_unchanged():
    law, rho, t = tasep(), 0.5, 8.0
    out = []
    for L in (128, 256):
        plan = SimulationPlan(law, L, rho, (0.0, t), frozenset({"two_point"}))
        tr = simulate_replicas(plan, 555 + L, range(2000))
        out.append(
            diffusivity_from_two_point(estimate_two_point(tr, t, rho), law, rho, baseline=estimate_two_point(tr, 0.0, rho))
        )
    (a, sa), (b, sb) = out
    assert abs(a - b) < 2 * np.hypot(sa, sb)


def _discrete_gaussian(L, centre, width):
    x = centered_sites(L)
    q = np.exp(-0.5 * ((x - centre) / width) ** 2)
    return q / q.sum()


def test_identity_check_power():
    L, rho, n = 64, 0.5, 20000
    chi = rho * (1 - rho)
    rng = np.random.default_rng(1)
    q = _discrete_gaussian(L, 0.0, 3.0)
    se = np.full(L, 0.002)
    s_mean = chi * q + se * rng.standard_normal(L)
    good = rng.multinomial(n, q)
    assert identity_check(good, s_mean, se, rho).passes
    shifted = rng.multinomial(n, _discrete_gaussian(L, 2.0, 3.0))
    assert not identity_check(shifted, s_mean, se, rho).passes


def test_height_profile_definition():
    occ = np.array([[1, 0, 0, 1, 1, 0]], dtype=np.uint8)
    sites = np.array([-2, -1, 0, 1, 2])
    ht, h0 = height_profiles(occ, occ, np.array([3]), sites)
    # spins 1 - 2 eta: site 0 -> -1, 1 -> +1, 2 -> +1, 5 (= -1) -> +1, 4 (= -2) -> -1
    assert h0.tolist() == [[0, 1, 0, 1, 2]]
    assert ht.tolist() == [[6, 7, 6, 7, 8]]


def test_height_errors(tasep_traces):
    law = build_jump_law({1: 0.75, -1: 0.25})
    with pytest.raises(NotTASEPError):
        height_variance_diffusivity(tasep_traces, 1.0, 0.3, law=law)
    with pytest.raises(WindowTooWideError):
        height_variance_diffusivity(tasep_traces, 1.0, 0.3, window=100)


def test_grid_and_accumulator_errors(tasep_traces):
    with pytest.raises(GridMissError):
        estimate_two_point(tasep_traces, 3.0, 0.3)
    plan = SimulationPlan(tasep(), 32, 0.3, (0.0, 1.0), frozenset({"two_point"}))
    traces = simulate_replicas(plan, 1, range(3))
    with pytest.raises(MissingAccumulatorError):
        green_kubo_diffusivity(traces, 1.0, tasep(), 0.3, 32)


def test_curve_validation():
    g = TimeGrid((1.0, 2.0))
    with pytest.raises(ValueError):
        DiffusivityCurve(g, [1.0, 2.0], [0.1, 0.1], "no-such-route")
    with pytest.raises(ValueError):
        DiffusivityCurve(g, [1.0], [0.1], "definition")
