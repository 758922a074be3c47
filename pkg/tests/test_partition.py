import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poriferous import partition as P
from poriferous.errors import StepRejected, TopologyViolation
from poriferous.geometry import Circle

ones = lambda q: np.ones(np.shape(q))
zeros = lambda q: np.zeros(np.shape(q))


def _sorted_phases(draw_list):
    psi = np.sort(np.mod(np.asarray(draw_list), 2 * math.pi))
    gaps = np.diff(np.concatenate([psi, [psi[0] + 2 * math.pi]]))
    return psi if np.all(gaps > 1e-3) else None


phase_lists = st.lists(st.floats(0, 2 * math.pi - 1e-6), min_size=2, max_size=8)


# ------------------------------------------------------------ marginal


def test_marginal_density_oracles():
    assert np.all(P.marginal_density(zeros, [0.0, 1.0]) == 0)
    assert P.marginal_density(ones, 0.7)[0] == pytest.approx(0.5, abs=1e-3)
    hole = [Circle(0j, 0.3)]
    assert P.marginal_density(ones, 2.0, circles=hole)[0] == pytest.approx((1 - 0.09) / 2, abs=2e-3)


def test_sector_workloads_uniform_disk():
    table = P.MarginalTable(ones, M=512)
    m = P.sector_workloads(np.array([0, 1, 2, 3]) * math.pi / 2, table)
    assert np.allclose(m, table.total / 4, atol=1e-3)
    assert table.total == pytest.approx(math.pi, rel=1e-6)
    assert P.sector_workload([0.5, 0.5, 3.0], 0, table) == 0


@settings(max_examples=40, deadline=None)
@given(phase_lists)
def test_sector_workloads_partition_the_total(raw):
    psi = _sorted_phases(raw)
    if psi is None:
        return
    table = P.MarginalTable(lambda q: 1 + np.real(q), [Circle(0.5, 0.1)], M=256, Q=32)
    m = P.sector_workloads(psi, table)
    assert np.all(m >= 0)
    assert m.sum() == pytest.approx(table.total, rel=1e-12)


def test_marginal_table_matches_face_sum(holes6_world):
    w = holes6_world
    psi = 2 * math.pi * np.arange(6) / 6 + 0.2
    assert abs(P.sector_workloads(psi, w.table).sum() / w.total_mass - 1) < 0.01


# ------------------------------------------------------------ dynamics


def test_partition_step_examples():
    psi = np.array([0.5, 2.0, 4.0])
    assert np.array_equal(P.partition_step(psi, [1, 1, 1], 0.2, 0.1), psi)
    out = P.partition_step(np.array([1.0, 4.0]), [2.0, 1.0], 0.2, 0.1)
    assert out == pytest.approx([1.02, 3.98], abs=1e-15)
    with pytest.raises(StepRejected):
        P.partition_step(np.array([1.0, 1.01]), [5.0, 0.0], 0.2, 0.1)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=8))
def test_phase_rates_sum_to_zero(m):
    assert abs(P.phase_rates(m, 0.2).sum()) < 1e-12


def test_pinned_agent_does_not_move():
    out = P.partition_step(np.array([0.3, 2.0, 4.0]), [3.0, 1.0, 2.0], 0.2, 0.1, pinned=0)
    assert out[0] == 0.3


# ------------------------------------------------------------ safe bars


def test_bar_missing_obstacles_is_a_ray():
    bar = P.build_safe_bar(1, math.pi, [Circle(0.5, 0.1)], 0.005)
    assert np.allclose(bar.points, [0, -1])
    assert bar.arcs == []


def test_bar_through_obstacle_center():
    bar = P.build_safe_bar(2, 0.0, [Circle(0.5, 0.1)], 0.005)
    (arc,) = bar.arcs
    assert arc["radius"] == pytest.approx(0.101, abs=1e-15)
    assert arc["xi_in"] == pytest.approx(0.399, abs=1e-12)
    assert arc["xi_out"] == pytest.approx(0.601, abs=1e-12)
    # bulge on the counter-clockwise side
    assert np.max(bar.points.imag) == pytest.approx(0.101, abs=1e-12)


def test_same_obstacle_bypass_gap():
    c = [Circle(0.5, 0.1)]
    bars = [P.build_safe_bar(1, 0.0, c, 0.005), P.build_safe_bar(2, 0.02, c, 0.005)]
    ((i, j, k, gap),) = P.same_obstacle_clearances(bars)
    assert gap == pytest.approx(0.1 * 0.005, abs=1e-15)
    assert P.bar_violations(bars, c) == []


def test_buffer_preconditions():
    with pytest.raises(TopologyViolation):
        P.build_safe_bar(1, 0.0, [Circle(0.8, 0.19)], 0.1)
    with pytest.raises(TopologyViolation):
        P.build_safe_bar(1, 0.0, [Circle(0.5, 0.1), Circle(0.5 + 0.2j, 0.1)], 0.05)


def test_violation_checker_flags_crossing():
    c = [Circle(0.5, 0.1)]
    bar = P.build_safe_bar(1, 0.0, c, 0.005)
    bigger = [Circle(0.5, 0.12)]
    assert P.bar_violations([bar], bigger)
    other = P.SafeBar(2, 0.1, np.array([0, 0.3 - 0.2j, 0.4 + 0.3j, np.exp(0.1j)]))
    assert any("intersect" in v for v in P.bar_violations([bar, other], c))


@settings(max_examples=40, deadline=None)
@given(phase_lists)
def test_random_bars_are_safe_and_nested(holes6_world, raw):
    psi = _sorted_phases(raw)
    if psi is None:
        return
    circles = holes6_world.circles
    bars = P.build_bars(psi, circles, 0.005)
    assert P.bar_violations(bars, circles) == []
    for i, j, k, gap in P.same_obstacle_clearances(bars):
        assert abs(gap - circles[k].radius * 0.005 * abs(i - j)) < 1e-9


def test_wrap_pair_ranks_follow_angular_order():
    c = [Circle(0.5, 0.1)]
    bars = P.build_bars(np.array([0.02, 6.2]), c, 0.005)
    # bar 2 sits clockwise of bar 1 on this obstacle, so it takes the inner buffer
    assert [b.arcs[0]["rank"] for b in bars] == [2, 1]
    assert P.bar_violations(bars, c) == []


# ------------------------------------------------------------ corrections and bound


def test_bar_correction_against_half_ring_area():
    c = Circle(0.5, 0.1)
    bar = P.build_safe_bar(3, 0.0, [c], 0.01)
    (D,) = P.bar_corrections([bar], [c], P.uniform_profiles([c]))
    r1 = 0.1 * 1.03
    assert D == pytest.approx(0.5 * math.pi * (r1**2 - 0.01), rel=1e-9)
    # the bound is first order in beta; the exact bulge adds a (1 + i beta / 2) factor
    assert D <= P.workload_error_bound(0.01, 3, [0.1], 1.0) * (1 + 3 * 0.01 / 2) + 1e-15


def test_sector_deviation_within_bound():
    circles = [Circle(0.5, 0.1), Circle(0.55j, 0.12), Circle(-0.5 - 0.1j, 0.09)]
    table = P.MarginalTable(ones, circles, M=512)
    psi = np.array([0.0, 0.05, 1.57, 1.6, 3.34, 5.0])
    bars = P.build_bars(psi, circles, 0.005)
    m, _ = P.actual_workloads(psi, bars, circles, table, P.uniform_profiles(circles))
    dev = np.abs(m - P.sector_workloads(psi, table))
    assert dev.max() > 0
    assert dev.max() <= P.workload_error_bound(0.005, 6, [c.radius for c in circles], 1.0)


def test_actual_workloads_conserve_total():
    circles = [Circle(0.5, 0.1), Circle(-0.4j, 0.12)]
    table = P.MarginalTable(ones, circles, M=512)
    psi = np.array([0.0, 1.5, 4.71])
    bars = P.build_bars(psi, circles, 0.005)
    m, D = P.actual_workloads(psi, bars, circles, table, P.uniform_profiles(circles))
    assert m.sum() == pytest.approx(P.sector_workloads(psi, table).sum(), rel=1e-12)
    assert D[1] == 0 and D[0] > 0 and D[2] > 0


def test_error_bound_linear_in_beta():
    assert P.workload_error_bound(0.0, 6, [0.1, 0.2], 3.0) == 0
    a = P.workload_error_bound(0.005, 6, [0.1, 0.2], 3.0)
    assert P.workload_error_bound(0.01, 6, [0.1, 0.2], 3.0) == 2 * a


# ------------------------------------------------------------ spectrum


def test_cycle_laplacian_exact():
    assert P.weighted_laplacian(np.ones(3))[1] == pytest.approx(3.0)
    assert P.weighted_laplacian(np.ones(4))[1] == pytest.approx(2.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 10), min_size=3, max_size=8))
def test_weighted_laplacian_structure(w):
    L, lam2 = P.weighted_laplacian(w)
    assert np.allclose(L, L.T)
    assert np.allclose(L @ np.ones(len(w)), 0, atol=1e-12)
    assert np.linalg.eigvalsh(L)[0] > -1e-12
    assert lam2 >= min(w) * P.cycle_lambda2(len(w)) - 1e-9
