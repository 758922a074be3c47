import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poriferous import partition as P
from poriferous.errors import NoConsensus, TopologyViolation
from poriferous.geometry import Circle
from poriferous.mesh import bundled_mesh
from poriferous.sim import (
    AGENT_CAP,
    CommGraph,
    euclidean_voronoi_connectivity,
    initial_phases,
    iss_gamma,
    max_agents,
    run_coverage,
    select_anchor,
    set_anchor,
    synchronize_virtual_center,
    verify_iss,
    workload_metrics,
)

from conftest import config


# ------------------------------------------------------------ anchor


def test_select_anchor_examples():
    assert select_anchor([0.1, 2.0, 4.0], 1, 30) == 0
    # equal circular distance: lower index wins
    ref = math.pi / 2
    assert select_anchor([ref - 0.5, ref + 0.5, 4.0], 2, 4) == 0
    # 6.2 is 0.083 from 0 across the wrap
    assert select_anchor([3.0, 6.2], 1, 30) == 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1), st.integers(1, 30))
def test_set_anchor_keeps_order(N, seed, k):
    ph = initial_phases(N, np.random.default_rng(seed))
    assert P.ordered(ph)
    idx = select_anchor(P.wrap(ph), k, 30)
    out = set_anchor(ph, idx, 2 * math.pi * (k - 1) / 30)
    assert P.ordered(out)
    assert math.remainder(out[idx] - 2 * math.pi * (k - 1) / 30, 2 * math.pi) == pytest.approx(0, abs=1e-12)


# ------------------------------------------------------------ capacity


def test_max_agents_terms():
    c = [Circle(0.3, 0.2)]
    assert max_agents(c, 0.005, gamma=1e9, C_delta=1.0, eps_max=1.0, d_min=0.2) == 100
    # error-budget term: gamma eps / (C beta) = 0.1 * 0.05 / (1 * 0.005) = 1
    assert max_agents(c, 0.005, gamma=0.1, C_delta=1.0, eps_max=0.05, d_min=0.2) == 1
    assert max_agents(c, 0.0, 0.1, 1.0, 0.05) == AGENT_CAP


def test_run_rejects_overlapping_buffers(holes6_world):
    with pytest.raises(TopologyViolation):
        run_coverage(config("holes6", beta=0.5, K_star=1), holes6_world)


def test_iss_gamma_uses_cycle_spectrum():
    assert iss_gamma(0.2, 0.5, 4) == pytest.approx(0.2 * 0.5 * 2.0)
    assert iss_gamma(0.2, 0.5, 3) == pytest.approx(0.2 * 0.5 * 3.0)


# ------------------------------------------------------------ consensus


def test_consensus_all_boundary_is_immediate():
    g = CommGraph.cycle(range(5))
    it, errs = synchronize_virtual_center(g, range(5), 0.3 + 0.1j)
    assert it == 0 and errs == [0.0]


def test_consensus_monotone_on_cycle():
    g = CommGraph.cycle(range(6))
    it, errs = synchronize_virtual_center(g, [0], 1.0, {v: -1.0 for v in range(6)})
    assert it > 0 and errs[-1] < 1e-6
    assert np.all(np.diff(errs) <= 1e-15)


def test_consensus_needs_connected_graph_and_leader():
    with pytest.raises(NoConsensus):
        synchronize_virtual_center(CommGraph([0, 1, 2, 3], [(0, 1), (2, 3)]), [0], 0j)
    with pytest.raises(NoConsensus):
        synchronize_virtual_center(CommGraph.cycle(range(4)), [], 0j)


def test_comm_graph_cycle_and_removal():
    g = CommGraph.cycle(range(1, 7))
    assert g.connected and g.diameter == 3
    h = g.remove([2, 5])
    assert h.nodes == [1, 3, 4, 6] and h.diameter == 2
    assert h.adj[1] == {3, 6}


# ------------------------------------------------------------ ISS and metrics


def test_verify_iss_on_exponential_trace():
    e = 0.9 * np.exp(-0.05 * np.arange(400)) + 1e-4
    rep = verify_iss(e, 0.1, 0.005, 1.0, 0.25, 6, 0.02)
    assert rep.passed
    assert rep.slope == pytest.approx(-0.5, rel=0.02)
    assert rep.slope <= rep.slope_limit


def test_verify_iss_flags_growth():
    e = np.concatenate([np.linspace(1.0, 0.1, 50), np.full(50, 0.8)])
    assert not verify_iss(e, 0.1, 0.005, 1.0, 0.25, 6, 0.02).passed


def test_workload_metrics():
    m = workload_metrics([1.0, 1.0, 2.0])
    assert m["mean"] == pytest.approx(4 / 3)
    assert m["imbalance"] == 2.0
    assert m["rmse"] == pytest.approx(math.sqrt(2) / 3)
    assert workload_metrics([0.0, 1.0])["imbalance"] == math.inf


# ------------------------------------------------------------ baseline


def test_euclidean_voronoi_splits_cells_on_holes6():
    m = bundled_mesh("holes6")
    counts = [
        euclidean_voronoi_connectivity(m, 0.6 * np.exp(2j * np.pi * (np.arange(6) / 6 + rot)))
        for rot in np.linspace(0, 1 / 6, 8, endpoint=False)
    ]
    assert max(max(c) for c in counts) > 1
