import random

import pytest
from hypothesis import given, settings, strategies as st

from ampf.errors import TopologyError
from ampf.linkstate import CostMap, Topology
from ampf.paths import dijkstra, yen_ksp

from graphs import all_simple_paths, random_graph, yen_matches_oracle


def _cm(topo, costs_by_lid):
    costs = {e: float(costs_by_lid[e.lid]) for e in topo.edges()}
    return CostMap(costs=costs, ab={e: 1.0 for e in costs},
                   latency={e: 0.001 for e in costs})


def _diamond():
    topo = Topology()
    for s in "ABCD":
        topo.add_switch(s)
    topo.add_link("A", "B", 1, 0.001, lid="ab")
    topo.add_link("B", "D", 1, 0.001, lid="bd")
    topo.add_link("A", "C", 1, 0.001, lid="ac")
    topo.add_link("C", "D", 1, 0.001, lid="cd")
    return topo, _cm(topo, {"ab": 2, "bd": 2, "ac": 3, "cd": 3})


def test_same_switch_is_empty_path():
    topo, cm = _diamond()
    p = dijkstra(topo, cm, "A", "A")
    assert p.edges == () and p.total_cost == 0


def test_parallel_edges_pick_cheaper():
    topo = Topology()
    topo.add_switch("A")
    topo.add_switch("B")
    topo.add_link("A", "B", 1, 0.001, lid="x")
    topo.add_link("A", "B", 1, 0.001, lid="y")
    cm = _cm(topo, {"x": 5, "y": 3})
    assert [e.lid for e in dijkstra(topo, cm, "A", "B").edges] == ["y"]


def test_unknown_switch():
    topo, cm = _diamond()
    with pytest.raises(TopologyError):
        dijkstra(topo, cm, "A", "Z")


def test_disconnected_returns_none():
    topo, cm = _diamond()
    excluded = [e for e in topo.edges() if e.u == "A"]
    assert dijkstra(topo, cm, "A", "D", excluded_edges=excluded) is None
    assert yen_ksp(topo, cm, "A", "D", 3) != []


def test_line_graph_single_path():
    topo = Topology()
    for s in "ABC":
        topo.add_switch(s)
    topo.add_link("A", "B", 1, 0.001, lid="ab")
    topo.add_link("B", "C", 1, 0.001, lid="bc")
    assert len(yen_ksp(topo, _cm(topo, {"ab": 1, "bc": 1}), "A", "C", 3)) == 1


def test_diamond_two_paths():
    topo, cm = _diamond()
    assert [p.total_cost for p in yen_ksp(topo, cm, "A", "D", 2)] == [4.0, 6.0]


def test_k_must_be_positive():
    topo, cm = _diamond()
    with pytest.raises(ValueError):
        yen_ksp(topo, cm, "A", "D", 0)


def test_six_node_dijkstra_matches_enumeration():
    rng = random.Random("dijkstra6")
    for _ in range(30):
        topo, cm = random_graph(rng, 6, integer_costs=False)
        paths = all_simple_paths(topo, cm, "s0", "s5")
        got = dijkstra(topo, cm, "s0", "s5")
        if not paths:
            assert got is None
        else:
            assert got.total_cost == pytest.approx(paths[0].total_cost)


def test_seven_node_top5():
    rng = random.Random("yen7")
    for _ in range(20):
        topo, cm = random_graph(rng, 7)
        assert yen_matches_oracle(topo, cm, "s0", "s6", 5)


@settings(max_examples=60)
@given(st.integers(0, 10**6), st.integers(2, 8), st.integers(1, 8))
def test_yen_agrees_with_enumeration(seed, n, k):
    topo, cm = random_graph(random.Random(seed), n)
    assert yen_matches_oracle(topo, cm, "s0", f"s{n - 1}", k)


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.integers(2, 7))
def test_prefix_property(seed, n):
    topo, cm = random_graph(random.Random(seed), n, p_edge=0.6)
    full = [p.edges for p in yen_ksp(topo, cm, "s0", f"s{n - 1}", 8)]
    for k in range(1, 8):
        assert [p.edges for p in yen_ksp(topo, cm, "s0", f"s{n - 1}", k)] == full[:k]


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.integers(2, 8))
def test_paths_well_formed(seed, n):
    topo, cm = random_graph(random.Random(seed), n, integer_costs=False)
    paths = yen_ksp(topo, cm, "s0", f"s{n - 1}", 6)
    costs = [p.total_cost for p in paths]
    assert costs == sorted(costs)
    assert len({p.edges for p in paths}) == len(paths)
    for p in paths:
        assert len(set(p.switches)) == len(p.switches)
        assert all(a.v == b.u for a, b in zip(p.edges, p.edges[1:]))
        assert p.bottleneck_ab == min(cm.ab[e] for e in p.edges)


def test_infinite_cost_edges_unusable():
    topo, cm = _diamond()
    costs = dict(cm.costs)
    for e in costs:
        if e.lid == "ab":
            costs[e] = float("inf")
    cm2 = CostMap(costs=costs, ab=cm.ab, latency=cm.latency)
    assert [str(p) for p in yen_ksp(topo, cm2, "A", "D", 3)] == ["A-C-D"]
