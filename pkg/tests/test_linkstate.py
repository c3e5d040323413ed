import math

import pytest
from hypothesis import given, strategies as st

from ampf.errors import AdmissionRefused, TopologyError
from ampf.linkstate import (UNUSABLE, Edge, LinkState, Topology, dump_topology,
                            link_cost, load_topology, normalized_ab)

from eq_cases import CASES, check


@pytest.mark.parametrize("name,thunk,expected", CASES, ids=[c[0] for c in CASES])
def test_hand_computed_case(name, thunk, expected):
    assert check(thunk, expected)


def test_case_table_has_twenty_entries():
    assert len(CASES) == 20


@given(st.dictionaries(st.integers(0, 20), st.floats(0, 1e9), min_size=1))
def test_nab_max_is_one(ab):
    if max(ab.values()) <= 0:
        return
    nab = normalized_ab(ab)
    assert max(nab.values()) == 1.0
    assert all(0 <= v <= 1 for v in nab.values())


@given(st.floats(1e-4, 0.1), st.floats(1e-4, 0.1), st.floats(0.01, 1.0))
def test_cost_increases_with_latency(l1, l2, nab):
    if l1 < l2:
        assert link_cost(l1, nab) < link_cost(l2, nab)


@given(st.floats(1e-4, 0.1), st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_cost_decreases_with_bandwidth(lat, n1, n2):
    if n1 < n2:
        assert link_cost(lat, n1) > link_cost(lat, n2)


def _square():
    topo = Topology()
    for s in ("a", "b", "c", "d"):
        topo.add_switch(s)
    topo.add_link("a", "b", 32e6, 0.005, lid="ab")
    topo.add_link("b", "d", 32e6, 0.004, lid="bd")
    topo.add_link("a", "c", 32e6, 0.003, lid="ac")
    topo.add_link("c", "d", 32e6, 0.006, lid="cd")
    return topo


ops = st.lists(st.tuples(st.booleans(), st.integers(0, 7), st.sampled_from("xyz"),
                         st.floats(0, 20e6)), max_size=40)


@given(ops)
def test_reservation_conservation(seq):
    ls = LinkState(_square())
    for is_reserve, ei, owner, amount in seq:
        e = ls.edges[ei]
        if is_reserve:
            try:
                ls.reserve(e, owner, amount)
            except AdmissionRefused:
                pass
        else:
            ls.release(e, owner)
        for edge in ls.edges:
            booked = sum(ls.reservations[edge].values())
            assert booked <= ls.capacity[edge] + 1e-6
            assert ls.available(edge) == pytest.approx(ls.capacity[edge] - booked, abs=1e-6)


@given(st.floats(0, 32e6))
def test_reserve_release_identity(amount):
    ls = LinkState(_square())
    e = ls.edges[0]
    before = ls.available(e)
    ls.reserve(e, "f", amount)
    ls.release(e, "f", amount)
    assert ls.available(e) == before


def test_reserve_path_is_all_or_nothing():
    ls = LinkState(_square())
    edges = [e for e in ls.edges if e.lid in ("ab", "bd") and e.u in ("a", "b")]
    ls.reserve(edges[1], "other", 30e6)
    with pytest.raises(AdmissionRefused):
        ls.reserve_path(edges, "f", 10e6)
    assert ls.reserved(edges[0]) == 0


def test_background_lowers_available():
    ls = LinkState(_square())
    e = ls.edges[0]
    ls.set_background(e, 12e6)
    assert ls.available(e) == 20e6
    with pytest.raises(AdmissionRefused):
        ls.reserve(e, "f", 21e6)


def test_cost_map_is_stale_until_refresh():
    ls = LinkState(_square())
    before = ls.refresh(0.0)
    ls.reserve(ls.edges[0], "f", 16e6)
    assert ls.stale
    assert ls.cost_map is before
    after = ls.refresh(1.0)
    assert after.costs[ls.edges[0]] > before.costs[ls.edges[0]]


def test_saturated_link_unusable():
    ls = LinkState(_square())
    ls.reserve(ls.edges[0], "f", 32e6)
    assert ls.refresh().costs[ls.edges[0]] == UNUSABLE


def test_degenerate_refresh_marks_everything_unusable():
    ls = LinkState(_square())
    for e in ls.edges:
        ls.set_background(e, 40e6)
    assert all(math.isinf(c) for c in ls.refresh().costs.values())


def test_inconsistent_probe_keeps_old_value():
    ls = LinkState(_square())
    e = ls.edges[0]
    assert not ls.ingest_probe(e, 0.002, 0.002, 0.002)
    assert ls.latency[e] == 0.005 and ls.discarded_probes == 1
    assert ls.ingest_probe(e, 0.011, 0.004, 0.004)
    assert ls.latency[e] == pytest.approx(0.007)


def test_topology_file_roundtrip(tmp_path):
    topo = _square()
    topo.add_host("H1", "a")
    p = tmp_path / "t.topo"
    p.write_text(dump_topology(topo))
    again = load_topology(p)
    assert again.switches == topo.switches
    assert again.hosts == topo.hosts
    assert {(l.a, l.b, l.capacity, l.base_latency) for l in again.links.values()} == \
        {(l.a, l.b, l.capacity, l.base_latency) for l in topo.links.values()}


def test_topology_file_errors(tmp_path):
    p = tmp_path / "bad.topo"
    p.write_text("switch a\nswitch b\nlink a b fast 0.001\n")
    with pytest.raises(TopologyError, match=":3:"):
        load_topology(p)
    p.write_text("switch a\nhost H a\nhost H2 zz\n")
    with pytest.raises(TopologyError):
        load_topology(p)


def test_self_loop_rejected():
    topo = Topology()
    topo.add_switch("a")
    with pytest.raises(TopologyError):
        topo.add_link("a", "a", 1e6, 0.001)


def test_edge_reverse():
    assert Edge("a", "b", "x").reverse() == Edge("b", "a", "x")
