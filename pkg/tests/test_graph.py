import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from mantis.graph import (AsnTable, ExpansionConfig, ExpansionReport, GraphOverlay, HeteroGraph, NodeRef,
                          expand, toxicity, union_window)
from mantis.pdns import PdnsStore

from helpers import check_expansion, expansion_case


@pytest.mark.parametrize("seed", range(10))
def test_expand_matches_bfs(seed):
    check_expansion(seed)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.integers(0, 10_000))
def test_expand_seed_order_irrelevant(seed):
    _, store, seeds, cfg, day, sinks, public = expansion_case(seed)
    a = expand(seeds, day, cfg, store, sinks, public)
    b = expand(list(reversed(seeds)) + seeds[:1], day, cfg, store, sinks, public)
    assert a == b


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_expand_level_monotone(seed):
    recs, store, seeds, _, day, _, _ = expansion_case(seed)
    prev = None
    for level in (1, 2, 3):
        g = expand(seeds, day, ExpansionConfig(level=level, expansion_rate=5), store)
        if prev is not None:
            assert prev.nodes <= g.nodes and prev.edges <= g.edges
        prev = g


def test_expand_asn_edges_and_report():
    store = PdnsStore()
    t = 1656633600 + 3 * 86400
    store.ingest([{"rrname": n, "rrtype": "A", "rdata": ip, "time_first": t, "time_last": t + 60, "count": 1}
                  for n, ip in [("evil.com", "1.2.3.4"), ("x.com", "1.2.3.4"), ("google.com", "1.2.3.4"),
                                ("gone.com", "9.9.9.9")]])
    rep = ExpansionReport()
    g = expand(["evil.com", "nothing.com"], "2022-07-04", ExpansionConfig(), store,
               public_apexes=["google.com"], asn_table=AsnTable([("1.2.0.0/16", "as1")]), report=rep)
    assert rep.skipped_seeds == ["nothing.com"]
    assert rep.pruned == {"google.com"}
    assert (NodeRef("subnet24", "1.2.3.0/24"), "in_asn", NodeRef("asn", "AS1")) in g.edges
    assert g.seed_marks == {NodeRef("apex", "evil.com")}
    assert NodeRef("apex", "gone.com") not in g.nodes


def test_expand_rejects_empty_seeds():
    with pytest.raises(ValueError):
        expand([], "2022-07-04", ExpansionConfig(), PdnsStore())


def test_config_validation():
    for kw in ({"level": 4}, {"expansion_rate": 0}, {"subnet_prefix": 16}, {"lookback_days": 0}):
        with pytest.raises(ValueError):
            ExpansionConfig(**kw)


def test_save_load_roundtrip(tmp_path):
    _, store, seeds, cfg, day, _, _ = expansion_case(3)
    g = expand(seeds, day, cfg, store)
    g.save(tmp_path / "g.csv")
    assert HeteroGraph.load(tmp_path / "g.csv") == g
    again = tmp_path / "h.csv"
    HeteroGraph.load(tmp_path / "g.csv").save(again)
    assert again.read_bytes() == (tmp_path / "g.csv").read_bytes()


def test_union_window_and_validate():
    a, b = HeteroGraph(), HeteroGraph()
    a.add_resolution("a.com", "1.1.1.1", None)
    b.add_resolution("www.b.com", "1.1.1.1", None)
    u = union_window([a, b])
    assert NodeRef("apex", "b.com") in u.nodes
    u.validate()
    u.edges.add((NodeRef("ip", "1.1.1.1"), "resolves_to", NodeRef("apex", "a.com")))
    with pytest.raises(ValueError):
        u.validate()


def test_overlay_is_copy_on_write():
    g = HeteroGraph()
    g.add_resolution("a.com", "1.1.1.1", None)
    g.add_resolution("b.com", "1.1.1.1", None)
    before = g.copy()
    ov = GraphOverlay(g)
    a, ip2 = NodeRef("apex", "a.com"), NodeRef("ip", "2.2.2.2")
    ov.add_edge(a, "resolves_to", ip2)
    ov.remove_edge(a, "resolves_to", NodeRef("ip", "1.1.1.1"))
    assert g == before
    assert ov.ips_of(a) == [ip2]
    m = ov.materialize()
    assert (a, "resolves_to", ip2) in m.edges and ip2 in m.nodes
    ov.add_edge(a, "resolves_to", NodeRef("ip", "1.1.1.1"))
    assert ov.has_edge((a, "resolves_to", NodeRef("ip", "1.1.1.1")))
    loc = ov.local(a, 1)
    assert NodeRef("apex", "b.com") not in loc.nodes


class _Feed:
    def __init__(self, pos):
        self.pos = pos

    def positives(self, name, as_of=None):
        return self.pos.get(name)


def test_toxicity():
    g = HeteroGraph()
    for n in ("s.com", "a.com", "b.com", "c.com", "d.com"):
        g.add_resolution(n, "1.1.1.1", None)
    g.seed_marks.add(NodeRef("apex", "s.com"))
    assert toxicity(g, _Feed({"a.com": 7, "b.com": 4, "s.com": 9})) == pytest.approx(0.25)
    only = HeteroGraph()
    only.seed_marks.add(only.add_domain("s.com"))
    assert toxicity(only, _Feed({}), with_flag=True) == (0.0, True)
    with pytest.raises(ValueError):
        toxicity(g, _Feed({}), threshold=0)
