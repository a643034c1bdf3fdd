"""Guided expansion around seed domains and the heterogeneous hosting graph."""
from __future__ import annotations

import datetime as dt
import ipaddress
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple

from .names import apex_of, subnet24
from .pdns import PdnsStore, TimeWindow, day_of, parse_day

log = logging.getLogger(__name__)

KINDS = ("apex", "fqdn", "ip", "subnet24", "asn")
DOMAIN_KINDS = ("apex", "fqdn")
RELATIONS = ("subdomain_of", "resolves_to", "in_subnet", "in_asn")
_KIND_ORDER = {k: i for i, k in enumerate(KINDS)}


class NodeRef(NamedTuple):
    kind: str
    key: str

    def sort_key(self):
        return (_KIND_ORDER[self.kind], self.key)


def domain_node(name: str) -> NodeRef:
    return NodeRef("apex" if apex_of(name) == name else "fqdn", name)


def node_sort(nodes: Iterable[NodeRef]) -> list[NodeRef]:
    return sorted(nodes, key=NodeRef.sort_key)


Edge = tuple  # (src: NodeRef, relation: str, dst: NodeRef)

_SCHEMA = {
    "subdomain_of": ({"fqdn"}, {"apex"}),
    "resolves_to": ({"fqdn", "apex"}, {"ip"}),
    "in_subnet": ({"ip"}, {"subnet24"}),
    "in_asn": ({"subnet24"}, {"asn"}),
}


class AsnTable:
    """Longest-prefix ``prefix,asn`` lookup."""

    def __init__(self, rows: Iterable[tuple[str, str]] = ()):
        by_len: dict[int, dict[int, str]] = defaultdict(dict)
        for prefix, asn in rows:
            net = ipaddress.IPv4Network(prefix, strict=False)
            by_len[net.prefixlen][int(net.network_address)] = asn.upper()
        self._by_len = dict(sorted(by_len.items(), reverse=True))

    @classmethod
    def load(cls, path: str | Path) -> "AsnTable":
        rows = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("prefix,"):
                    continue
                prefix, asn = line.split(",")
                rows.append((prefix, asn))
        return cls(rows)

    def lookup(self, ip: str) -> str | None:
        addr = int(ipaddress.IPv4Address(ip))
        for plen, table in self._by_len.items():
            mask = (0xFFFFFFFF << (32 - plen)) & 0xFFFFFFFF
            asn = table.get(addr & mask)
            if asn is not None:
                return asn
        return None


@dataclass(frozen=True)
class ExpansionConfig:
    level: int = 2
    expansion_rate: int = 200
    window_days: int = 7
    subnet_prefix: int = 24
    lookback_days: int = 14

    def __post_init__(self):
        if self.level not in (1, 2, 3):
            raise ValueError("level must be 1, 2 or 3")
        if self.expansion_rate < 1:
            raise ValueError("expansion_rate must be >= 1")
        if self.subnet_prefix != 24:
            raise ValueError("only /24 subnets are supported")
        if self.window_days < 1 or self.lookback_days < 1:
            raise ValueError("window_days and lookback_days must be >= 1")


@dataclass
class HeteroGraph:
    nodes: set = field(default_factory=set)
    edges: set = field(default_factory=set)
    seed_marks: set = field(default_factory=set)
    day_span: TimeWindow | None = None

    # -- construction -----------------------------------------------------
    def add_node(self, node: NodeRef) -> None:
        self.nodes.add(node)

    def add_edge(self, src: NodeRef, relation: str, dst: NodeRef) -> None:
        self.nodes.add(src)
        self.nodes.add(dst)
        self.edges.add((src, relation, dst))
        self._cache = None

    def add_domain(self, name: str) -> NodeRef:
        node = domain_node(name)
        self.nodes.add(node)
        if node.kind == "fqdn":
            self.add_edge(node, "subdomain_of", NodeRef("apex", apex_of(name)))
        return node

    def add_ip(self, ip: str, asn_table: AsnTable | None) -> NodeRef:
        node = NodeRef("ip", ip)
        sub = NodeRef("subnet24", subnet24(ip))
        self.add_edge(node, "in_subnet", sub)
        asn = asn_table.lookup(ip) if asn_table is not None else None
        if asn is not None:
            self.add_edge(sub, "in_asn", NodeRef("asn", asn))
        return node

    def add_resolution(self, domain: str, ip: str, asn_table: AsnTable | None) -> None:
        d = self.add_domain(domain)
        self.add_edge(d, "resolves_to", self.add_ip(ip, asn_table))

    def remove_edge(self, src: NodeRef, relation: str, dst: NodeRef) -> None:
        self.edges.discard((src, relation, dst))
        self._cache = None

    def copy(self) -> "HeteroGraph":
        return HeteroGraph(set(self.nodes), set(self.edges), set(self.seed_marks), self.day_span)

    # -- views ------------------------------------------------------------
    _cache = None

    def _adj(self):
        if self._cache is None:
            out, inc = defaultdict(list), defaultdict(list)
            for e in self.edges:
                out[e[0]].append(e)
                inc[e[2]].append(e)
            self._cache = (out, inc)
        return self._cache

    def out_edges(self, node: NodeRef) -> list:
        return self._adj()[0].get(node, [])

    def in_edges(self, node: NodeRef) -> list:
        return self._adj()[1].get(node, [])

    def ips_of(self, node: NodeRef) -> list[NodeRef]:
        return sorted(e[2] for e in self.out_edges(node) if e[1] == "resolves_to")

    def domains_on(self, ip: NodeRef) -> list[NodeRef]:
        return node_sort(e[0] for e in self.in_edges(ip) if e[1] == "resolves_to")

    def domain_nodes(self) -> list[NodeRef]:
        return node_sort(n for n in self.nodes if n.kind in DOMAIN_KINDS)

    def domain_keys(self) -> list[str]:
        return sorted(n.key for n in self.nodes if n.kind in DOMAIN_KINDS)

    def find_domain(self, name: str) -> NodeRef | None:
        node = domain_node(name)
        return node if node in self.nodes else None

    def has_resolution(self, name: str) -> bool:
        node = self.find_domain(name)
        return node is not None and any(e[1] == "resolves_to" for e in self.out_edges(node))

    def nodes_of(self, kind: str) -> list[NodeRef]:
        return sorted((n for n in self.nodes if n.kind == kind), key=lambda n: n.key)

    def neighbors(self, node: NodeRef) -> set[NodeRef]:
        return {e[2] for e in self.out_edges(node)} | {e[0] for e in self.in_edges(node)}

    @property
    def last_day(self) -> dt.date:
        if self.day_span is None:
            raise ValueError("graph has no day span")
        return day_of(self.day_span.end - 1)

    def validate(self, sinkhole_ips: Iterable[str] = ()) -> None:
        sinks = set(sinkhole_ips)
        for src, rel, dst in self.edges:
            kinds = _SCHEMA.get(rel)
            if kinds is None or src.kind not in kinds[0] or dst.kind not in kinds[1]:
                raise ValueError(f"schema violation: {src} -{rel}-> {dst}")
            if src not in self.nodes or dst not in self.nodes:
                raise ValueError(f"dangling edge {src} -{rel}-> {dst}")
        for n in self.nodes:
            if n.kind == "ip" and n.key in sinks:
                raise ValueError(f"sinkhole ip {n.key} present")
        if not self.seed_marks <= self.nodes:
            raise ValueError("seed mark on a missing node")

    def __eq__(self, other):
        if not isinstance(other, HeteroGraph):
            return NotImplemented
        return (self.nodes == other.nodes and self.edges == other.edges
                and self.seed_marks == other.seed_marks and self.day_span == other.day_span)

    # -- persistence ------------------------------------------------------
    def save(self, path: str | Path) -> None:
        order = node_sort(self.nodes)
        ids = {n: i for i, n in enumerate(order)}
        seeds = self.seed_marks
        with open(path, "w", encoding="utf-8") as fh:
            span = f"{self.day_span.start},{self.day_span.end}" if self.day_span else ","
            fh.write(f"# day_span,{span}\n")
            fh.write("node_id,kind,key,seed\n")
            for n in order:
                fh.write(f"{ids[n]},{n.kind},{n.key},{int(n in seeds)}\n")
            fh.write("src_id,relation,dst_id\n")
            for s, r, d in sorted((ids[s], r, ids[d]) for s, r, d in self.edges):
                fh.write(f"{s},{r},{d}\n")

    @classmethod
    def load(cls, path: str | Path) -> "HeteroGraph":
        g = cls()
        by_id: dict[int, NodeRef] = {}
        section = None
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("# day_span,"):
                    _, a, b = line.split(",")
                    g.day_span = TimeWindow(int(a), int(b)) if a else None
                elif line.startswith("node_id,"):
                    section = "nodes"
                elif line.startswith("src_id,"):
                    section = "edges"
                elif line and section == "nodes":
                    i, kind, key, seed = line.split(",")
                    n = NodeRef(kind, key)
                    by_id[int(i)] = n
                    g.nodes.add(n)
                    if seed == "1":
                        g.seed_marks.add(n)
                elif line and section == "edges":
                    s, r, d = line.split(",")
                    g.edges.add((by_id[int(s)], r, by_id[int(d)]))
        return g


class GraphOverlay:
    """Copy-on-write view: ``base`` plus the edges of ``added`` minus ``removed``.

    Exposes the read helpers used by imputation, attacks and local scoring
    without copying the base graph.
    """

    def __init__(self, base: HeteroGraph, added: HeteroGraph | None = None, removed: Iterable = ()):
        self.base = base
        self.added = added if added is not None else HeteroGraph()
        self.removed = set(removed)

    def __contains__(self, node):
        return node in self.base.nodes or node in self.added.nodes

    def add_edge(self, src: NodeRef, relation: str, dst: NodeRef) -> None:
        e = (src, relation, dst)
        if e in self.removed:
            self.removed.discard(e)
        elif e not in self.base.edges:
            self.added.add_edge(src, relation, dst)

    def remove_edge(self, src: NodeRef, relation: str, dst: NodeRef) -> None:
        e = (src, relation, dst)
        if e in self.added.edges:
            self.added.remove_edge(src, relation, dst)
        if e in self.base.edges:
            self.removed.add(e)

    def has_edge(self, e) -> bool:
        return (e in self.base.edges or e in self.added.edges) and e not in self.removed

    def out_edges(self, node):
        return sorted((set(self.base.out_edges(node)) | set(self.added.out_edges(node))) - self.removed)

    def in_edges(self, node):
        return sorted((set(self.base.in_edges(node)) | set(self.added.in_edges(node))) - self.removed)

    def ips_of(self, node):
        return sorted(e[2] for e in self.out_edges(node) if e[1] == "resolves_to")

    def domains_on(self, ip):
        return node_sort(e[0] for e in self.in_edges(ip) if e[1] == "resolves_to")

    def neighbors(self, node):
        return {e[2] for e in self.out_edges(node)} | {e[0] for e in self.in_edges(node)}

    def local(self, targets, hops: int) -> HeteroGraph:
        """Subgraph induced on nodes within ``hops`` of ``targets`` (a node or an iterable of nodes)."""
        targets = [targets] if isinstance(targets, NodeRef) else list(targets)
        seen = set(targets)
        frontier = list(targets)
        for _ in range(hops):
            nxt = []
            for n in frontier:
                for m in self.neighbors(n):
                    if m not in seen:
                        seen.add(m)
                        nxt.append(m)
            frontier = nxt
        g = HeteroGraph(day_span=self.base.day_span)
        g.nodes |= seen
        for n in seen:
            for e in self.out_edges(n):
                if e[2] in seen:
                    g.edges.add(e)
        g.seed_marks = {n for n in self.base.seed_marks if n in seen}
        return g

    def materialize(self) -> HeteroGraph:
        g = self.base.copy()
        g.nodes |= self.added.nodes
        g.edges = (g.edges | self.added.edges) - self.removed
        return g


@dataclass
class ExpansionReport:
    skipped_seeds: list[str] = field(default_factory=list)
    pruned: set = field(default_factory=set)


def _is_public(name: str, public: frozenset[str]) -> bool:
    return name in public or apex_of(name) in public


def expand(seeds: list[str], day: dt.date | str, cfg: ExpansionConfig, store: PdnsStore,
           sinkhole_ips: Iterable[str] = (), public_apexes: Iterable[str] = (),
           asn_table: AsnTable | None = None, report: ExpansionReport | None = None) -> HeteroGraph:
    """Alternate domain->IP and IP->domain hops from ``seeds`` up to ``cfg.level``.

    Level k walks 2k-1 hops (Level 2: domain, IP, domain, IP). Resolution and
    co-hosting lookups use the ``cfg.lookback_days`` window ending at the close of ``day``.
    """
    if not seeds:
        raise ValueError("expand needs at least one seed")
    day = parse_day(day)
    sinks = frozenset(sinkhole_ips)
    public = frozenset(public_apexes)
    report = report if report is not None else ExpansionReport()
    window = TimeWindow.for_day(day, cfg.lookback_days)
    g = HeteroGraph(day_span=TimeWindow.for_day(day, 1))

    def ips_for(name):
        return [ip for ip, _, _ in store.resolutions(name, window) if ip not in sinks]

    frontier_domains = []
    for s in sorted(set(seeds)):
        ips = ips_for(s)
        if not ips:
            report.skipped_seeds.append(s)
            continue
        g.seed_marks.add(g.add_domain(s))
        frontier_domains.append(s)
    seen_domains = set(frontier_domains)
    seen_ips: set[str] = set()
    hops = 2 * cfg.level - 1
    frontier_ips: list[str] = []
    for hop in range(hops):
        if hop % 2 == 0:  # domain -> ip
            nxt = set()
            for d in frontier_domains:
                for ip in ips_for(d):
                    g.add_resolution(d, ip, asn_table)
                    if ip not in seen_ips:
                        nxt.add(ip)
            seen_ips |= nxt
            frontier_ips = sorted(nxt)
        else:  # ip -> domain
            nxt = set()
            for ip in frontier_ips:
                for d in store.recent_domains(ip, window, cfg.expansion_rate):
                    if _is_public(d, public):
                        report.pruned.add(d)
                        continue
                    g.add_resolution(d, ip, asn_table)
                    if d not in seen_domains:
                        nxt.add(d)
            seen_domains |= nxt
            frontier_domains = sorted(nxt)
    return g


def union_window(graphs: list[HeteroGraph]) -> HeteroGraph:
    if not graphs:
        raise ValueError("nothing to union")
    out = HeteroGraph()
    starts, ends = [], []
    for g in graphs:
        out.nodes |= g.nodes
        out.edges |= g.edges
        out.seed_marks |= g.seed_marks
        if g.day_span is not None:
            starts.append(g.day_span.start)
            ends.append(g.day_span.end)
    out.day_span = TimeWindow(min(starts), max(ends)) if starts else None
    return out


def toxicity(graph: HeteroGraph, feed, threshold: int = 5, as_of: int | None = None,
             with_flag: bool = False):
    """Share of non-seed domain nodes with positives >= ``threshold``.

    With no non-seed domains the value is 0 and the flag is set.
    """
    if threshold < 1:
        raise ValueError("threshold must be >= 1")
    names = [n.key for n in graph.domain_nodes() if n not in graph.seed_marks]
    if not names:
        return (0.0, True) if with_flag else 0.0
    hits = sum((feed.positives(n, as_of) or 0) >= threshold for n in names)
    value = hits / len(names)
    return (value, False) if with_flag else value


def active_graph(store: PdnsStore, window: TimeWindow, asn_table: AsnTable | None = None,
                 sinkhole_ips: Iterable[str] = ()) -> HeteroGraph:
    """Graph over every A resolution active in ``window`` (the unguided alternative)."""
    sinks = frozenset(sinkhole_ips)
    g = HeteroGraph(day_span=window)
    for name, ip in store.active_a_records(window):
        if ip not in sinks:
            g.add_resolution(name, ip, asn_table)
    return g


def daily_graphs(seeds_by_day: dict[dt.date, list[str]], cfg: ExpansionConfig, store: PdnsStore,
                 sinkhole_ips=(), public_apexes=(), asn_table=None,
                 report: ExpansionReport | None = None) -> list[HeteroGraph]:
    out = []
    for day in sorted(seeds_by_day):
        seeds = seeds_by_day[day]
        if not seeds:
            continue
        out.append(expand(seeds, day, cfg, store, sinkhole_ips, public_apexes, asn_table, report))
    return out


def window_days(day: dt.date, days: int) -> list[dt.date]:
    return [day - dt.timedelta(days=k) for k in range(days - 1, -1, -1)]
