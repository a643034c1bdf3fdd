"""Small random worlds for property and oracle tests."""
from __future__ import annotations

import datetime as dt

import numpy as np
import torch

from mantis.baselines import BpConfig
from mantis.features import DOMAIN_FEATURES, IP_FEATURES, FeatureVector, hosting_slice, impute
from mantis.gnn.train import score_function
from mantis.graph import ExpansionConfig, HeteroGraph, NodeRef, expand, node_sort
from mantis.pdns import PdnsStore, TimeWindow

from oracles import bfs_expand, two_hop_weights, weighted_mean

DAY = 86400
T0 = int(dt.datetime(2022, 7, 1, tzinfo=dt.timezone.utc).timestamp())
DAY0 = dt.date(2022, 7, 1)


def random_records(rng: np.random.Generator, n: int, n_apex: int = 40, n_ip: int = 30, days: int = 20):
    """A-records over ``.com``/``.net`` names and a few /24s; segments may fall outside any window."""
    apexes = [f"d{i}.{'com' if i % 3 else 'net'}" for i in range(n_apex)]
    names = apexes + [f"www.{a}" for a in apexes[: n_apex // 3]] + [f"m{i}.{apexes[i]}" for i in range(n_apex // 5)]
    ips = [f"10.{i % 4}.{i // 8}.{i}" for i in range(n_ip)]
    out = []
    for _ in range(n):
        first = T0 + int(rng.integers(0, days * DAY))
        last = first + int(rng.integers(0, 5 * DAY))
        out.append({"rrname": names[int(rng.integers(len(names)))], "rrtype": "A",
                    "rdata": ips[int(rng.integers(len(ips)))], "time_first": first, "time_last": last,
                    "count": int(rng.integers(1, 50))})
    return out


def toy_world(seed: int, n_mal: int = 24, n_ben: int = 24, noise: float = 1.0):
    """Two hosting communities with a feature shift and a few cross edges.

    Returns (graph, features, labels) where labels maps domain name to 0/1.
    """
    rng = np.random.default_rng(seed)
    g = HeteroGraph()
    labels = {}
    for cls, n, base in ((1, n_mal, "bad"), (0, n_ben, "good")):
        ips = [f"10.{cls}.{i // 4}.{i}" for i in range(max(2, n // 4))]
        for i in range(n):
            name = f"{base}{i}.com" if i % 5 else f"www.{base}{i}.com"
            labels[name] = cls
            for j in rng.choice(len(ips), size=int(rng.integers(1, 3)), replace=False):
                g.add_resolution(name, ips[int(j)], None)
    for _ in range(max(1, (n_mal + n_ben) // 12)):  # a little cross-community hosting
        g.add_resolution(f"bad{int(rng.integers(n_mal))}.com", f"10.0.0.{int(rng.integers(max(2, n_ben // 4)))}", None)
    feats = {}
    for node in node_sort(g.nodes):
        if node.kind in ("apex", "fqdn"):
            y = labels.get(node.key, labels.get("www." + node.key, 0))
            v = rng.normal(size=len(DOMAIN_FEATURES)) * noise + (0.8 if y else -0.8)
            feats[node] = FeatureVector(node.kind, np.abs(v), {"lexical": True, "hosting": True})
        elif node.kind == "ip":
            v = np.abs(rng.normal(size=len(IP_FEATURES))) + (1.0 if node.key.startswith("10.1.") else 0.0)
            feats[node] = FeatureVector("ip", v, {"hosting": True}, categorical=("", ""))
    return g, feats, labels


_KORD = {"apex": 0, "fqdn": 1, "ip": 2}


def relu_pattern(model, gt, block, x):
    hs = model.net.propagate(gt, block, x)
    return [tuple((h[k] > 0).numpy().tobytes() for k in sorted(h)) for h in hs]


def finite_difference_check(model, gt, target, rng, output, h=1e-3, tries=50):
    """Max normwise relative error between autograd and central differences at a random input point.

    Points whose ReLU activation pattern changes within +-h on any coordinate are
    resampled, since the network is only piecewise smooth.
    """
    fn, block, x0 = score_function(model, gt, target, output)
    model.net.eval()
    for _ in range(tries):
        x = {k: v + torch.as_tensor(rng.normal(scale=0.3, size=tuple(v.shape))) for k, v in x0.items()}
        pat = relu_pattern(model, gt, block, x)
        xs = {k: v.clone().requires_grad_(True) for k, v in x.items()}
        grads = torch.autograd.grad(fn(xs), [xs[k] for k in xs], allow_unused=True)
        analytic = np.concatenate([(torch.zeros_like(x[k]) if g is None else g).numpy().ravel()
                                   for k, g in zip(xs, grads)])
        numeric, kink = [], False
        with torch.no_grad():
            for k in x:
                for idx in np.ndindex(*x[k].shape):
                    xp = {kk: vv.clone() for kk, vv in x.items()}
                    xm = {kk: vv.clone() for kk, vv in x.items()}
                    xp[k][idx] += h
                    xm[k][idx] -= h
                    if relu_pattern(model, gt, block, xp) != pat or relu_pattern(model, gt, block, xm) != pat:
                        kink = True
                        break
                    numeric.append((float(fn(xp)) - float(fn(xm))) / (2 * h))
                if kink:
                    break
        if kink:
            continue
        numeric = np.array(numeric)
        scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-12)
        return float(np.max(np.abs(analytic - numeric)) / scale)
    raise AssertionError("no kink-free point found")


def as_tuples(g):
    nodes = {(n.kind, n.key) for n in g.nodes}
    edges = {((s.kind, s.key), r, (d.kind, d.key)) for s, r, d in g.edges}
    return nodes, edges


def expansion_case(seed):
    rng = np.random.default_rng(seed)
    recs = random_records(rng, int(rng.integers(20, 1000)))
    store = PdnsStore()
    store.ingest(recs)
    names = sorted({r["rrname"] for r in recs})
    seeds = list(rng.choice(names, size=min(len(names), int(rng.integers(1, 6))), replace=False))
    cfg = ExpansionConfig(level=int(rng.integers(1, 4)), expansion_rate=int(rng.integers(1, 8)),
                          lookback_days=int(rng.integers(1, 15)))
    day = DAY0 + dt.timedelta(days=int(rng.integers(0, 20)))
    sinks = [f"10.0.0.{i}" for i in range(0, 30, 8)] if rng.random() < 0.5 else []
    public = ["d1.com", "d2.com"] if rng.random() < 0.5 else []
    return recs, store, seeds, cfg, day, sinks, public


def random_tree(rng, n):
    """Random tree as a bipartite domain/IP graph (2-colour by depth parity)."""
    parent = [-1] + [int(rng.integers(0, i)) for i in range(1, n)]
    depth = [0] * n
    for i in range(1, n):
        depth[i] = depth[parent[i]] + 1
    name = [f"n{i}.com" if depth[i] % 2 == 0 else f"10.0.0.{i}" for i in range(n)]
    g = HeteroGraph()
    edges = []
    for i in range(1, n):
        d, ip = (i, parent[i]) if depth[i] % 2 == 0 else (parent[i], i)
        g.add_edge(NodeRef("apex", name[d]), "resolves_to", NodeRef("ip", name[ip]))
        edges.append((i, parent[i]))
    if n == 1:
        g.add_node(NodeRef("apex", name[0]))
    return g, name, depth, edges


def tree_case(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 13))
    g, name, depth, edges = random_tree(rng, n)
    cfg = BpConfig(epsilon=float(rng.uniform(0.05, 0.45)))
    labels = {name[i]: int(rng.integers(0, 2)) for i in range(n) if depth[i] % 2 == 0 and rng.random() < 0.5}
    pri = np.full((n, 2), 0.5)
    for i in range(n):
        if name[i] in labels:
            p = cfg.prior_malicious if labels[name[i]] else cfg.prior_benign
            pri[i] = (1 - p, p)
    return g, name, depth, edges, cfg, labels, pri


def random_featured_graph(seed):
    rng = np.random.default_rng(seed)
    g = HeteroGraph()
    nd, ni = int(rng.integers(3, 25)), int(rng.integers(2, 12))
    doms = [f"d{i}.com" if i % 4 else f"w.d{i}.com" for i in range(nd)]
    ips = [f"10.0.{i // 5}.{i}" for i in range(ni)]
    pairs = set()
    for d in doms:
        for j in rng.choice(ni, size=int(rng.integers(1, min(4, ni) + 1)), replace=False):
            g.add_resolution(d, ips[int(j)], None)
            pairs.add((d, ips[int(j)]))
    feats = {}
    for n in node_sort(g.nodes):
        if n.kind in ("apex", "fqdn"):
            v = rng.normal(size=len(DOMAIN_FEATURES)) * 10
            present = rng.random() < 0.6
            feats[n] = FeatureVector(n.kind, v, {"lexical": True, "hosting": bool(present)})
        elif n.kind == "ip":
            feats[n] = FeatureVector("ip", rng.normal(size=len(IP_FEATURES)) * 10, {"hosting": bool(rng.random() < 0.6)})
    return g, feats, pairs


def check_imputation(g, feats, pairs, top=5):
    """Assert ``impute`` agrees with the shared-neighbour weighted mean oracle on every absent block."""
    out = impute(g, feats, k=top)
    for n, fv in feats.items():
        sl = hosting_slice(n.kind)
        if fv.present["hosting"]:
            assert np.array_equal(out[n].values, fv.values)
            continue
        w = two_hop_weights(sorted(pairs), n.key)
        cand = [(c, NodeRef("ip", k) if n.kind == "ip" else next(m for m in feats if m.key == k)) for k, c in w.items()]
        cand = [(c, m) for c, m in cand if feats[m].present["hosting"]]
        cand.sort(key=lambda t: (-t[0], _KORD[t[1].kind], t[1].key))
        cand = cand[:top]
        assert out[n].imputed
        if not cand:
            assert out[n].fallback
            continue
        want = weighted_mean([feats[m].values[sl] for _, m in cand], [float(c) for c, _ in cand])
        assert np.max(np.abs(out[n].values[sl] - want)) <= 1e-12
        block = np.stack([feats[m].values[sl] for _, m in cand])
        assert np.all(out[n].values[sl] >= block.min(0) - 1e-12)
        assert np.all(out[n].values[sl] <= block.max(0) + 1e-12)
        # lexical block untouched
        keep = np.ones(len(fv.values), bool)
        keep[sl] = False
        assert np.array_equal(out[n].values[keep], fv.values[keep])




def check_expansion(seed):
    """Assert ``expand`` equals the brute-force BFS oracle on one random store."""
    recs, store, seeds, cfg, day, sinks, public = expansion_case(seed)
    g = expand(seeds, day, cfg, store, sinks, public)
    w = TimeWindow.for_day(day, cfg.lookback_days)
    assert as_tuples(g) == bfs_expand(recs, seeds, (w.start, w.end), cfg.level, cfg.expansion_rate, sinks, public)
    g.validate(sinks)
    return len(recs)
