"""Feature-group and edge importance for GNN predictions, bucketed by outcome."""
from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import numpy as np
import torch

from .features import DOMAIN_FEATURES, FEATURE_GROUPS, IP_FEATURES
from .gnn.model import GnnModel, GraphTensors
from .gnn.train import gradients_wrt_features, local_scores, score_function
from .graph import DOMAIN_KINDS, GraphOverlay, HeteroGraph, NodeRef
from .metrics import outcome_buckets

BUCKETS = ("TP", "FP", "TN", "FN")


def check_partition(groups: dict[str, tuple[str, ...]], domain_columns=DOMAIN_FEATURES) -> None:
    """Groups must cover every model input column exactly once."""
    seen: dict[str, str] = {}
    for g, cols in groups.items():
        for c in cols:
            if c in seen:
                raise ValueError(f"feature {c!r} in both {seen[c]!r} and {g!r}")
            seen[c] = g
    want = set(domain_columns) | set(IP_FEATURES)
    missing, extra = want - set(seen), set(seen) - want
    if missing or extra:
        raise ValueError(f"groups do not partition the features: missing {sorted(missing)}, unknown {sorted(extra)}")


def _columns(model: GnnModel, groups) -> dict[str, dict[str, list[int]]]:
    """group -> kind -> model input columns."""
    dom = list(model.cfg.domain_features)
    out = {}
    for g, cols in groups.items():
        per = {"apex": [dom.index(c) for c in cols if c in dom], "ip": [IP_FEATURES.index(c) for c in cols if c in IP_FEATURES]}
        per["fqdn"] = per["apex"]
        out[g] = per
    return out


def _kind_means(gt: GraphTensors) -> dict[str, torch.Tensor]:
    dom = torch.cat([gt.x["apex"], gt.x["fqdn"]])
    m = dom.mean(0) if len(dom) else torch.zeros(gt.x["apex"].shape[1], dtype=gt.x["apex"].dtype)
    ip = gt.x["ip"].mean(0) if len(gt.x["ip"]) else torch.zeros(gt.x["ip"].shape[1], dtype=gt.x["ip"].dtype)
    return {"apex": m, "fqdn": m, "ip": ip}


def _buckets(scores, labels, threshold):
    return outcome_buckets(labels, scores, threshold) if labels is not None else ["ALL"] * len(scores)


def _aggregate(per_node: list[dict[str, float]], buckets: list[str], groups) -> dict[str, dict[str, float]]:
    acc: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for imp, b in zip(per_node, buckets):
        for g in groups:
            acc[b][g].append(imp[g])
            acc["ALL"][g].append(imp[g])
    return {b: {g: float(np.mean(v)) for g, v in gs.items()} for b, gs in acc.items()}


def perturbation_importance(model: GnnModel, graph: HeteroGraph, features, nodes: list[NodeRef], labels=None,
                            groups=FEATURE_GROUPS, threshold: float = 0.5, gt: GraphTensors | None = None,
                            per_node: list | None = None) -> dict[str, dict[str, float]]:
    """Mean |score change| when a group is set to the training mean across the target's computation subgraph.

    Returns bucket -> group -> score, with buckets TP/FP/TN/FN (or ALL only
    when ``labels`` is None). ``per_node`` collects the raw per-node maps.
    """
    check_partition(groups, model.cfg.domain_features)
    gt = gt or model.tensors(graph, features)
    cols = _columns(model, groups)
    means = _kind_means(gt)
    model.net.eval()
    imps, scores = [], []
    with torch.no_grad():
        for node in nodes:
            fn, _, x0 = score_function(model, gt, node)
            base = float(fn(x0))
            scores.append(base)
            imp = {}
            for g in groups:
                x = {k: v.clone() for k, v in x0.items()}
                for kind, c in cols[g].items():
                    if c and len(x[kind]):
                        x[kind][:, c] = means[kind][c]
                imp[g] = abs(float(fn(x)) - base)
            imps.append(imp)
    if per_node is not None:
        per_node.extend(imps)
    return _aggregate(imps, _buckets(scores, labels, threshold), groups)


def gradient_importance(model: GnnModel, graph: HeteroGraph, features, nodes: list[NodeRef], labels=None,
                        groups=FEATURE_GROUPS, threshold: float = 0.5, gt: GraphTensors | None = None,
                        per_node: list | None = None) -> dict[str, dict[str, float]]:
    """Per group, the largest |d score / d feature| over its columns and the computation subgraph."""
    check_partition(groups, model.cfg.domain_features)
    gt = gt or model.tensors(graph, features)
    cols = _columns(model, groups)
    imps, scores = [], []
    for node in nodes:
        fn, _, x0 = score_function(model, gt, node)
        with torch.no_grad():
            scores.append(float(fn(x0)))
        grads = gradients_wrt_features(model, graph, features, node, gt=gt)
        imp = {}
        for g in groups:
            best = 0.0
            for n, row in grads.items():
                kind = "apex" if n.kind in DOMAIN_KINDS else n.kind
                c = cols[g].get(kind, [])
                if c:
                    best = max(best, float(np.max(np.abs(row[c]))))
            imp[g] = best
        imps.append(imp)
    if per_node is not None:
        per_node.extend(imps)
    return _aggregate(imps, _buckets(scores, labels, threshold), groups)


def top_group_agreement(a: list[dict[str, float]], b: list[dict[str, float]]) -> float:
    """Share of nodes whose highest-ranked group is the same under both maps."""
    if not a:
        return float("nan")
    top = lambda imp: min(imp, key=lambda g: (-imp[g], g))
    return float(np.mean([top(x) == top(y) for x, y in zip(a, b)]))


def edge_importance(model: GnnModel, graph: HeteroGraph, features, target: NodeRef,
                    edges: list | None = None) -> list[tuple[tuple, float]]:
    """Occlusion ranking of resolves_to edges: score drop when each edge alone is removed.

    Defaults to the resolves_to edges inside the target's computation subgraph.
    Sorted by drop, largest first, ties in canonical edge order.
    """
    ov = GraphOverlay(graph)
    local = ov.local(target, model.cfg.layers)
    if edges is None:
        edges = [e for e in local.edges if e[1] == "resolves_to"]
    base = float(local_scores(model, ov, features, [target])[0])
    out = []
    for e in edges:
        if not ov.has_edge(e):
            continue
        ov.remove_edge(*e)
        s = float(local_scores(model, ov, features, [target])[0])
        ov.add_edge(*e)
        out.append((e, base - s))
    return sorted(out, key=lambda t: (-t[1], t[0][0].sort_key(), t[0][2].sort_key()))


def write_importance_csv(report: dict[str, dict[str, float]], path) -> Path:
    path = Path(path)
    order = [b for b in BUCKETS + ("ALL",) if b in report]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bucket,group,score\n")
        for b in order:
            for g in sorted(report[b]):
                fh.write(f"{b},{g},{report[b][g]:.8g}\n")
    return path
