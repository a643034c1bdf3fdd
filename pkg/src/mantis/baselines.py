"""Reference detectors: loopy belief propagation and a feature-only tree ensemble."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .features import DOMAIN_FEATURES, LEXICAL, LINGUISTIC, STATISTICAL, FeatureVector
from .gnn.train import labeled_nodes, stratified_folds
from .graph import DOMAIN_KINDS, HeteroGraph, NodeRef, node_sort
from .metrics import binary_metrics

BP_RELATIONS = ("resolves_to", "subdomain_of")


@dataclass
class BpConfig:
    epsilon: float = 0.1
    prior_malicious: float = 0.99
    prior_benign: float = 0.01
    prior_unknown: float = 0.5
    max_iters: int = 15
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 0.5)")

    @property
    def potential(self) -> np.ndarray:
        e = self.epsilon
        return np.array([[0.5 + e, 0.5 - e], [0.5 - e, 0.5 + e]])


@dataclass
class BpResult:
    beliefs: dict[NodeRef, float]  # P(malicious) per node
    iterations: int
    converged: bool
    deltas: list[float] = field(default_factory=list)


def _logsumexp2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    m = np.maximum(a, b)
    return m + np.log(np.exp(a - m) + np.exp(b - m))


def belief_propagation(graph: HeteroGraph, labels: dict[str, int], cfg: BpConfig | None = None) -> BpResult:
    """Synchronous sum-product BP over domain-IP and fqdn-apex edges.

    ``labels`` maps domain names to 1 (malicious) or 0 (benign); other nodes
    get the unknown prior. Messages are kept normalized in log space.
    """
    cfg = cfg or BpConfig()
    pairs = sorted({(s, d) for s, r, d in graph.edges if r in BP_RELATIONS and s != d})
    nodes = node_sort({n for p in pairs for n in p} | {n for n in graph.nodes if n.kind in DOMAIN_KINDS})
    index = {n: i for i, n in enumerate(nodes)}
    prior = np.full(len(nodes), cfg.prior_unknown)
    for n, i in index.items():
        if n.kind in DOMAIN_KINDS and n.key in labels:
            prior[i] = cfg.prior_malicious if labels[n.key] else cfg.prior_benign
    log_phi = np.log(np.stack([1.0 - prior, prior], axis=1))
    log_psi = np.log(cfg.potential)
    if not pairs:
        return BpResult({n: float(prior[i]) for n, i in index.items()}, 0, True)
    u = np.array([index[s] for s, _ in pairs])
    v = np.array([index[d] for _, d in pairs])
    src = np.concatenate([u, v])  # directed message i -> j
    dst = np.concatenate([v, u])
    m = len(u)
    rev = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
    msg = np.full((2 * m, 2), np.log(0.5))
    deltas = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iters + 1):
        incoming = np.zeros((len(nodes), 2))
        np.add.at(incoming, dst, msg)
        cavity = log_phi[src] + incoming[src] - msg[rev]
        new = np.stack([_logsumexp2(cavity[:, 0] + log_psi[0, 0], cavity[:, 1] + log_psi[1, 0]),
                        _logsumexp2(cavity[:, 0] + log_psi[0, 1], cavity[:, 1] + log_psi[1, 1])], axis=1)
        new -= _logsumexp2(new[:, 0], new[:, 1])[:, None]
        delta = float(np.max(np.abs(np.exp(new) - np.exp(msg))))
        msg = new
        deltas.append(delta)
        if delta < cfg.convergence_tol:
            converged = True
            break
    incoming = np.zeros((len(nodes), 2))
    np.add.at(incoming, dst, msg)
    logb = log_phi + incoming
    logb -= _logsumexp2(logb[:, 0], logb[:, 1])[:, None]
    b = np.exp(logb[:, 1])
    return BpResult({n: float(b[i]) for n, i in index.items()}, it, converged, deltas)


def domain_beliefs(graph: HeteroGraph, labels: dict[str, int], cfg: BpConfig | None = None) -> dict[str, float]:
    res = belief_propagation(graph, labels, cfg)
    return {n.key: p for n, p in res.beliefs.items() if n.kind in DOMAIN_KINDS}


# ---------------------------------------------------------------------------
# feature-only baseline

LEXICAL_ONLY = LEXICAL + STATISTICAL + LINGUISTIC
FEATURE_SETS = {"lexical": LEXICAL_ONLY, "lexical+hosting": DOMAIN_FEATURES}


@dataclass
class FoldScores:
    """Per-fold validation metrics plus their mean."""
    folds: list[dict]

    @property
    def mean(self) -> dict[str, float]:
        keys = ("precision", "recall", "f1", "accuracy", "fpr", "auc")
        return {k: float(np.mean([f[k] for f in self.folds])) for k in keys}


def feature_table(features: dict[NodeRef, FeatureVector], nodes: list[NodeRef], columns=DOMAIN_FEATURES) -> np.ndarray:
    cols = [DOMAIN_FEATURES.index(c) for c in columns]
    return np.stack([features[n].values[cols] for n in nodes]) if nodes else np.zeros((0, len(cols)))


def feature_tree_baseline(graph: HeteroGraph, features: dict[NodeRef, FeatureVector], labels,
                          columns=DOMAIN_FEATURES, folds: int = 5, seed: int = 0,
                          n_estimators: int = 100) -> tuple[RandomForestClassifier, FoldScores]:
    """Bagged trees on tabulated domain features, on the GNN's fold assignment.

    Returns the classifier of the last fold and the per-fold validation metrics.
    """
    nodes, y = labeled_nodes(graph, labels)
    counts = np.bincount(y, minlength=2)
    if counts.min() < 2:
        raise ValueError(f"need >= 2 labelled nodes per class, got {counts.tolist()}")
    X = feature_table(features, nodes, columns)
    fold_of = stratified_folds(y, folds, seed)
    out, clf = [], None
    for f in range(folds):
        tr, va = fold_of != f, fold_of == f
        clf = RandomForestClassifier(n_estimators=n_estimators, random_state=seed, n_jobs=1)
        clf.fit(X[tr], y[tr])
        out.append(binary_metrics(y[va], clf.predict_proba(X[va])[:, 1], 0.5))
    return clf, FoldScores(out)


def bp_baseline(graph: HeteroGraph, labels, folds: int = 5, seed: int = 0,
                cfg: BpConfig | None = None) -> FoldScores:
    """BP on the same folds: training-fold labels are priors, validation nodes start unknown."""
    nodes, y = labeled_nodes(graph, labels)
    fold_of = stratified_folds(y, folds, seed)
    out = []
    for f in range(folds):
        train_labels = {n.key: int(t) for n, t, k in zip(nodes, y, fold_of) if k != f}
        beliefs = domain_beliefs(graph, train_labels, cfg)
        va = np.flatnonzero(fold_of == f)
        out.append(binary_metrics(y[va], np.array([beliefs[nodes[i].key] for i in va]), 0.5))
    return FoldScores(out)
