"""Semi-supervised training, inference, embeddings and input gradients."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn.functional as F

from ..features import DOMAIN_FEATURES, IP_FEATURES, FeatureStats, FeatureVector, matrix
from ..graph import HeteroGraph, NodeRef, domain_node
from ..metrics import binary_metrics
from .model import DTYPE, GnnConfig, GnnModel, GraphTensors, HeteroSage, build_vocab, make_block, target_dict

log = logging.getLogger(__name__)

torch.set_num_threads(1)


class TrainingError(RuntimeError):
    pass


@dataclass
class Prediction:
    node: NodeRef
    score: float
    embedding: np.ndarray


@dataclass
class PredictionError:
    node: NodeRef
    error: str


@dataclass
class FoldMetrics:
    fold: int
    epoch: int
    precision: float
    recall: float
    f1: float
    accuracy: float
    auc: float
    fpr: float


@dataclass
class TrainResult:
    model: GnnModel
    folds: list[FoldMetrics]
    best_fold: int
    train_nodes: list[NodeRef]
    val_nodes: list[NodeRef]
    val_labels: np.ndarray
    val_scores: np.ndarray
    losses: list[list[float]] = field(default_factory=list)
    # out-of-fold validation scores pooled over every fold model
    oof_nodes: list[NodeRef] = field(default_factory=list)
    oof_labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    oof_scores: np.ndarray = field(default_factory=lambda: np.zeros(0))


def fit_stats(graph: HeteroGraph, features: dict[NodeRef, FeatureVector]) -> tuple[FeatureStats, FeatureStats]:
    sub = {n: fv for n, fv in features.items() if n in graph.nodes}
    _, dom = matrix(sub, "domain")
    _, ip = matrix(sub, "ip")
    return FeatureStats.fit(DOMAIN_FEATURES, dom), FeatureStats.fit(IP_FEATURES, ip)


def new_model(graph, features, cfg: GnnConfig, seed: int | None = None) -> GnnModel:
    dstats, istats = fit_stats(graph, features)
    vocab = build_vocab(graph)
    c = GnnConfig(**{**cfg.to_dict(), "seed": cfg.seed if seed is None else seed})
    return GnnModel(c, HeteroSage(c, vocab), dstats, istats, vocab)


def labeled_nodes(graph: HeteroGraph, labels) -> tuple[list[NodeRef], np.ndarray]:
    """Domain nodes of ``graph`` carrying a label, in canonical order."""
    if hasattr(labels, "labeled"):
        labels = labels.labeled()
    nodes, ys = [], []
    for name in sorted(labels):
        node = graph.find_domain(name)
        if node is not None:
            nodes.append(node)
            ys.append(int(labels[name]))
    return nodes, np.array(ys, dtype=np.int64)


def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    fold = np.zeros(len(y), dtype=np.int64)
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


def _targets(gt: GraphTensors, nodes: list[NodeRef]) -> list[tuple[str, int]]:
    return [(n.kind, gt.node_index(n)) for n in nodes]


def scores_for(model: GnnModel, gt: GraphTensors, nodes: list[NodeRef], chunk: int = 4096) -> np.ndarray:
    """Full-neighbourhood malicious probabilities for ``nodes``."""
    out = []
    model.net.eval()
    with torch.no_grad():
        for i in range(0, len(nodes), chunk):
            tg = _targets(gt, nodes[i:i + chunk])
            block = make_block(gt, target_dict(tg), model.cfg.layers)
            logits, _ = model.net.logits(gt, block, tg)
            out.append(torch.softmax(logits, dim=1)[:, 1].numpy())
    return np.concatenate(out) if out else np.zeros(0)


def _train_one(model: GnnModel, gt: GraphTensors, tr_nodes, tr_y, va_nodes, va_y, cfg: GnnConfig,
               rng: np.random.Generator, augment: Callable | None = None):
    net = model.net
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    counts = np.bincount(tr_y, minlength=2).astype(np.float64)
    weight = torch.as_tensor(len(tr_y) / (2.0 * np.maximum(counts, 1.0)), dtype=DTYPE)
    best = (-1.0, None, 0)
    losses = []
    stale = 0
    for epoch in range(cfg.epochs):
        net.train()
        g_epoch = augment(epoch, model, rng) if augment is not None else None
        g_epoch = g_epoch or gt
        order = rng.permutation(len(tr_nodes))
        total = 0.0
        for i in range(0, len(order), cfg.batch_size):
            bi = order[i:i + cfg.batch_size]
            tg = _targets(g_epoch, [tr_nodes[j] for j in bi])
            block = make_block(g_epoch, target_dict(tg), cfg.layers, cfg.fanouts, rng)
            logits, _ = net.logits(g_epoch, block, tg)
            loss = F.cross_entropy(logits, torch.as_tensor(tr_y[bi]), weight=weight)
            if not torch.isfinite(loss):
                raise TrainingError(f"loss became {loss.item()} at epoch {epoch}, batch {i // cfg.batch_size}; "
                                    f"lr={cfg.learning_rate}, labels={counts.tolist()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(bi)
        losses.append(total / len(order))
        va_s = scores_for(model, gt, va_nodes)
        f1 = binary_metrics(va_y, va_s, 0.5)["f1"]
        if f1 > best[0]:
            best = (f1, {k: v.detach().clone() for k, v in net.state_dict().items()}, epoch)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    net.load_state_dict(best[1])
    return best[2], losses


def train(graph: HeteroGraph, features: dict[NodeRef, FeatureVector], labels, cfg: GnnConfig | None = None,
          augment_factory: Callable | None = None) -> TrainResult:
    """k-fold training on labelled domain nodes; returns the best-fold model by validation F1.

    ``augment_factory(train_nodes, train_labels, gt)`` may return a per-epoch hook
    that yields a perturbed ``GraphTensors`` (adversarial training).
    """
    cfg = cfg or GnnConfig()
    nodes, y = labeled_nodes(graph, labels)
    counts = np.bincount(y, minlength=2)
    if len(y) == 0 or counts.min() < 2:
        raise TrainingError(f"need >= 2 labelled nodes per class, got {counts.tolist()}")
    base = new_model(graph, features, cfg)
    gt = base.tensors(graph, features)
    if cfg.folds >= 2:
        fold_of = stratified_folds(y, cfg.folds, cfg.seed)
        plan = [(f, fold_of != f, fold_of == f) for f in range(cfg.folds)]
    else:
        fold_of = stratified_folds(y, 5, cfg.seed)
        plan = [(0, fold_of != 0, fold_of == 0)]
    results = []
    all_losses = []
    for f, tr_mask, va_mask in plan:
        model = new_model(graph, features, cfg, seed=cfg.seed * 1000 + f)
        rng = np.random.default_rng(cfg.seed * 7919 + f)
        tr_nodes = [nodes[i] for i in np.flatnonzero(tr_mask)]
        va_nodes = [nodes[i] for i in np.flatnonzero(va_mask)]
        augment = augment_factory(tr_nodes, y[tr_mask], gt) if augment_factory is not None else None
        epoch, losses = _train_one(model, gt, tr_nodes, y[tr_mask], va_nodes, y[va_mask], cfg, rng, augment)
        va_s = scores_for(model, gt, va_nodes)
        m = binary_metrics(y[va_mask], va_s, 0.5)
        fm = FoldMetrics(f, epoch, m["precision"], m["recall"], m["f1"], m["accuracy"], m["auc"], m["fpr"])
        log.info("fold %d: epoch %d f1 %.4f auc %.4f", f, epoch, fm.f1, fm.auc)
        results.append((fm, model, tr_nodes, va_nodes, y[va_mask], va_s))
        all_losses.append(losses)
    best = max(range(len(results)), key=lambda i: (results[i][0].f1, -i))
    fm, model, tr_nodes, va_nodes, va_y, va_s = results[best]
    model.meta = {"best_fold": best, "n_labeled": int(len(y)), "class_counts": counts.tolist()}
    oof_nodes = [n for r in results for n in r[3]]
    return TrainResult(model, [r[0] for r in results], best, tr_nodes, va_nodes, va_y, va_s, all_losses,
                       oof_nodes, np.concatenate([r[4] for r in results]), np.concatenate([r[5] for r in results]))


# ---------------------------------------------------------------------------
# inference

def forward(model: GnnModel, graph: HeteroGraph, features, targets, gt: GraphTensors | None = None,
            sample: tuple[list[int], int] | None = None) -> list[Prediction | PredictionError]:
    """Scores and last-layer embeddings for ``targets`` (NodeRefs or domain names).

    ``sample=(fanouts, seed)`` switches from full neighbourhoods to sampled ones.
    """
    gt = gt or model.tensors(graph, features)
    refs = [t if isinstance(t, NodeRef) else domain_node(t) for t in targets]
    ok = [r for r in refs if r.key in gt.index.get(r.kind, {})]
    out_map = {}
    if ok:
        tg = _targets(gt, ok)
        fan, rng = (None, None) if sample is None else (sample[0], np.random.default_rng(sample[1]))
        block = make_block(gt, target_dict(tg), model.cfg.layers, fan, rng)
        model.net.eval()
        with torch.no_grad():
            logits, emb = model.net.logits(gt, block, tg)
            probs = torch.softmax(logits, dim=1)[:, 1].numpy()
        for r, p, e in zip(ok, probs, emb.numpy()):
            out_map[r] = Prediction(r, float(p), e.copy())
    return [out_map.get(r) or PredictionError(r, "target not in graph") for r in refs]


def embed(model: GnnModel, graph: HeteroGraph, features, targets, gt: GraphTensors | None = None) -> np.ndarray:
    preds = forward(model, graph, features, targets, gt)
    bad = [p for p in preds if isinstance(p, PredictionError)]
    if bad:
        raise KeyError(f"{len(bad)} target(s) missing from graph, first {bad[0].node}")
    return np.stack([p.embedding for p in preds]) if preds else np.zeros((0, model.cfg.hidden_dim))


def score_function(model: GnnModel, gt: GraphTensors, target: NodeRef, output: str = "score"):
    """Closure mapping input-feature tensors of the target's computation subgraph to its output.

    Returns (fn, block, x0) where ``x0`` holds the unperturbed inputs per kind.
    """
    tg = [(target.kind, gt.node_index(target))]
    block = make_block(gt, target_dict(tg), model.cfg.layers)
    x0 = {k: gt.x[k][torch.as_tensor(block.nodes[0][k])].clone() for k in ("apex", "fqdn", "ip")}

    def fn(x):
        logits, _ = model.net.logits(gt, block, tg, x_override=x)
        if output == "logit":
            return logits[0, 1] - logits[0, 0]
        return torch.softmax(logits, dim=1)[0, 1]
    return fn, block, x0


def gradients_wrt_features(model: GnnModel, graph: HeteroGraph, features, target: NodeRef | str,
                           gt: GraphTensors | None = None, output: str = "score") -> dict[NodeRef, np.ndarray]:
    """Exact gradient of the target's malicious score w.r.t. each (standardized) input feature.

    Keys are the domain and IP nodes of the target's computation subgraph.
    """
    gt = gt or model.tensors(graph, features)
    target = target if isinstance(target, NodeRef) else domain_node(target)
    fn, block, x0 = score_function(model, gt, target, output)
    xs = {k: v.clone().requires_grad_(True) for k, v in x0.items()}
    model.net.eval()
    out = fn(xs)
    grads = torch.autograd.grad(out, [xs[k] for k in xs], allow_unused=True)
    result = {}
    for (kind, x), g in zip(xs.items(), grads):
        g = torch.zeros_like(x) if g is None else g
        for gi, row in zip(block.nodes[0][kind], g.numpy()):
            result[NodeRef(kind, gt.nodes[kind][gi])] = row.copy()
    return result


def local_scores(model: GnnModel, view, features, targets: list[NodeRef]) -> np.ndarray:
    """Scores computed on the union of the targets' computation subgraphs only.

    ``view`` is anything with a ``local(targets, hops)`` method, such as a
    ``GraphOverlay``. Equal to full-graph scores because a target only sees
    its ``layers``-hop neighbourhood.
    """
    sub = view.local(targets, model.cfg.layers)
    feats = {n: features[n] for n in sub.nodes if n in features}
    return scores_for(model, model.tensors(sub, feats), list(targets))
