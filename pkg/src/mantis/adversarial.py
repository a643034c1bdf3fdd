"""Structure-space evasion: MimicIP, a loss-guided multi-domain attack, adversarial training."""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .gnn.model import GnnConfig, GnnModel
from .gnn.train import TrainResult, local_scores, scores_for, train
from .graph import GraphOverlay, HeteroGraph, NodeRef
from .intel import Toplists
from .metrics import binary_metrics
from .names import apex_of
from .pdns import PdnsStore, TimeWindow

log = logging.getLogger(__name__)


class AttackError(ValueError):
    pass


@dataclass
class AttackBudget:
    n_ips: int = 3
    perturbation_rate: float = 0.15
    edge_budget: int = 10

    def __post_init__(self):
        if self.n_ips not in (1, 2, 3):
            raise ValueError("n_ips must be 1, 2 or 3")
        if not 0.0 <= self.perturbation_rate <= 1.0:
            raise ValueError("perturbation_rate must lie in [0, 1]")
        if self.edge_budget < 0:
            raise ValueError("edge_budget must be >= 0")


def benign_ip_pool(graph: HeteroGraph, toplists: Toplists, day: dt.date, store: PdnsStore | None = None,
                   limit: int | None = 16) -> list[NodeRef]:
    """Graph IPs that host top-list domains, most top-list tenants first.

    With a store, resolutions of every top-list name over the last week count;
    otherwise only top-list domains already in the graph.
    """
    top = toplists.top_30d(day)
    tenants: dict[NodeRef, int] = {}
    if store is not None:
        window = TimeWindow.for_day(day, 7)
        for name in sorted(top):
            for ip, _, _ in store.resolutions(name, window):
                node = NodeRef("ip", ip)
                if node in graph.nodes:
                    tenants[node] = tenants.get(node, 0) + 1
    else:
        for d in graph.domain_nodes():
            if d.key in top or apex_of(d.key) in top:
                for ip in graph.ips_of(d):
                    tenants[ip] = tenants.get(ip, 0) + 1
    ranked = sorted(tenants, key=lambda n: (-tenants[n], n.key))
    return ranked[:limit] if limit is not None else ranked


def _overlay(graph) -> GraphOverlay:
    if isinstance(graph, GraphOverlay):
        return GraphOverlay(graph.base, graph.added.copy(), graph.removed)
    return GraphOverlay(graph)


# ---------------------------------------------------------------------------
# MimicIP

@dataclass
class MimicResult:
    target: NodeRef
    added: list[NodeRef]
    scores: list[float]  # before, then after each accepted step
    overlay: GraphOverlay

    @property
    def delta(self) -> float:
        return self.scores[-1] - self.scores[0]

    @property
    def graph(self) -> HeteroGraph:
        return self.overlay.materialize()


def mimic_ip(graph, model: GnnModel, features, target: NodeRef, pool: list[NodeRef], n_ips: int) -> MimicResult:
    """Greedily add up to ``n_ips`` A records from ``target`` to benign-pool IPs.

    Each step takes the IP giving the lowest malicious score; a step that
    cannot lower the score ends the search. ``graph`` (a HeteroGraph or an
    overlay) is never modified.
    """
    if not pool:
        raise AttackError("benign IP pool is empty")
    ov = _overlay(graph)
    cur = float(local_scores(model, ov, features, [target])[0])
    scores, added = [cur], []
    for _ in range(n_ips):
        best = None
        for ip in sorted(pool):
            e = (target, "resolves_to", ip)
            if ov.has_edge(e):
                continue
            ov.add_edge(*e)
            s = float(local_scores(model, ov, features, [target])[0])
            ov.remove_edge(*e)
            if s < cur and (best is None or s < best[0]):
                best = (s, ip)
        if best is None:
            break
        ov.add_edge(target, "resolves_to", best[1])
        cur = best[0]
        scores.append(cur)
        added.append(best[1])
    return MimicResult(target, added, scores, ov)


# ---------------------------------------------------------------------------
# loss-guided multi-domain attack (MintA-inspired)

@dataclass
class MultiResult:
    overlay: GraphOverlay
    moves: list[tuple[str, NodeRef, NodeRef]]  # (add|remove, domain, ip)
    totals: list[float]  # summed malicious score before, then after each accepted move


def _loss(p: np.ndarray) -> np.ndarray:
    # cross-entropy toward the benign class
    return -np.log(np.clip(1.0 - p, 1e-300, None))


def multi_domain_attack(graph, surrogate: GnnModel, features, controlled: list[NodeRef], edge_budget: int,
                        candidates: list[NodeRef]) -> MultiResult:
    """Add or remove resolves_to edges of attacker-controlled domains under an edge budget.

    Moves are ranked by the drop in the moved domain's benign-target loss on
    the surrogate; a move is accepted only if the summed malicious score over
    all controlled domains does not increase. Domains keep at least one IP.
    """
    ov = _overlay(graph)
    controlled = sorted(controlled)
    total = float(local_scores(surrogate, ov, features, controlled).sum())
    totals, moves = [total], []
    for _ in range(edge_budget):
        ranked = []
        for d in controlled:
            base_loss = float(_loss(local_scores(surrogate, ov, features, [d]))[0])
            ips = ov.ips_of(d)
            options = [("add", ip) for ip in sorted(candidates) if ip not in ips]
            if len(ips) > 1:
                options += [("remove", ip) for ip in ips]
            for kind, ip in options:
                e = (d, "resolves_to", ip)
                ov.add_edge(*e) if kind == "add" else ov.remove_edge(*e)
                gain = base_loss - float(_loss(local_scores(surrogate, ov, features, [d]))[0])
                ov.remove_edge(*e) if kind == "add" else ov.add_edge(*e)
                if gain > 0:
                    ranked.append((-gain, kind, d.sort_key(), ip.key, d, ip))
        accepted = False
        for _, kind, _, _, d, ip in sorted(ranked, key=lambda t: t[:4]):
            e = (d, "resolves_to", ip)
            ov.add_edge(*e) if kind == "add" else ov.remove_edge(*e)
            new_total = float(local_scores(surrogate, ov, features, controlled).sum())
            if new_total <= total:
                total = new_total
                totals.append(total)
                moves.append((kind, d, ip))
                accepted = True
                break
            ov.remove_edge(*e) if kind == "add" else ov.add_edge(*e)
        if not accepted:
            break
    return MultiResult(ov, moves, totals)


# ---------------------------------------------------------------------------
# adversarial training

def random_mimic(graph: HeteroGraph, targets: list[NodeRef], pool: list[NodeRef], n_ips: int,
                 rng: np.random.Generator) -> GraphOverlay:
    """MimicIP-shaped perturbation with uniformly drawn pool IPs (no model queries)."""
    ov = GraphOverlay(graph)
    pool = sorted(pool)
    for t in targets:
        k = min(n_ips, len(pool))
        for j in rng.choice(len(pool), size=k, replace=False):
            ov.add_edge(t, "resolves_to", pool[int(j)])
    return ov


def adversarial_train(graph: HeteroGraph, features, labels, cfg: GnnConfig | None, budget: AttackBudget,
                      pool: list[NodeRef]) -> TrainResult:
    """Train with a share of malicious training nodes perturbed afresh every epoch.

    ``perturbation_rate == 0`` runs plain training.
    """
    if budget.perturbation_rate == 0:
        return train(graph, features, labels, cfg)
    if not pool:
        raise AttackError("benign IP pool is empty")

    def factory(tr_nodes, tr_y, gt):
        mal = [n for n, y in zip(tr_nodes, tr_y) if y == 1]
        k = int(round(budget.perturbation_rate * len(mal)))

        def hook(epoch, model, rng):
            picks = [mal[int(i)] for i in np.sort(rng.choice(len(mal), size=k, replace=False))]
            ov = random_mimic(graph, picks, pool, budget.n_ips, rng)
            return model.tensors(ov.materialize(), features)
        return hook

    return train(graph, features, labels, cfg, augment_factory=factory)


# ---------------------------------------------------------------------------
# robustness evaluation

@dataclass
class RobustnessRow:
    perturbation_rate: float
    model_variant: str
    accuracy: float
    recall: float
    fpr: float
    attacked: int = 0
    mean_delta: float = 0.0


def attack_set(nodes: list[NodeRef], y: np.ndarray, rate: float, seed: int) -> list[NodeRef]:
    """The first ``rate`` share of a seeded permutation of the malicious nodes (nested in ``rate``)."""
    mal = [n for n, t in zip(nodes, y) if t == 1]
    order = np.random.default_rng(seed).permutation(len(mal))
    return [mal[i] for i in order[:int(round(rate * len(mal)))]]


def evaluate_under_attack(model: GnnModel, graph: HeteroGraph, features, nodes: list[NodeRef], y: np.ndarray,
                          pool: list[NodeRef], rate: float, n_ips: int, seed: int = 0,
                          threshold: float = 0.5) -> tuple[dict, list[MimicResult]]:
    """Sequentially MimicIP-attack a share of the malicious nodes, then score every node."""
    ov = GraphOverlay(graph)
    results = []
    for t in attack_set(nodes, y, rate, seed):
        r = mimic_ip(ov, model, features, t, pool, n_ips)
        ov = r.overlay
        results.append(r)
    g = ov.materialize() if results else graph
    s = scores_for(model, model.tensors(g, features), nodes)
    return binary_metrics(y, s, threshold), results


def robustness_curve(variants: dict[str, GnnModel], graph: HeteroGraph, features, nodes: list[NodeRef],
                     y: np.ndarray, pool: list[NodeRef], rates=(0.0, 0.05, 0.10, 0.15), n_ips: int = 3,
                     seed: int = 0) -> list[RobustnessRow]:
    rows = []
    for rate in rates:
        for name, model in variants.items():
            m, res = evaluate_under_attack(model, graph, features, nodes, y, pool, rate, n_ips, seed)
            rows.append(RobustnessRow(rate, name, m["accuracy"], m["recall"], m["fpr"], len(res),
                                      float(np.mean([r.delta for r in res])) if res else 0.0))
    return rows


def write_robustness_csv(rows: list[RobustnessRow], path) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("perturbation_rate,model_variant,accuracy,recall,fpr\n")
        for r in rows:
            fh.write(f"{r.perturbation_rate:.4f},{r.model_variant},{r.accuracy:.6f},{r.recall:.6f},{r.fpr:.6f}\n")
    return path
