"""Heterogeneous message-passing network over the hosting graph.

Per layer and destination kind t::

    h'_v = relu(W_self^t h_v + sum_r W_r mean_{u in N_r(v)} h_u + b^t)

with one ``W_r`` per (src kind, relation, dst kind). The classifier head reads
the concatenation of every layer's embedding of the target.

Computation is organised in blocks: for a set of targets we walk the layers top
down, collecting (optionally sampled) incoming edges, so a target's score only
depends on its L-hop computation subgraph. Edges are kept in canonical
(dst, src) order and all arithmetic is float64, which makes scores computed on a
subgraph bit-identical to scores computed on the full graph.
"""
from __future__ import annotations

import hashlib
import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from ..features import DOMAIN_FEATURES, IP_FEATURES, FeatureStats, FeatureVector, standardize
from ..graph import DOMAIN_KINDS, KINDS, HeteroGraph, NodeRef

DTYPE = torch.float64

REL_KEYS = (
    ("fqdn", "subdomain_of", "apex"),
    ("apex", "rev_subdomain_of", "fqdn"),
    ("apex", "resolves_to", "ip"),
    ("fqdn", "resolves_to", "ip"),
    ("ip", "rev_resolves_to", "apex"),
    ("ip", "rev_resolves_to", "fqdn"),
    ("ip", "in_subnet", "subnet24"),
    ("subnet24", "rev_in_subnet", "ip"),
    ("subnet24", "in_asn", "asn"),
    ("asn", "rev_in_asn", "subnet24"),
)
_REL_INDEX = {k: i for i, k in enumerate(REL_KEYS)}


def rel_name(key) -> str:
    return "__".join(key)


@dataclass
class GnnConfig:
    layers: int = 3
    hidden_dim: int = 256
    learning_rate: float = 0.01
    fanouts: list = field(default_factory=lambda: [25, 10, 5])
    epochs: int = 100
    folds: int = 5
    seed: int = 0
    aggregate_all_layers: bool = True
    patience: int = 10
    batch_size: int = 512
    weight_decay: float = 0.0
    domain_features: tuple = DOMAIN_FEATURES

    def __post_init__(self):
        if self.layers < 1 or self.hidden_dim < 1:
            raise ValueError("layers and hidden_dim must be >= 1")
        if len(self.fanouts) != self.layers:
            raise ValueError("fanouts must have one entry per layer")
        self.fanouts = list(self.fanouts)
        self.domain_features = tuple(self.domain_features)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain_features"] = list(self.domain_features)
        return d


# ---------------------------------------------------------------------------
# indexed graph

class GraphTensors:
    """Dense per-kind indexing of a graph plus standardized input tensors."""

    def __init__(self, graph: HeteroGraph, features: dict[NodeRef, FeatureVector],
                 domain_stats: FeatureStats, ip_stats: FeatureStats, vocab: dict[str, dict[str, int]],
                 domain_columns: tuple[str, ...] = DOMAIN_FEATURES):
        self.graph = graph
        self.nodes = {k: sorted(n.key for n in graph.nodes if n.kind == k) for k in KINDS}
        self.index = {k: {key: i for i, key in enumerate(v)} for k, v in self.nodes.items()}
        cols = [DOMAIN_FEATURES.index(c) for c in domain_columns]
        self.x: dict[str, torch.Tensor] = {}
        for kind in DOMAIN_KINDS:
            keys = self.nodes[kind]
            raw = np.stack([features[NodeRef(kind, k)].values for k in keys]) if keys else np.zeros((0, len(DOMAIN_FEATURES)))
            z = standardize(raw, domain_stats) if keys else raw
            self.x[kind] = torch.as_tensor(np.ascontiguousarray(z[:, cols]), dtype=DTYPE)
        keys = self.nodes["ip"]
        raw = np.stack([features[NodeRef("ip", k)].values for k in keys]) if keys else np.zeros((0, len(IP_FEATURES)))
        self.x["ip"] = torch.as_tensor(standardize(raw, ip_stats) if keys else raw, dtype=DTYPE)
        sub_vocab, asn_vocab = vocab["subnet"], vocab["asn"]
        cats = [features[NodeRef("ip", k)].categorical or ("", "") for k in keys]
        self.ip_cat = torch.as_tensor(
            np.array([[sub_vocab.get(s, 0), asn_vocab.get(a, 0)] for s, a in cats], dtype=np.int64).reshape(-1, 2))
        self.subnet_cat = torch.as_tensor([sub_vocab.get(k, 0) for k in self.nodes["subnet24"]], dtype=torch.int64)
        self.asn_cat = torch.as_tensor([asn_vocab.get(k, 0) for k in self.nodes["asn"]], dtype=torch.int64)
        self._build_edges()

    def _build_edges(self):
        fwd = {("fqdn", "subdomain_of", "apex"), ("apex", "resolves_to", "ip"), ("fqdn", "resolves_to", "ip"),
               ("ip", "in_subnet", "subnet24"), ("subnet24", "in_asn", "asn")}
        pairs = {k: [] for k in REL_KEYS}
        for src, rel, dst in self.graph.edges:
            key = (src.kind, rel, dst.kind)
            if key not in fwd:
                continue
            s, d = self.index[src.kind][src.key], self.index[dst.kind][dst.key]
            pairs[key].append((d, s))
            pairs[(dst.kind, "rev_" + rel, src.kind)].append((s, d))
        # per relation: CSR over destination, sources in canonical order
        self.csr = {}
        for key, lst in pairs.items():
            n_dst = len(self.nodes[key[2]])
            lst.sort()
            dst = np.array([p[0] for p in lst], dtype=np.int64)
            src = np.array([p[1] for p in lst], dtype=np.int64)
            indptr = np.zeros(n_dst + 1, dtype=np.int64)
            np.add.at(indptr, dst + 1, 1)
            self.csr[key] = (np.cumsum(indptr), src)

    def node_index(self, node: NodeRef) -> int:
        return self.index[node.kind][node.key]


def build_vocab(graph: HeteroGraph) -> dict[str, dict[str, int]]:
    subnets = sorted(n.key for n in graph.nodes if n.kind == "subnet24")
    asns = sorted(n.key for n in graph.nodes if n.kind == "asn")
    return {"subnet": {k: i + 1 for i, k in enumerate(subnets)}, "asn": {k: i + 1 for i, k in enumerate(asns)}}


# ---------------------------------------------------------------------------
# blocks

@dataclass
class Block:
    """Nodes needed at every layer and the edges feeding each layer."""
    nodes: list  # nodes[l][kind] -> sorted np.int64 global indices, l = 0..L
    edges: list  # edges[l-1][rel] -> (dst_pos, src_pos) positions into nodes[l] / nodes[l-1]


def make_block(gt: GraphTensors, targets: dict[str, np.ndarray], layers: int,
               fanouts=None, rng: np.random.Generator | None = None) -> Block:
    top = {k: np.unique(np.asarray(targets.get(k, []), dtype=np.int64)) for k in KINDS}
    nodes = [None] * (layers + 1)
    edges = [None] * layers
    nodes[layers] = top
    for l in range(layers, 0, -1):
        cur = nodes[l]
        fan = None if fanouts is None else fanouts[layers - l]  # first entry feeds the targets
        below = {k: [cur[k]] for k in KINDS}
        chosen = {}
        for key in REL_KEYS:
            src_kind, _, dst_kind = key
            dsts = cur[dst_kind]
            if len(dsts) == 0:
                continue
            indptr, src = gt.csr[key]
            starts = indptr[dsts]
            deg = indptr[dsts + 1] - starts
            if deg.sum() == 0:
                continue
            owner = np.repeat(np.arange(len(dsts)), deg)
            group_start = np.repeat(np.cumsum(deg) - deg, deg)
            eidx = np.repeat(starts, deg) + (np.arange(int(deg.sum())) - group_start)
            if fan is not None and rng is not None and (deg > fan).any():
                keys = rng.random(len(eidx))
                order = np.lexsort((keys, owner))
                rank = np.empty(len(eidx), dtype=np.int64)
                rank[order] = np.arange(len(eidx)) - group_start[order]
                keep = rank < fan
                owner, eidx = owner[keep], eidx[keep]  # original canonical order preserved
            s_glob = src[eidx]
            chosen[key] = (owner, s_glob)
            below[src_kind].append(s_glob)
        nodes[l - 1] = {k: np.unique(np.concatenate(v)) for k, v in below.items()}
        layer_edges = {}
        for key, (owner, s_glob) in chosen.items():
            src_pos = np.searchsorted(nodes[l - 1][key[0]], s_glob)
            layer_edges[key] = (torch.as_tensor(owner), torch.as_tensor(src_pos))
        edges[l - 1] = layer_edges
    return Block(nodes, edges)


# ---------------------------------------------------------------------------
# model

class HeteroSage(nn.Module):
    def __init__(self, cfg: GnnConfig, vocab: dict[str, dict[str, int]]):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab
        h = cfg.hidden_dim
        gen = torch.Generator().manual_seed(cfg.seed)
        n_dom = len(cfg.domain_features)

        def lin(i, o, bias=True):
            m = nn.Linear(i, o, bias=bias, dtype=DTYPE)
            bound = (6.0 / (i + o)) ** 0.5
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if bias:
                    m.bias.zero_()
            return m

        self.inp = nn.ModuleDict({
            "apex": lin(n_dom, h), "fqdn": lin(n_dom, h), "ip": lin(len(IP_FEATURES), h)})
        self.subnet_emb = nn.Parameter(torch.randn(len(vocab["subnet"]) + 1, h, generator=gen, dtype=DTYPE) * 0.1)
        self.asn_emb = nn.Parameter(torch.randn(len(vocab["asn"]) + 1, h, generator=gen, dtype=DTYPE) * 0.1)
        self.const = nn.ParameterDict({k: nn.Parameter(torch.zeros(h, dtype=DTYPE)) for k in ("subnet24", "asn")})
        self.self_w = nn.ModuleList([nn.ModuleDict({k: lin(h, h) for k in KINDS}) for _ in range(cfg.layers)])
        self.rel_w = nn.ModuleList([nn.ModuleDict({rel_name(k): lin(h, h, bias=False) for k in REL_KEYS})
                                    for _ in range(cfg.layers)])
        head_in = h * cfg.layers if cfg.aggregate_all_layers else h
        self.head = lin(head_in, 2)

    # -- pieces -----------------------------------------------------------
    def _lin(self, mod: nn.Linear, x: torch.Tensor) -> torch.Tensor:
        # At inference every row goes through its own 1-row product, so a node's
        # output bits do not depend on how many other rows share the batch.
        if self.training or len(x) == 0:
            return mod(x)
        w = mod.weight.T
        y = torch.bmm(x[:, None, :], w.expand(len(x), *w.shape))[:, 0]
        return y if mod.bias is None else y + mod.bias

    def input_embed(self, gt: GraphTensors, idx: dict[str, np.ndarray], x_override=None) -> dict:
        out = {}
        for kind in KINDS:
            ii = torch.as_tensor(idx[kind])
            if kind in ("apex", "fqdn", "ip"):
                x = (x_override or {}).get(kind)
                x = gt.x[kind][ii] if x is None else x
                e = self._lin(self.inp[kind], x)
                if kind == "ip":
                    cat = gt.ip_cat[ii]
                    e = e + self.subnet_emb[cat[:, 0]] + self.asn_emb[cat[:, 1]]
            elif kind == "subnet24":
                e = self.subnet_emb[gt.subnet_cat[ii]] + self.const[kind]
            else:
                e = self.asn_emb[gt.asn_cat[ii]] + self.const[kind]
            out[kind] = e
        return out

    def propagate(self, gt: GraphTensors, block: Block, x_override=None) -> list[dict]:
        """Return per-layer embeddings [h_1 .. h_L], each kind -> rows aligned with block.nodes[l]."""
        h = self.input_embed(gt, block.nodes[0], x_override)
        hs = []
        H = self.cfg.hidden_dim
        for l in range(1, self.cfg.layers + 1):
            prev_nodes, cur_nodes = block.nodes[l - 1], block.nodes[l]
            new = {}
            for kind in KINDS:
                cur = cur_nodes[kind]
                if len(cur) == 0:
                    new[kind] = torch.zeros((0, H), dtype=DTYPE)
                    continue
                pos = torch.as_tensor(np.searchsorted(prev_nodes[kind], cur))
                z = self._lin(self.self_w[l - 1][kind], h[kind][pos])
                for key in REL_KEYS:
                    if key[2] != kind:
                        continue
                    agg = torch.zeros((len(cur), H), dtype=DTYPE)
                    e = block.edges[l - 1].get(key)
                    if e is not None and len(e[0]):
                        dst_pos, src_pos = e
                        agg = agg.index_add(0, dst_pos, h[key[0]][src_pos])
                        deg = torch.bincount(dst_pos, minlength=len(cur)).clamp(min=1).to(DTYPE)
                        agg = agg / deg[:, None]
                    z = z + self._lin(self.rel_w[l - 1][rel_name(key)], agg)
                new[kind] = torch.relu(z)
            h = new
            hs.append(h)
        return hs

    def target_rows(self, block: Block, hs: list[dict], targets: list[tuple[str, int]]) -> tuple[torch.Tensor, torch.Tensor]:
        """(head input, last-layer embedding) rows for ``targets`` given as (kind, global index)."""
        layers = []
        kinds = np.array([k for k, _ in targets], dtype=object)
        gis = np.array([g for _, g in targets], dtype=np.int64)
        for l, h in enumerate(hs, 1):
            if not targets:
                layers.append(torch.zeros((0, self.cfg.hidden_dim), dtype=DTYPE))
                continue
            # one gather per kind, then undo the grouping (cheap backward)
            parts, where = [], []
            for kind in KINDS:
                at = np.flatnonzero(kinds == kind)
                if len(at):
                    parts.append(h[kind][torch.as_tensor(np.searchsorted(block.nodes[l][kind], gis[at]))])
                    where.append(at)
            inv = np.empty(len(targets), dtype=np.int64)
            inv[np.concatenate(where)] = np.arange(len(targets))
            layers.append(torch.cat(parts)[torch.as_tensor(inv)])
        head_in = torch.cat(layers, dim=1) if self.cfg.aggregate_all_layers else layers[-1]
        return head_in, layers[-1]

    def logits(self, gt, block, targets, x_override=None):
        hs = self.propagate(gt, block, x_override)
        head_in, last = self.target_rows(block, hs, targets)
        return self._lin(self.head, head_in), last


def target_dict(targets: list[tuple[str, int]]) -> dict[str, np.ndarray]:
    out = {k: [] for k in KINDS}
    for kind, gi in targets:
        out[kind].append(gi)
    return {k: np.array(v, dtype=np.int64) for k, v in out.items()}


# ---------------------------------------------------------------------------
# trained model container

@dataclass
class GnnModel:
    cfg: GnnConfig
    net: HeteroSage
    domain_stats: FeatureStats
    ip_stats: FeatureStats
    vocab: dict
    meta: dict = field(default_factory=dict)

    def tensors(self, graph: HeteroGraph, features: dict[NodeRef, FeatureVector]) -> GraphTensors:
        return GraphTensors(graph, features, self.domain_stats, self.ip_stats, self.vocab, self.cfg.domain_features)

    @property
    def version(self) -> str:
        return self.content_hash()[:12]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(self.cfg.to_dict(), sort_keys=True).encode())
        for name, t in sorted(self.net.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
        h.update(json.dumps(self.domain_stats.to_dict(), sort_keys=True).encode())
        h.update(json.dumps(self.ip_stats.to_dict(), sort_keys=True).encode())
        h.update(json.dumps(self.vocab, sort_keys=True).encode())
        return h.hexdigest()

    def save(self, path) -> None:
        arrays = {f"w/{k}": v.detach().cpu().numpy() for k, v in self.net.state_dict().items()}
        header = {"config": self.cfg.to_dict(), "domain_stats": self.domain_stats.to_dict(),
                  "ip_stats": self.ip_stats.to_dict(), "vocab": self.vocab, "meta": self.meta,
                  "content_hash": self.content_hash()}
        buf = io.BytesIO()
        np.savez(buf, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8), **arrays)
        with open(path, "wb") as fh:
            fh.write(buf.getvalue())

    @classmethod
    def load(cls, path) -> "GnnModel":
        with np.load(path) as z:
            header = json.loads(bytes(z["header"]).decode())
            weights = {k[2:]: torch.as_tensor(z[k]) for k in z.files if k.startswith("w/")}
        cfg = GnnConfig(**header["config"])
        net = HeteroSage(cfg, header["vocab"])
        net.load_state_dict(weights)
        model = cls(cfg, net, FeatureStats.from_dict(header["domain_stats"]),
                    FeatureStats.from_dict(header["ip_stats"]), header["vocab"], header.get("meta", {}))
        if model.content_hash() != header["content_hash"]:
            raise ValueError(f"{path}: content hash mismatch")
        return model
