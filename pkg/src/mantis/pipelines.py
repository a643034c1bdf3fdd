"""Daily blocklist generation and the inductive on-demand ensemble."""
from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import pickle
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from sklearn.ensemble import RandomForestClassifier

from .features import FeatureVector, FeatureWindows, day_end_for, featurize, impute, read_feature_csv, write_feature_csv
from .gnn.model import GnnConfig, GnnModel, GraphTensors
from .gnn.train import TrainResult, forward, scores_for, train
from .graph import (AsnTable, ExpansionConfig, ExpansionReport, GraphOverlay, HeteroGraph, NodeRef, domain_node, expand,
                    node_sort, union_window, window_days)
from .intel import (Feed, LabelSet, Toplists, build_benign_gt, build_malicious_gt,
                    extract_seeds)
from .metrics import binary_metrics
from .names import canonical, is_valid_name, read_list
from .pdns import DAY, PdnsStore, day_of, day_start, parse_day

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    pass


class SeedFloorError(PipelineError):
    pass


class CalibrationError(PipelineError):
    pass


class LeakageError(PipelineError):
    pass


# ---------------------------------------------------------------------------
# inputs and configuration

def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def tree_sha256(root: Path) -> str:
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(file_sha256(p).encode())
    return h.hexdigest()


@dataclass
class Inputs:
    """Everything a pipeline run reads: PDNS, the intel feed, top lists and auxiliary lists."""
    root: Path
    store: PdnsStore
    feed: Feed
    toplists: Toplists
    asn: AsnTable
    sinkholes: tuple[str, ...]
    public: tuple[str, ...]

    FILES = ("pdns.jsonl", "feed.csv", "asn.csv", "sinkholes.txt", "webhosting.txt")

    @classmethod
    def load(cls, root, store: PdnsStore | None = None) -> "Inputs":
        root = Path(root)
        for name in cls.FILES:
            if not (root / name).exists():
                raise FileNotFoundError(f"missing input {root / name}")
        return cls(root, store or PdnsStore.load(root / "pdns.jsonl"), Feed.load(root / "feed.csv"),
                   Toplists.load(root / "toplists"), AsnTable.load(root / "asn.csv"),
                   tuple(read_list(root / "sinkholes.txt")), tuple(read_list(root / "webhosting.txt")))

    def hashes(self) -> dict[str, str]:
        out = {name: file_sha256(self.root / name) for name in self.FILES}
        out["toplists"] = tree_sha256(self.root / "toplists")
        return out

    def truth(self) -> dict[str, str]:
        """Generator truth (labels.csv), only present for synthetic worlds."""
        path = self.root / "labels.csv"
        if not path.exists():
            return {}
        with open(path, encoding="utf-8") as fh:
            next(fh)
            return dict(line.rstrip("\n").split(",", 1) for line in fh if line.strip())

    def last_day(self) -> dt.date:
        end = max(r.time_last for r in self.store.records())
        return day_of(end)


@dataclass
class PipelineConfig:
    window_days: int = 7
    fpr_target: float = 0.005
    seed_floor: int = 50
    impute_k: int = 5
    allowlist: str | None = None
    test_frac: float = 0.0  # share of benign GT withheld from training for evaluation
    split_seed: int = 0
    expansion: ExpansionConfig = field(default_factory=ExpansionConfig)
    gnn: GnnConfig = field(default_factory=GnnConfig)
    feature_windows: FeatureWindows = field(default_factory=FeatureWindows)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gnn"] = self.gnn.to_dict()
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# windowed graph + labels

@dataclass
class WindowData:
    day: dt.date
    graph: HeteroGraph
    raw: dict[NodeRef, FeatureVector]
    features: dict[NodeRef, FeatureVector]
    labels: LabelSet
    seeds_by_day: dict[dt.date, list[str]]
    report: ExpansionReport
    seed_reports: dict[dt.date, dict]

    @property
    def seeds(self) -> list[str]:
        return sorted({s for v in self.seeds_by_day.values() for s in v})


def window_seeds(inputs: Inputs, days: list[dt.date]) -> tuple[dict, dict]:
    seeds, reports = {}, {}
    for d in days:
        rep: dict = {}
        seeds[d] = extract_seeds(inputs.feed, d, inputs.toplists, inputs.public, inputs.sinkholes,
                                 store=inputs.store, report=rep)
        reports[d] = rep
    return seeds, reports


def build_window(inputs: Inputs, day, cfg: PipelineConfig, seed_floor: int | None = None) -> WindowData:
    """Seeds -> daily expansions -> window union -> features + imputation -> ground truth."""
    day = parse_day(day)
    days = window_days(day, cfg.window_days)
    seeds_by_day, seed_reports = window_seeds(inputs, days)
    n_seeds = sum(len(v) for v in seeds_by_day.values())
    floor = cfg.seed_floor if seed_floor is None else seed_floor
    if n_seeds < floor:
        raise SeedFloorError(f"{n_seeds} seeds over {days[0]}..{days[-1]} is below the floor of {floor}; "
                             f"filter counts: {json.dumps({str(k): v for k, v in seed_reports.items()})}")
    report = ExpansionReport()
    graphs = [expand(s, d, cfg.expansion, inputs.store, inputs.sinkholes, inputs.public, inputs.asn, report)
              for d, s in sorted(seeds_by_day.items()) if s]
    graph = union_window(graphs)
    end = day_end_for(day)
    raw = featurize(graph, inputs.store, end, w=cfg.feature_windows)
    features = impute(graph, raw, cfg.impute_k)
    seeds = sorted({s for v in seeds_by_day.values() for s in v})
    mal = build_malicious_gt(seeds, graph, inputs.feed, end)
    ben = build_benign_gt(graph, inputs.feed, inputs.toplists, day=day, exclude=mal.malicious)
    labels = mal.merge(ben)
    if ben.warning:
        labels.warning = ben.warning
    return WindowData(day, graph, raw, features, labels, seeds_by_day, report, seed_reports)


def split_holdout(labels: LabelSet, frac: float, seed: int) -> tuple[LabelSet, list[str]]:
    """Withhold ``frac`` of the benign labels (sorted, seeded shuffle) for testing."""
    if frac <= 0:
        return labels, []
    ben = sorted(labels.benign)
    rng = np.random.default_rng(seed)
    held = sorted(ben[i] for i in rng.permutation(len(ben))[:int(round(frac * len(ben)))])
    keep = LabelSet(notes=list(labels.notes), warning=labels.warning)
    hs = set(held)
    for d in sorted(labels.malicious):
        keep.add(d, "malicious", labels.provenance.get(d, "seed"))
    for d in ben:
        if d not in hs:
            keep.add(d, "benign", labels.provenance.get(d, "heuristic"))
    return keep, held


# ---------------------------------------------------------------------------
# calibration

@dataclass
class Calibration:
    target_fpr: float
    threshold: float
    fpr: float
    recall: float
    n_neg: int
    n_pos: int


def calibrate_threshold(val_scores, val_labels, target_fpr: float) -> Calibration:
    """Smallest threshold (score >= t flags) whose validation FPR is at most ``target_fpr``."""
    s = np.asarray(val_scores, dtype=np.float64)
    y = np.asarray(val_labels, dtype=np.int64)
    if not 0.0 <= target_fpr < 1.0:
        raise ValueError("target_fpr must lie in [0, 1)")
    neg, pos = np.sort(s[y == 0])[::-1], s[y == 1]
    if len(neg) == 0 or len(pos) == 0:
        raise CalibrationError("calibration needs both classes in validation")
    if target_fpr > 0 and len(neg) < 1.0 / target_fpr:
        raise CalibrationError(f"{len(neg)} validation negatives cannot resolve FPR {target_fpr}; "
                               f"need at least {int(np.ceil(1.0 / target_fpr))}")
    k = int(np.floor(target_fpr * len(neg) + 1e-9))  # allowed false positives
    if k >= len(neg):
        t = float(s.min())
    else:
        bound = neg[k]  # the (k+1)-th largest negative must fall below t
        above = s[s > bound]
        t = float(above.min()) if len(above) else float(np.nextafter(bound, np.inf))
    fpr = float(np.mean(neg >= t))
    recall = float(np.mean(pos >= t))
    return Calibration(target_fpr, t, fpr, recall, int(len(neg)), int(len(pos)))


# ---------------------------------------------------------------------------
# daily blocklist

@dataclass
class BlocklistEntry:
    domain: str
    score: float
    first_detected: dt.date
    model_id: str
    seed_flag: bool = False


@dataclass
class BlocklistRun:
    day: dt.date
    entries: list[BlocklistEntry]
    calibration: Calibration
    result: TrainResult
    window: WindowData
    train_labels: LabelSet
    held_out: list[str]
    scores: dict[str, float]
    cfg: PipelineConfig
    input_hashes: dict[str, str] = field(default_factory=dict)

    @property
    def model_id(self) -> str:
        return self.result.model.version

    def manifest(self) -> dict:
        new = [e for e in self.entries if not e.seed_flag]
        return {
            "day": self.day.isoformat(),
            "config": self.cfg.to_dict(),
            "config_sha256": self.cfg.digest(),
            "inputs_sha256": self.input_hashes,
            "model_id": self.model_id,
            "model_sha256": self.result.model.content_hash(),
            "calibration": asdict(self.calibration),
            "fold_metrics": [asdict(f) for f in self.result.folds],
            "best_fold": self.result.best_fold,
            "counts": {
                "seeds": len(self.window.seeds),
                "graph_nodes": len(self.window.graph.nodes),
                "graph_edges": len(self.window.graph.edges),
                "labeled_malicious": len(self.train_labels.malicious),
                "labeled_benign": len(self.train_labels.benign),
                "held_out_benign": len(self.held_out),
                "entries": len(self.entries),
                "newly_predicted": len(new),
            },
            "new_per_seed": len(new) / max(1, len(self.window.seeds)),
            "label_warning": self.window.labels.warning,
        }

    def write(self, out_dir) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / f"blocklist-{self.day.isoformat()}.csv"
        write_blocklist(self.entries, csv_path)
        man_path = out_dir / f"manifest-{self.day.isoformat()}.json"
        with open(man_path, "w", encoding="utf-8") as fh:
            json.dump(self.manifest(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return csv_path, man_path


def write_blocklist(entries: list[BlocklistEntry], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("domain,score,first_detected,model_id\n")
        for e in entries:
            fh.write(f"{e.domain},{e.score:.6f},{e.first_detected.isoformat()},{e.model_id}\n")


def read_blocklist(path) -> list[BlocklistEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "domain,score,first_detected,model_id":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            d, s, f, m = line.rstrip("\n").split(",")
            out.append(BlocklistEntry(d, float(s), parse_day(f), m))
    return out


def detection_history(out_dir, before: dt.date) -> dict[str, dt.date]:
    """First-detected dates from earlier blocklists written to ``out_dir``."""
    hist: dict[str, dt.date] = {}
    for p in sorted(Path(out_dir).glob("blocklist-*.csv")):
        day = parse_day(p.stem.split("-", 1)[1])
        if day >= before:
            continue
        for e in read_blocklist(p):
            hist[e.domain] = min(hist.get(e.domain, e.first_detected), e.first_detected)
    return hist


def daily_blocklist(day, inputs: Inputs, cfg: PipelineConfig | None = None,
                    history: dict[str, dt.date] | None = None) -> BlocklistRun:
    cfg = cfg or PipelineConfig()
    day = parse_day(day)
    window = build_window(inputs, day, cfg)
    labels, held = split_holdout(window.labels, cfg.test_frac, cfg.split_seed)
    result = train(window.graph, window.features, labels, cfg.gnn)
    cal = calibrate_threshold(result.oof_scores, result.oof_labels, cfg.fpr_target)
    model = result.model
    gt = model.tensors(window.graph, window.features)
    nodes = window.graph.domain_nodes()
    scores = dict(zip((n.key for n in nodes), scores_for(model, gt, nodes).tolist()))
    allow = set(read_list(cfg.allowlist)) if cfg.allowlist else set()
    held_set = set(held)
    history = history or {}
    version = model.version
    entries = []
    for name in sorted(scores):
        s = scores[name]
        if s < cal.threshold or name in labels.benign or name in held_set or name in allow:
            continue
        entries.append(BlocklistEntry(name, s, min(history.get(name, day), day), version,
                                      seed_flag=name in labels.malicious))
    log.info("blocklist %s: %d entries (%d new), threshold %.6f", day, len(entries),
             sum(not e.seed_flag for e in entries), cal.threshold)
    return BlocklistRun(day, entries, cal, result, window, labels, held, scores, cfg, inputs.hashes())


def next_day_evaluation(run: BlocklistRun, inputs: Inputs, truth: dict[str, str] | None = None,
                        threshold: int = 5) -> dict:
    """Score the run against labels that only become known on the following day.

    Positives: graph domains outside the training labels first flagged by the
    feed on day+1. Negatives: the withheld benign labels. When generator truth
    is available it overrides both label sources.
    """
    truth = truth if truth is not None else inputs.truth()
    nxt = run.day + dt.timedelta(days=1)
    lo, hi = day_start(nxt), day_start(nxt) + DAY
    known = set(run.train_labels.labeled())
    pos = []
    for name in sorted(run.scores):
        if name in known or name in run.held_out:
            continue
        f = inputs.feed.first_flagged(name, threshold)
        if f is not None and lo <= f < hi and truth.get(name, "malicious") == "malicious":
            pos.append(name)
    neg = [d for d in run.held_out if truth.get(d, "benign") == "benign"]
    names = pos + neg
    y = np.array([1] * len(pos) + [0] * len(neg))
    s = np.array([run.scores[d] for d in names])
    m = binary_metrics(y, s, run.calibration.threshold) if len(pos) and len(neg) else {}
    return {"n_pos": len(pos), "n_neg": len(neg), **m}


# ---------------------------------------------------------------------------
# on-demand ensemble

@dataclass
class Encoder:
    model: GnnModel
    graph: HeteroGraph
    features: dict[NodeRef, FeatureVector]
    labels: LabelSet
    day: dt.date
    _gt: GraphTensors | None = None

    @property
    def gt(self) -> GraphTensors:
        if self._gt is None:
            self._gt = self.model.tensors(self.graph, self.features)
        return self._gt

    def labeled_domains(self) -> set[str]:
        return set(self.labels.malicious) | set(self.labels.benign)


def encoder_from_run(window: WindowData, result: TrainResult, labels: LabelSet) -> Encoder:
    return Encoder(result.model, window.graph, window.features, labels, window.day)


def computation_graph(domain: str, day: dt.date, inputs: Inputs, cfg: PipelineConfig) -> HeteroGraph | None:
    """Level-2 expansion rooted at ``domain``; None when the store has no resolution for it."""
    exp = ExpansionConfig(level=2, expansion_rate=cfg.expansion.expansion_rate,
                          window_days=cfg.expansion.window_days, subnet_prefix=cfg.expansion.subnet_prefix,
                          lookback_days=cfg.expansion.lookback_days)
    rep = ExpansionReport()
    g = expand([domain], day, exp, inputs.store, inputs.sinkholes, inputs.public, inputs.asn, rep)
    return None if rep.skipped_seeds else g


def encoder_embedding(enc: Encoder, domain: str, comp: HeteroGraph | None, day: dt.date, inputs: Inputs,
                      cfg: PipelineConfig) -> np.ndarray | None:
    """Last-layer embedding of ``domain`` under one encoder.

    In-graph domains use the encoder's own graph unchanged. Others get their
    computation graph appended (merged on node keys) with new nodes featurized,
    standardized by the encoder's stats and imputed.
    """
    node = domain_node(domain)
    if node in enc.graph.nodes:
        return forward(enc.model, enc.graph, enc.features, [node], gt=enc.gt)[0].embedding
    if comp is None:
        return None
    view = GraphOverlay(enc.graph, comp)
    local = view.local(node, enc.model.cfg.layers)
    new = [n for n in node_sort(local.nodes) if n not in enc.features and n.kind in ("apex", "fqdn", "ip")]
    raw = featurize(local, inputs.store, day_end_for(day), w=cfg.feature_windows, nodes=new)
    feats = {n: enc.features[n] for n in local.nodes if n in enc.features}
    feats.update(raw)
    # imputation candidates live in the wider union, not only the local subgraph
    for n in new:
        if not raw[n].present["hosting"]:
            for m in _two_hop(view, n):
                if m not in feats and m in enc.features:
                    feats[m] = enc.features[m]
    filled = impute(view, feats, cfg.impute_k, only=new)
    local_feats = {n: filled[n] for n in local.nodes if n in filled}
    gt = enc.model.tensors(local, local_feats)
    return forward(enc.model, local, local_feats, [node], gt=gt)[0].embedding


def _two_hop(view: GraphOverlay, node: NodeRef) -> set:
    if node.kind == "ip":
        return {ip for d in view.domains_on(node) for ip in view.ips_of(d)}
    return {d for ip in view.ips_of(node) for d in view.domains_on(ip)}


@dataclass
class OnDemandResult:
    domain: str
    verdict: str  # malicious | benign | no-visibility
    score: float | None
    model_id: str
    embedding: np.ndarray | None = None


@dataclass
class EnsembleModel:
    encoders: list[Encoder]
    meta: RandomForestClassifier
    calibration: Calibration | None
    day: dt.date
    info: dict = field(default_factory=dict)

    WIDTH_PER_ENCODER = 256

    def __post_init__(self):
        if len(self.encoders) != 4:
            raise ValueError(f"ensemble needs exactly 4 encoders, got {len(self.encoders)}")
        width = sum(e.model.cfg.hidden_dim for e in self.encoders)
        if getattr(self.meta, "n_features_in_", width) != width:
            raise ValueError(f"meta-learner expects {self.meta.n_features_in_} inputs, encoders give {width}")

    @property
    def threshold(self) -> float:
        return self.calibration.threshold if self.calibration else 0.5

    @property
    def encoder_ids(self) -> list[str]:
        return [e.model.version for e in self.encoders]

    @property
    def model_id(self) -> str:
        h = hashlib.sha256("|".join(self.encoder_ids).encode())
        h.update(self.info.get("meta_sha256", "").encode())
        return h.hexdigest()[:12]

    def save(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        enc_info = []
        for i, enc in enumerate(self.encoders):
            d = out_dir / f"encoder{i}"
            d.mkdir(exist_ok=True)
            enc.model.save(d / "model.npz")
            enc.graph.save(d / "graph.csv")
            write_feature_csv(enc.features, d)
            write_labels(enc.labels, d / "labels.csv")
            enc_info.append({"dir": d.name, "day": enc.day.isoformat(), "version": enc.model.version})
        meta_path = out_dir / "meta.pkl"
        with open(meta_path, "wb") as fh:
            pickle.dump(self.meta, fh)
        self.info["meta_sha256"] = file_sha256(meta_path)
        header = {"encoders": enc_info, "day": self.day.isoformat(), "model_id": self.model_id,
                  "calibration": asdict(self.calibration) if self.calibration else None, "info": self.info}
        with open(out_dir / "ensemble.json", "w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return out_dir

    @classmethod
    def load(cls, path) -> "EnsembleModel":
        path = Path(path)
        with open(path / "ensemble.json", encoding="utf-8") as fh:
            header = json.load(fh)
        meta_path = path / "meta.pkl"
        if file_sha256(meta_path) != header["info"].get("meta_sha256"):
            raise ValueError(f"{meta_path}: hash mismatch")
        with open(meta_path, "rb") as fh:
            meta = pickle.load(fh)
        encoders = []
        for e in header["encoders"]:
            d = path / e["dir"]
            feats = read_feature_csv(d / "features_domain.csv")
            feats.update(read_feature_csv(d / "features_ip.csv"))
            model = GnnModel.load(d / "model.npz")
            encoders.append(Encoder(model, HeteroGraph.load(d / "graph.csv"), feats, read_labels(d / "labels.csv"),
                                    parse_day(e["day"])))
        cal = Calibration(**header["calibration"]) if header.get("calibration") else None
        return cls(encoders, meta, cal, parse_day(header["day"]), header["info"])


def write_labels(labels: LabelSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("domain,label,provenance\n")
        for d, y in labels.labeled().items():
            fh.write(f"{d},{'malicious' if y else 'benign'},{labels.provenance.get(d, '')}\n")


def read_labels(path) -> LabelSet:
    out = LabelSet()
    with open(path, encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            d, lab, prov = line.rstrip("\n").split(",")
            out.add(d, lab, prov)
    return out


def weekly_encoders(inputs: Inputs, last_day, cfg: PipelineConfig, n: int = 4,
                    gnn: GnnConfig | None = None) -> list[Encoder]:
    """Encoders trained on ``n`` non-overlapping windows, the newest ending at ``last_day``."""
    last_day = parse_day(last_day)
    out = []
    for k in range(n - 1, -1, -1):
        day = last_day - dt.timedelta(days=cfg.window_days * k)
        window = build_window(inputs, day, cfg)
        result = train(window.graph, window.features, window.labels, gnn or cfg.gnn)
        out.append(encoder_from_run(window, result, window.labels))
        log.info("encoder for %s: %s", day, result.model.version)
    return out


def meta_ground_truth(inputs: Inputs, first_day, last_day, cfg: PipelineConfig,
                      exclude: set[str] = frozenset()) -> LabelSet:
    """Labels from the daily expansions of a later period, minus ``exclude``."""
    out = LabelSet()
    day = parse_day(first_day)
    last_day = parse_day(last_day)
    while day <= last_day:
        seeds, _ = window_seeds(inputs, [day])
        if seeds[day]:
            g = expand(seeds[day], day, cfg.expansion, inputs.store, inputs.sinkholes, inputs.public, inputs.asn)
            end = day_end_for(day)
            mal = build_malicious_gt(seeds[day], g, inputs.feed, end)
            ben = build_benign_gt(g, inputs.feed, inputs.toplists, day=day, exclude=mal.malicious)
            for d in sorted(mal.malicious):
                if d not in exclude:
                    out.add(d, "malicious", mal.provenance[d])
            for d in sorted(ben.benign):
                if d not in exclude:
                    out.add(d, "benign", ben.provenance[d])
        day += dt.timedelta(days=1)
    return out


def ensemble_features(encoders: list[Encoder], domains: list[str], day: dt.date, inputs: Inputs,
                      cfg: PipelineConfig) -> tuple[list[str], np.ndarray]:
    """Concatenated encoder embeddings for every domain with PDNS visibility."""
    kept, rows = [], []
    for d in domains:
        comp = None
        if not all(domain_node(d) in e.graph.nodes for e in encoders):
            comp = computation_graph(d, day, inputs, cfg)
        embs = [encoder_embedding(e, d, comp, day, inputs, cfg) for e in encoders]
        if any(x is None for x in embs):
            continue
        kept.append(d)
        rows.append(np.concatenate(embs))
    width = sum(e.model.cfg.hidden_dim for e in encoders)
    return kept, np.stack(rows) if rows else np.zeros((0, width))


def fit_meta(X: np.ndarray, y: np.ndarray, seed: int = 0) -> RandomForestClassifier:
    rf = RandomForestClassifier(n_estimators=100, max_features="sqrt", max_depth=None, random_state=seed, n_jobs=1)
    rf.fit(X, y)
    return rf


def meta_split(y: np.ndarray, frac: float, seed: int) -> np.ndarray:
    """Boolean mask of the stratified held-out meta split."""
    rng = np.random.default_rng(seed)
    mask = np.zeros(len(y), dtype=bool)
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        mask[idx[:int(round(frac * len(idx)))]] = True
    return mask


def build_ensemble(encoders: list[Encoder], meta_gt: LabelSet, inputs: Inputs, day, cfg: PipelineConfig,
                   holdout_frac: float = 0.3, seed: int = 0) -> tuple[EnsembleModel, dict]:
    """Fit the meta-learner on concatenated embeddings of the meta ground truth.

    Returns the ensemble and a report with held-out metrics for the ensemble
    and for each single encoder (same split, same meta-learner family).
    """
    if len(encoders) != 4:
        raise ValueError(f"ensemble needs exactly 4 encoders, got {len(encoders)}")
    day = parse_day(day)
    leaked = sorted(set(meta_gt.labeled()) & set().union(*(e.labeled_domains() for e in encoders)))
    if leaked:
        raise LeakageError(f"{len(leaked)} meta ground-truth domains are encoder training labels, e.g. {leaked[:3]}")
    lab = meta_gt.labeled()
    names, X = ensemble_features(encoders, list(lab), day, inputs, cfg)
    y = np.array([lab[d] for d in names], dtype=np.int64)
    if len(set(y.tolist())) < 2:
        raise PipelineError("meta ground truth needs both classes with PDNS visibility")
    test = meta_split(y, holdout_frac, seed)
    meta = fit_meta(X[~test], y[~test], seed)
    p = meta.predict_proba(X[test])[:, 1]
    try:
        cal = calibrate_threshold(p, y[test], cfg.fpr_target)
    except CalibrationError as exc:
        log.warning("meta calibration skipped: %s", exc)
        cal = None
    H = encoders[0].model.cfg.hidden_dim
    report = {"n_meta": int(len(y)), "n_test": int(test.sum()),
              "ensemble": binary_metrics(y[test], p, 0.5), "single": []}
    for i in range(len(encoders)):
        sl = slice(i * H, (i + 1) * H)
        m = fit_meta(X[~test][:, sl], y[~test], seed)
        report["single"].append(binary_metrics(y[test], m.predict_proba(X[test][:, sl])[:, 1], 0.5))
    info = {"meta_n_train": int((~test).sum()), "meta_n_test": int(test.sum()),
            "meta_accuracy": report["ensemble"]["accuracy"]}
    return EnsembleModel(encoders, meta, cal, day, info), report


def predict_on_demand(ensemble: EnsembleModel, domain: str, inputs: Inputs, cfg: PipelineConfig | None = None,
                      day=None) -> OnDemandResult:
    cfg = cfg or PipelineConfig()
    name = canonical(domain)
    if not is_valid_name(name):
        raise ValueError(f"not a valid domain name: {domain!r}")
    day = parse_day(day) if day is not None else ensemble.day
    node = domain_node(name)
    comp = None
    if not all(node in e.graph.nodes for e in ensemble.encoders):
        comp = computation_graph(name, day, inputs, cfg)
    embs = [encoder_embedding(e, name, comp, day, inputs, cfg) for e in ensemble.encoders]
    if any(x is None for x in embs):
        return OnDemandResult(name, "no-visibility", None, ensemble.model_id)
    x = np.concatenate(embs)
    score = float(ensemble.meta.predict_proba(x[None, :])[0, 1])
    verdict = "malicious" if score >= ensemble.threshold else "benign"
    return OnDemandResult(name, verdict, score, ensemble.model_id, x)
