"""Node features: lexical, hosting, statistical and linguistic blocks, imputation and scaling."""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .graph import DOMAIN_KINDS, HeteroGraph, NodeRef, node_sort
from .names import SuffixList, apex_of, bundled_list, read_list
from .pdns import DAY, PdnsStore, TimeWindow, day_start

LEXICAL = ("pop_keywords", "length", "minus", "suspicious_tld", "brand_pos", "similar", "fake_tld",
           "num_subdomains", "subdomain_len", "has_www", "valid_tlds", "has_single_subdomain",
           "has_tld_subdomain", "digit_ex_subdomains_ratio", "has_ip")
DOMAIN_HOSTING = ("query_count", "n_ips", "n_name_servers", "is_ns_matching", "n_soa_domains",
                  "is_soa_matching", "duration")
STATISTICAL = ("entropy",
               "ngram1_mean", "ngram1_median", "ngram1_std",
               "ngram2_mean", "ngram2_median", "ngram2_std",
               "ngram3_mean", "ngram3_median", "ngram3_std")
LINGUISTIC = ("underscore_ratio", "has_digits", "digit_ratio", "vowel_ratio", "alphabet_cardinality",
              "repeated_char_ratio", "consec_consonants_ratio")
DOMAIN_FEATURES = LEXICAL + DOMAIN_HOSTING + STATISTICAL + LINGUISTIC
IP_FEATURES = ("n_apexes", "ip_query_count", "ip_duration")
IP_CATEGORICAL = ("subnet", "asn")

# heavy-tailed counts are log-scaled before z-scoring
LOG_SCALED = {"query_count", "ip_query_count", "n_apexes", "length", "subdomain_len"}

_DOMAIN_HOSTING_SLICE = slice(len(LEXICAL), len(LEXICAL) + len(DOMAIN_HOSTING))
FEATURE_GROUPS = {
    "lexical": LEXICAL,
    "domain-hosting": DOMAIN_HOSTING,
    "statistical": STATISTICAL,
    "linguistic": LINGUISTIC,
    "ip-hosting": IP_FEATURES,
}

_COMMON_TLDS = frozenset(("com", "net", "org", "info", "biz", "gov", "edu", "co", "io"))
_IP_RE = re.compile(r"(?:\d{1,3}[.-]){3}\d{1,3}")
_VOWELS = frozenset("aeiou")
_CONSONANTS = frozenset("bcdfghjklmnpqrstvwxyz")


@dataclass(frozen=True)
class LexiconConfig:
    brands: tuple[str, ...] = field(default_factory=lambda: bundled_list("brands.txt"))
    keywords: tuple[str, ...] = field(default_factory=lambda: bundled_list("keywords.txt"))
    suspicious_tlds: tuple[str, ...] = field(default_factory=lambda: bundled_list("suspicious_tlds.txt"))

    @classmethod
    def from_files(cls, brands=None, keywords=None, suspicious_tlds=None) -> "LexiconConfig":
        d = cls()
        return cls(tuple(read_list(brands)) if brands else d.brands,
                   tuple(read_list(keywords)) if keywords else d.keywords,
                   tuple(read_list(suspicious_tlds)) if suspicious_tlds else d.suspicious_tlds)


@dataclass
class FeatureVector:
    kind: str
    values: np.ndarray
    present: dict[str, bool]
    categorical: tuple[str, ...] = ()
    imputed: bool = False
    fallback: bool = False

    def copy(self) -> "FeatureVector":
        return FeatureVector(self.kind, self.values.copy(), dict(self.present), self.categorical,
                             self.imputed, self.fallback)


# ---------------------------------------------------------------------------
# lexical / statistical / linguistic

@lru_cache(maxsize=200_000)
def _edit_distance(a: str, b: str, cap: int = 3) -> int:
    if abs(len(a) - len(b)) >= cap:
        return cap
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        if min(cur) >= cap:
            return cap
        prev = cur
    return min(prev[-1], cap)


@lru_cache(maxsize=100_000)
def _resembles_brand(token: str, brands: tuple[str, ...]) -> bool:
    for b in brands:
        if len(b) < 4 or token == b:
            continue
        d = _edit_distance(token, b)
        if d <= 2 and d / len(b) <= 0.34:
            return True
    return False


def ngram_stats(s: str, n: int) -> tuple[float, float, float]:
    if len(s) < n:
        return 0.0, 0.0, 0.0
    freqs = np.array(list(Counter(s[i:i + n] for i in range(len(s) - n + 1)).values()), dtype=np.float64)
    return float(freqs.mean()), float(np.median(freqs)), float(freqs.std())


def shannon_entropy(s: str) -> float:
    if not s:
        return 0.0
    n = len(s)
    h = -sum(c / n * math.log2(c / n) for c in Counter(s).values())
    return max(0.0, h)


def _stat_ling(s: str) -> list[float]:
    n = len(s)
    out = [shannon_entropy(s)]
    for k in (1, 2, 3):
        out.extend(ngram_stats(s, k))
    if n == 0:
        return out + [0.0] * len(LINGUISTIC)
    counts = Counter(s)
    digits = sum(ch.isdigit() for ch in s)
    in_runs = 0
    run = 0
    for ch in s + "#":
        if ch in _CONSONANTS:
            run += 1
        else:
            if run >= 2:
                in_runs += run
            run = 0
    out += [
        s.count("_") / n,
        float(digits > 0),
        digits / n,
        sum(ch in _VOWELS for ch in s) / n,
        float(len(counts)),
        sum(c for c in counts.values() if c > 1) / n,
        in_runs / n,
    ]
    return out


def lexical_features(name: str, lex: LexiconConfig | None = None,
                     suffixes: SuffixList | None = None) -> np.ndarray:
    """Lexical, statistical and linguistic values for ``name`` in ``DOMAIN_FEATURES`` order.

    The hosting block is left as zeros. Statistics use the name without dots and
    without the public suffix.
    """
    lex = lex or _default_lexicon()
    suffixes = suffixes or SuffixList.bundled()
    sub, reg, suffix = suffixes.split(name)
    labels = sub + ([reg] if reg else [])
    tokens = [t for lab in labels for t in lab.split("-") if t]
    first_brand = min((i for i in (name.find(b) for b in lex.brands) if i >= 0), default=-1)
    reg_digits = sum(ch.isdigit() for ch in reg) / len(reg) if reg else 0.0
    lexical = [
        float(sum(name.count(k) for k in lex.keywords)),
        float(len(name)),
        float(name.count("-")),
        float(suffix in lex.suspicious_tlds),
        float(first_brand),
        float(any(_resembles_brand(t, lex.brands) for t in tokens)),
        float(_fake_tld(labels)),
        float(len(sub)),
        float(len(".".join(sub))),
        float(bool(sub) and sub[0] == "www"),
        float(suffix in suffixes.suffixes),
        float(len(sub) == 1),
        float(any(lab in suffixes.suffixes for lab in sub)),
        reg_digits,
        float(bool(_IP_RE.search(name))),
    ]
    out = np.zeros(len(DOMAIN_FEATURES), dtype=np.float64)
    out[: len(LEXICAL)] = lexical
    out[len(LEXICAL) + len(DOMAIN_HOSTING):] = _stat_ling("".join(labels))
    return out


def _fake_tld(labels: list[str]) -> bool:
    """A TLD word used as a hyphenated token inside a label, e.g. ``paypal-com-login``."""
    for lab in labels:
        parts = lab.split("-")
        if len(parts) > 1 and any(p in _COMMON_TLDS for p in parts):
            return True
    return False


@lru_cache(maxsize=1)
def _default_lexicon() -> LexiconConfig:
    return LexiconConfig()


# ---------------------------------------------------------------------------
# hosting

@dataclass(frozen=True)
class FeatureWindows:
    feature_days: int = 7
    query_days: int = 30


def _windows(day_end: int, w: FeatureWindows) -> tuple[TimeWindow, TimeWindow]:
    return TimeWindow.days_ending(day_end, w.feature_days), TimeWindow.days_ending(day_end, w.query_days)


def domain_hosting(name: str, store: PdnsStore, day_end: int, w: FeatureWindows = FeatureWindows(),
                   kind: str | None = None) -> np.ndarray | None:
    fw, qw = _windows(day_end, w)
    sub = (kind or ("apex" if apex_of(name) == name else "fqdn")) == "apex"
    st = store.hosting_stats(name, fw, include_subdomains=sub)
    if st is None:
        return None
    q = store.hosting_stats(name, qw, include_subdomains=sub)
    apex = apex_of(name)
    return np.array([
        float(q.query_count if q else st.query_count),
        float(st.distinct_counterparties),
        float(st.ns_count),
        float(any(apex_of(n) == apex for n in st.ns_names)),
        float(st.soa_count),
        float(any(apex_of(n) == apex for n in st.soa_names)),
        st.duration_days,
    ], dtype=np.float64)


def ip_hosting(ip: str, store: PdnsStore, day_end: int, w: FeatureWindows = FeatureWindows()) -> np.ndarray | None:
    fw, _ = _windows(day_end, w)
    st = store.hosting_stats(ip, fw)
    if st is None:
        return None
    return np.array([float(st.apexes), float(st.query_count), st.duration_days], dtype=np.float64)


def hosting_features(node: NodeRef, store: PdnsStore, day_end: int,
                     w: FeatureWindows = FeatureWindows()) -> np.ndarray | None:
    if node.kind in DOMAIN_KINDS:
        return domain_hosting(node.key, store, day_end, w, node.kind)
    if node.kind == "ip":
        return ip_hosting(node.key, store, day_end, w)
    raise ValueError(f"no hosting features for kind {node.kind}")


def ip_categories(graph: HeteroGraph, ip: NodeRef) -> tuple[str, str]:
    subnet = next((e[2].key for e in graph.out_edges(ip) if e[1] == "in_subnet"), "")
    asn = ""
    if subnet:
        asn = next((e[2].key for e in graph.out_edges(NodeRef("subnet24", subnet)) if e[1] == "in_asn"), "")
    return subnet, asn


def featurize(graph: HeteroGraph, store: PdnsStore, day_end: int | None = None,
              lex: LexiconConfig | None = None, w: FeatureWindows = FeatureWindows(),
              nodes=None) -> dict[NodeRef, FeatureVector]:
    """Raw (un-imputed) feature vectors for the domain and IP nodes of ``graph``."""
    if day_end is None:
        day_end = graph.day_span.end
    lex = lex or _default_lexicon()
    out = {}
    for node in node_sort(nodes if nodes is not None else graph.nodes):
        if node.kind in DOMAIN_KINDS:
            values = lexical_features(node.key, lex)
            host = domain_hosting(node.key, store, day_end, w, node.kind)
            if host is not None:
                values[_DOMAIN_HOSTING_SLICE] = host
            out[node] = FeatureVector(node.kind, values, {"lexical": True, "hosting": host is not None})
        elif node.kind == "ip":
            host = ip_hosting(node.key, store, day_end, w)
            values = host if host is not None else np.zeros(len(IP_FEATURES))
            out[node] = FeatureVector("ip", values, {"hosting": host is not None},
                                      categorical=ip_categories(graph, node))
    return out


def hosting_slice(kind: str) -> slice:
    return _DOMAIN_HOSTING_SLICE if kind in DOMAIN_KINDS else slice(0, len(IP_FEATURES))


# ---------------------------------------------------------------------------
# imputation

def two_hop_candidates(graph: HeteroGraph, node: NodeRef) -> Counter:
    """Same-class two-hop neighbours with their shared-counterparty counts."""
    shared: Counter = Counter()
    if node.kind in DOMAIN_KINDS:
        for ip in graph.ips_of(node):
            for d in graph.domains_on(ip):
                if d != node:
                    shared[d] += 1
    elif node.kind == "ip":
        for d in graph.domains_on(node):
            for ip in graph.ips_of(d):
                if ip != node:
                    shared[ip] += 1
    return shared


def impute(graph: HeteroGraph, features: dict[NodeRef, FeatureVector], k: int = 5,
           only=None) -> dict[NodeRef, FeatureVector]:
    """Fill absent hosting blocks with the shared-count-weighted mean of up to ``k`` two-hop neighbours.

    Nodes without an eligible neighbour take the per-kind mean over present
    nodes and get ``fallback=True``. Present blocks are never modified.
    ``only`` restricts filling to a subset of nodes (others are copied as is).
    """
    out = {n: fv.copy() for n, fv in features.items()}
    means = {}
    for kind in ("apex", "fqdn", "ip"):
        sl = hosting_slice(kind)
        rows = [fv.values[sl] for fv in features.values() if fv.kind == kind and fv.present["hosting"]]
        means[kind] = np.mean(rows, axis=0) if rows else None
    for node in node_sort(features if only is None else (n for n in only if n in features)):
        fv = features[node]
        if fv.present.get("hosting", True) or fv.imputed:
            continue
        sl = hosting_slice(fv.kind)
        shared = two_hop_candidates(graph, node)
        ranked = sorted(((-c, m.sort_key(), m) for m, c in shared.items()
                         if m in features and features[m].present.get("hosting")), key=lambda t: t[:2])[:k]
        target = out[node]
        target.imputed = True
        if ranked:
            weights = np.array([-c for c, _, _ in ranked], dtype=np.float64)
            block = np.stack([features[m].values[sl] for _, _, m in ranked])
            target.values[sl] = weights @ block / weights.sum()
        else:
            target.fallback = True
            mean = means.get(fv.kind)
            if mean is None:
                others = [m for m in means.values() if m is not None and len(m) == sl.stop - sl.start]
                mean = others[0] if others else np.zeros(sl.stop - sl.start)
            target.values[sl] = mean
    return out


# ---------------------------------------------------------------------------
# scaling

@dataclass
class FeatureStats:
    """Per-column mean/std fitted on training nodes; log-scaled columns use log1p first."""

    names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def log_mask(self) -> np.ndarray:
        return np.array([n in LOG_SCALED for n in self.names])

    @classmethod
    def fit(cls, names, matrix: np.ndarray) -> "FeatureStats":
        names = tuple(names)
        x = _log(np.asarray(matrix, dtype=np.float64), np.array([n in LOG_SCALED for n in names]))
        if x.shape[0] == 0:
            return cls(names, np.zeros(len(names)), np.zeros(len(names)))
        return cls(names, x.mean(axis=0), x.std(axis=0))

    def to_dict(self) -> dict:
        return {"names": list(self.names), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeatureStats":
        return cls(tuple(d["names"]), np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def _log(x, mask):
    x = x.copy()
    if mask.any():
        x[:, mask] = np.sign(x[:, mask]) * np.log1p(np.abs(x[:, mask]))
    return x


def standardize(matrix: np.ndarray, stats: FeatureStats) -> np.ndarray:
    x = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    if x.shape[1] != len(stats.mean):
        raise ValueError(f"feature width {x.shape[1]} does not match stats width {len(stats.mean)}")
    x = _log(x, stats.log_mask)
    safe = np.where(stats.std > 0, stats.std, 1.0)
    return np.where(stats.std > 0, (x - stats.mean) / safe, 0.0)


def destandardize(z: np.ndarray, stats: FeatureStats) -> np.ndarray:
    x = np.asarray(z, dtype=np.float64) * stats.std + stats.mean
    mask = stats.log_mask
    if mask.any():
        x[:, mask] = np.sign(x[:, mask]) * np.expm1(np.abs(x[:, mask]))
    return x


# ---------------------------------------------------------------------------
# matrices and files

def matrix(features: dict[NodeRef, FeatureVector], kind_class: str) -> tuple[list[NodeRef], np.ndarray]:
    kinds = DOMAIN_KINDS if kind_class == "domain" else (kind_class,)
    nodes = node_sort(n for n in features if n.kind in kinds)
    width = len(DOMAIN_FEATURES) if kind_class == "domain" else len(IP_FEATURES)
    if not nodes:
        return nodes, np.zeros((0, width))
    return nodes, np.stack([features[n].values for n in nodes])


def write_feature_csv(features: dict[NodeRef, FeatureVector], out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for kind_class, names in (("domain", DOMAIN_FEATURES), ("ip", IP_FEATURES + IP_CATEGORICAL)):
        nodes, mat = matrix(features, kind_class)
        p = out_dir / f"features_{kind_class}.csv"
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("kind,key," + ",".join(names) + ",hosting_present,imputed\n")
            for n, row in zip(nodes, mat):
                fv = features[n]
                cells = [repr(float(v)) for v in row] + list(fv.categorical)
                fh.write(f"{n.kind},{n.key}," + ",".join(cells)
                         + f",{int(fv.present['hosting'])},{int(fv.imputed)}\n")
        paths.append(p)
    return paths


def read_feature_csv(path: str | Path) -> dict[NodeRef, FeatureVector]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        n_num = len(DOMAIN_FEATURES) if "pop_keywords" in header else len(IP_FEATURES)
        for line in fh:
            cells = line.rstrip("\n").split(",")
            kind, key = cells[0], cells[1]
            values = np.array([float(c) for c in cells[2:2 + n_num]])
            cat = tuple(cells[2 + n_num:-2])
            present = {"hosting": cells[-2] == "1"}
            if kind in DOMAIN_KINDS:
                present["lexical"] = True
            out[NodeRef(kind, key)] = FeatureVector(kind, values, present, cat, imputed=cells[-1] == "1")
    return out


def day_end_for(day) -> int:
    return day_start(day) + DAY
