"""Threat feed and top-list ingestion, seed extraction and ground-truth assembly."""
from __future__ import annotations

import datetime as dt
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .names import SuffixList, apex_of, bundled_list, read_list
from .pdns import DAY, PdnsStore, TimeWindow, day_start, parse_day

log = logging.getLogger(__name__)

MALICIOUS_THRESHOLD = 5
PROVENANCES = ("seed", "prior-marked", "toplist-30d", "heuristic", "edu-gov")


@dataclass(frozen=True)
class FeedEntry:
    domain: str
    first_seen: int
    positives: int
    total_scanners: int

    def __post_init__(self):
        if not 0 <= self.positives <= self.total_scanners:
            raise ValueError(f"{self.domain}: positives outside [0, total_scanners]")


class Feed:
    """Scanner verdicts keyed by domain; queries are always made as of a cut-off time."""

    def __init__(self, entries: Iterable[FeedEntry] = ()):
        self._by_domain: dict[str, list[FeedEntry]] = {}
        for e in entries:
            self._by_domain.setdefault(e.domain, []).append(e)
        for lst in self._by_domain.values():
            lst.sort(key=lambda e: (e.first_seen, e.positives))

    @classmethod
    def load(cls, path: str | Path) -> "Feed":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("domain,"):
                    continue
                parts = line.split(",")
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: expected 4 fields")
                entries.append(FeedEntry(parts[0].lower().rstrip("."), int(parts[1]),
                                         int(parts[2]), int(parts[3])))
        return cls(entries)

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_domain.values())

    def domains(self) -> list[str]:
        return sorted(self._by_domain)

    def positives(self, domain: str, as_of: int | None = None) -> int | None:
        """Highest positives seen for ``domain`` with first_seen < ``as_of``; None if never scanned."""
        best = None
        for e in self._by_domain.get(domain, ()):
            if as_of is not None and e.first_seen >= as_of:
                break
            best = e.positives if best is None else max(best, e.positives)
        return best

    def is_malicious(self, domain: str, as_of: int | None = None, threshold: int = MALICIOUS_THRESHOLD) -> bool:
        p = self.positives(domain, as_of)
        return p is not None and p >= threshold

    def first_flagged(self, domain: str, threshold: int = MALICIOUS_THRESHOLD) -> int | None:
        for e in self._by_domain.get(domain, ()):
            if e.positives >= threshold:
                return e.first_seen
        return None

    def entries_between(self, start: int, end: int) -> list[FeedEntry]:
        out = [e for lst in self._by_domain.values() for e in lst if start <= e.first_seen < end]
        out.sort(key=lambda e: (e.domain, e.first_seen))
        return out

    def positives_map(self, as_of: int | None = None) -> dict[str, int]:
        out = {}
        for d in self._by_domain:
            p = self.positives(d, as_of)
            if p is not None:
                out[d] = p
        return out


class Toplists:
    """Daily ``rank,domain`` lists per source, stored as ``<root>/<source>/<YYYY-MM-DD>.csv``."""

    def __init__(self, lists: dict[str, dict[dt.date, frozenset[str]]]):
        if not lists:
            raise FileNotFoundError("no top-list sources configured")
        self.lists = lists

    @classmethod
    def load(cls, root: str | Path) -> "Toplists":
        root = Path(root)
        if not root.is_dir():
            raise FileNotFoundError(f"top-list directory missing: {root}")
        lists = {}
        for src in sorted(p for p in root.iterdir() if p.is_dir()):
            days = {}
            for f in sorted(src.glob("*.csv")):
                names = set()
                with open(f, encoding="utf-8") as fh:
                    for line in fh:
                        rank, _, name = line.strip().partition(",")
                        if rank == "rank" or not name:
                            continue
                        names.add(name.lower())
                days[dt.date.fromisoformat(f.stem)] = frozenset(names)
            if days:
                lists[src.name] = days
        return cls(lists)

    @property
    def sources(self) -> list[str]:
        return sorted(self.lists)

    def _require(self, days: list[dt.date]) -> None:
        for src, by_day in self.lists.items():
            missing = [d for d in days if d not in by_day]
            if missing:
                raise FileNotFoundError(f"top list {src} missing {len(missing)} day(s), first {missing[0]}")

    def any_recent(self, day: dt.date, days: int = 30) -> frozenset[str]:
        """Union of every source over the ``days`` days ending at ``day``."""
        span = [day - dt.timedelta(days=k) for k in range(days)]
        present = [d for d in span if any(d in by_day for by_day in self.lists.values())]
        if not present:
            raise FileNotFoundError(f"no top-list file covers the {days} days ending {day}")
        out: set[str] = set()
        for by_day in self.lists.values():
            for d in present:
                out |= by_day.get(d, frozenset())
        return frozenset(out)

    def top_30d(self, day: dt.date, days: int = 30) -> frozenset[str]:
        """Domains present in every source on each of the ``days`` consecutive days ending at ``day``."""
        span = [day - dt.timedelta(days=k) for k in range(days)]
        self._require(span)
        sets = [by_day[d] for by_day in self.lists.values() for d in span]
        out = set(sets[0])
        for s in sets[1:]:
            out &= s
        return frozenset(out)


@dataclass
class LabelSet:
    malicious: set[str] = field(default_factory=set)
    benign: set[str] = field(default_factory=set)
    provenance: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    warning: str | None = None

    def add(self, domain: str, label: str, source: str) -> None:
        if label == "malicious":
            if domain in self.benign:
                self.benign.discard(domain)
                self.notes.append(f"{domain}: benign ({self.provenance.get(domain)}) relabeled malicious ({source})")
                self.provenance[domain] = source
            if domain not in self.malicious:
                self.malicious.add(domain)
                self.provenance.setdefault(domain, source)
        elif label == "benign":
            if domain in self.malicious:
                self.notes.append(f"{domain}: benign ({source}) dropped, already malicious")
                return
            if domain not in self.benign:
                self.benign.add(domain)
                self.provenance[domain] = source
        else:
            raise ValueError(f"unknown label {label!r}")

    def merge(self, other: "LabelSet") -> "LabelSet":
        out = LabelSet(notes=list(self.notes) + list(other.notes), warning=self.warning or other.warning)
        for ls in (self, other):
            for d in sorted(ls.malicious):
                out.add(d, "malicious", ls.provenance.get(d, "seed"))
        for ls in (self, other):
            for d in sorted(ls.benign):
                out.add(d, "benign", ls.provenance.get(d, "heuristic"))
        return out

    def labeled(self) -> dict[str, int]:
        out = {d: 0 for d in self.benign}
        out.update({d: 1 for d in self.malicious})
        return dict(sorted(out.items()))

    def mix(self) -> dict[str, float]:
        counts = Counter(self.provenance[d] for d in self.benign)
        n = max(1, len(self.benign))
        return {k: counts.get(k, 0) / n for k in ("toplist-30d", "heuristic", "edu-gov")}

    def __len__(self) -> int:
        return len(self.malicious) + len(self.benign)


# ---------------------------------------------------------------------------
# DGA heuristic

_VOWELS = set("aeiouy")


def _entropy(s: str) -> float:
    if not s:
        return 0.0
    counts = Counter(s)
    n = len(s)
    return -sum(c / n * math.log2(c / n) for c in counts.values())


def longest_consonant_run(s: str) -> int:
    best = run = 0
    for ch in s:
        if ch.isalpha() and ch not in _VOWELS:
            run += 1
            best = max(best, run)
        else:
            run = 0
    return best


def default_dga_filter(name: str, suffixes: SuffixList | None = None) -> bool:
    """Character-entropy plus consonant-run heuristic on the registrable label."""
    suffixes = suffixes or SuffixList.bundled()
    _, label, _ = suffixes.split(name)
    if len(label) < 8:
        return False
    letters = [c for c in label if c.isalpha()]
    vowel_ratio = sum(c in _VOWELS for c in letters) / max(1, len(letters))
    digits = sum(c.isdigit() for c in label) / len(label)
    return (_entropy(label) > 3.0 and (longest_consonant_run(label) >= 5 or vowel_ratio < 0.2)
            and digits < 0.5) or (vowel_ratio < 0.12 and len(label) >= 10)


# ---------------------------------------------------------------------------
# seeds and ground truth

def extract_seeds(feed: Feed, day: dt.date | str, toplists: Toplists,
                  public_apexes: Iterable[str], sinkhole_ips: Iterable[str],
                  dga_filter: Callable[[str], bool] | None = default_dga_filter,
                  store: PdnsStore | None = None, threshold: int = MALICIOUS_THRESHOLD,
                  report: dict | None = None) -> list[str]:
    """Freshly flagged attack domains of ``day`` that survive the compromise/hosting/sinkhole/DGA filters."""
    day = parse_day(day)
    public = frozenset(public_apexes)
    if not public:
        raise FileNotFoundError("public-suffix/webhosting list is empty or missing")
    sinks = frozenset(sinkhole_ips)
    popular = toplists.any_recent(day)
    start = day_start(day)
    window = TimeWindow.days_ending(start + DAY, 7)
    reasons: Counter = Counter()
    by_apex: dict[str, str] = {}
    for e in feed.entries_between(start, start + DAY):
        if e.positives < threshold:
            reasons["positives"] += 1
            continue
        d = e.domain
        apex = apex_of(d)
        if apex in popular or d in popular:
            reasons["toplist"] += 1
            continue
        if apex in public or d in public:
            reasons["public-apex"] += 1
            continue
        if store is not None:
            ips = [ip for ip, _, _ in store.resolutions(d, window)]
            if ips and all(ip in sinks for ip in ips):
                reasons["sinkhole"] += 1
                continue
        if dga_filter is not None and dga_filter(d):
            reasons["dga"] += 1
            continue
        if apex not in by_apex or d < by_apex[apex]:
            by_apex[apex] = d
    if report is not None:
        report.update(reasons)
    return sorted(set(by_apex.values()))


def build_malicious_gt(seeds: Iterable[str], graph, feed: Feed, as_of: int | None = None,
                       threshold: int = MALICIOUS_THRESHOLD) -> LabelSet:
    out = LabelSet()
    for s in sorted(set(seeds)):
        out.add(s, "malicious", "seed")
    for d in graph.domain_keys():
        if d not in out.malicious and feed.is_malicious(d, as_of, threshold):
            out.add(d, "malicious", "prior-marked")
    return out


@dataclass
class BenignConfig:
    brands: tuple[str, ...] = field(default_factory=lambda: bundled_list("brands.txt"))
    low_reputation_tlds: tuple[str, ...] = field(default_factory=lambda: bundled_list("low_reputation_tlds.txt"))
    reputable_tlds: tuple[str, ...] = field(default_factory=lambda: bundled_list("reputable_tlds.txt"))
    mix: tuple[float, float, float] = (0.54, 0.41, 0.05)
    require_scanned: bool = True
    seed: int = 0

    @classmethod
    def from_files(cls, brands=None, low_reputation=None, reputable=None, **kw) -> "BenignConfig":
        cfg = cls(**kw)
        if brands:
            cfg.brands = tuple(read_list(brands))
        if low_reputation:
            cfg.low_reputation_tlds = tuple(read_list(low_reputation))
        if reputable:
            cfg.reputable_tlds = tuple(read_list(reputable))
        return cfg


def has_brand(name: str, brands: Iterable[str]) -> bool:
    return any(b in name for b in brands)


def tld_in(name: str, tlds: Iterable[str]) -> bool:
    suffix = SuffixList.bundled().suffix(name)
    return any(suffix == t or suffix.endswith("." + t) for t in tlds)


def build_benign_gt(graph, feed: Feed, toplists: Toplists, cfg: BenignConfig | None = None,
                    sample_size: int | None = None, day: dt.date | str | None = None,
                    dga_filter: Callable[[str], bool] | None = default_dga_filter,
                    exclude: Iterable[str] = ()) -> LabelSet:
    """Benign labels for graph domains from popularity, passive heuristics and reputable TLDs.

    ``sample_size=None`` sizes the heuristic sample from the popularity pool so the
    provenance mix follows ``cfg.mix`` when the pools allow.
    """
    cfg = cfg or BenignConfig()
    day = parse_day(day) if day is not None else graph.last_day
    as_of = day_start(day) + DAY
    top = toplists.top_30d(day)
    skip = set(exclude)
    domains = [d for d in graph.domain_keys() if d not in skip]

    def clean(d):
        p = feed.positives(d, as_of)
        return p == 0 if cfg.require_scanned else not p

    popular = [d for d in domains if (d in top or apex_of(d) in top) and not feed.positives(d, as_of)]
    reputable = [d for d in domains if tld_in(d, cfg.reputable_tlds) and clean(d) and d not in set(popular)]
    taken = set(popular) | set(reputable)
    pool = [d for d in domains if d not in taken and clean(d)
            and not (dga_filter is not None and dga_filter(d))
            and not has_brand(d, cfg.brands)
            and not tld_in(d, cfg.low_reputation_tlds)
            and graph.has_resolution(d)]
    out = LabelSet()
    if sample_size is None:
        pop_share, heur_share, _ = cfg.mix
        sample_size = int(round(len(popular) * heur_share / pop_share)) if popular else len(pool)
    if sample_size > len(pool):
        out.warning = f"sample_size {sample_size} exceeds heuristic pool {len(pool)}; returning pool"
        log.warning(out.warning)
        sample = pool
    else:
        rng = np.random.default_rng(cfg.seed)
        idx = rng.choice(len(pool), size=sample_size, replace=False) if sample_size else []
        sample = [pool[i] for i in sorted(idx)]
    for d in popular:
        out.add(d, "benign", "toplist-30d")
    for d in reputable:
        out.add(d, "benign", "edu-gov")
    for d in sample:
        out.add(d, "benign", "heuristic")
    return out
