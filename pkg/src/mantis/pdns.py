"""Time-indexed passive-DNS store.

Records are aggregated observations ``(rrname, rrtype, rdata, time_first,
time_last, count)``. Observations for the same ``(rrname, rrtype, rdata)``
triple are merged for the record view, but the individual time segments are
kept so that windowed queries only see activity that intersects the window.
"""
from __future__ import annotations

import datetime as dt
import json
import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .names import apex_of, canonical, is_ipv4, is_valid_name

log = logging.getLogger(__name__)

DAY = 86400
RRTYPES = ("A", "NS", "SOA", "MX")
FIELDS = ("rrname", "rrtype", "rdata", "time_first", "time_last", "count")


class RecordError(ValueError):
    pass


def day_start(day: dt.date) -> int:
    return int(dt.datetime(day.year, day.month, day.day, tzinfo=dt.timezone.utc).timestamp())


def day_of(ts: int) -> dt.date:
    return dt.datetime.fromtimestamp(ts, tz=dt.timezone.utc).date()


def parse_day(text: str | dt.date) -> dt.date:
    return text if isinstance(text, dt.date) else dt.date.fromisoformat(text)


@dataclass(frozen=True)
class DnsRecord:
    rrname: str
    rrtype: str
    rdata: str
    time_first: int
    time_last: int
    count: int

    @classmethod
    def from_dict(cls, obj: dict) -> "DnsRecord":
        missing = [f for f in FIELDS if f not in obj]
        if missing:
            raise RecordError(f"missing fields: {','.join(missing)}")
        try:
            rec = cls(
                rrname=canonical(str(obj["rrname"])),
                rrtype=str(obj["rrtype"]).upper(),
                rdata=canonical(str(obj["rdata"])),
                time_first=int(obj["time_first"]),
                time_last=int(obj["time_last"]),
                count=int(obj["count"]),
            )
        except (TypeError, ValueError) as exc:
            raise RecordError(f"bad field type: {exc}") from None
        rec.validate()
        return rec

    def validate(self) -> None:
        if self.rrtype not in RRTYPES:
            raise RecordError(f"unsupported rrtype {self.rrtype!r}")
        if self.time_first > self.time_last:
            raise RecordError("time_first > time_last")
        if self.count < 1:
            raise RecordError("count < 1")
        if not is_valid_name(self.rrname):
            raise RecordError(f"invalid rrname {self.rrname!r}")
        if self.rrtype == "A":
            if not is_ipv4(self.rdata):
                raise RecordError(f"A rdata is not IPv4: {self.rdata!r}")
        elif not is_valid_name(self.rdata):
            raise RecordError(f"invalid rdata name {self.rdata!r}")

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in FIELDS}


@dataclass(frozen=True)
class TimeWindow:
    """Half-open interval ``[start, end)`` in unix seconds."""

    start: int
    end: int

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"empty window [{self.start}, {self.end})")

    @classmethod
    def days_ending(cls, end: int, days: int) -> "TimeWindow":
        return cls(end - days * DAY, end)

    @classmethod
    def for_day(cls, day: dt.date, days: int = 1) -> "TimeWindow":
        """The ``days``-long window ending at the close of ``day``."""
        return cls.days_ending(day_start(day) + DAY, days)

    def intersects(self, first: int, last: int) -> bool:
        return first < self.end and last >= self.start


@dataclass
class HostingStats:
    query_count: int
    duration_days: float
    distinct_counterparties: int
    ns_names: tuple[str, ...] = ()
    soa_names: tuple[str, ...] = ()
    mx_count: int = 0
    apexes: int = 0

    @property
    def ns_count(self) -> int:
        return len(self.ns_names)

    @property
    def soa_count(self) -> int:
        return len(self.soa_names)


class PdnsStore:
    """In-memory store with name and A-rdata indexes, persisted as canonical JSONL.

    Reads are safe from several threads once ingest has finished.
    """

    def __init__(self):
        # rrname -> (rrtype, rdata) -> [[time_first, time_last, count], ...]
        self._by_name: dict[str, dict[tuple[str, str], list[list[int]]]] = {}
        self._by_ip: dict[str, set[str]] = defaultdict(set)
        self._by_apex: dict[str, set[str]] = defaultdict(set)
        self.rejected: list[tuple[object, str]] = []

    # -- ingest -----------------------------------------------------------
    def ingest(self, records: Iterable[DnsRecord | dict]) -> int:
        n = 0
        for i, item in enumerate(records):
            try:
                rec = item if isinstance(item, DnsRecord) else DnsRecord.from_dict(item)
                if isinstance(item, DnsRecord):
                    rec.validate()
            except RecordError as exc:
                self.rejected.append((i, str(exc)))
                continue
            self._add(rec)
            n += 1
        return n

    def ingest_file(self, path: str | Path) -> int:
        return self.ingest(_read_jsonl(path, self.rejected))

    def _add(self, rec: DnsRecord) -> None:
        slots = self._by_name.get(rec.rrname)
        if slots is None:
            slots = self._by_name[rec.rrname] = {}
            self._by_apex[apex_of(rec.rrname)].add(rec.rrname)
        segs = slots.setdefault((rec.rrtype, rec.rdata), [])
        for seg in segs:
            if seg[0] == rec.time_first and seg[1] == rec.time_last:
                seg[2] += rec.count
                break
        else:
            segs.append([rec.time_first, rec.time_last, rec.count])
        if rec.rrtype == "A":
            self._by_ip[rec.rdata].add(rec.rrname)

    # -- record views -----------------------------------------------------
    def __len__(self) -> int:
        return sum(len(s) for s in self._by_name.values())

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    def records(self) -> Iterator[DnsRecord]:
        """Merged view: one record per triple, sorted canonically."""
        for name in sorted(self._by_name):
            for (rrtype, rdata), segs in sorted(self._by_name[name].items()):
                yield DnsRecord(
                    name, rrtype, rdata,
                    min(s[0] for s in segs), max(s[1] for s in segs), sum(s[2] for s in segs),
                )

    def names(self) -> list[str]:
        return sorted(self._by_name)

    def ips(self) -> list[str]:
        return sorted(self._by_ip)

    def names_under(self, apex: str) -> list[str]:
        return sorted(self._by_apex.get(apex, ()))

    def _window_segs(self, name: str, rrtype: str, window: TimeWindow):
        """Yield (rdata, first, last, count) for intersecting segments."""
        slots = self._by_name.get(name)
        if not slots:
            return
        for (rt, rdata), segs in slots.items():
            if rt != rrtype:
                continue
            for first, last, count in segs:
                if window.intersects(first, last):
                    yield rdata, first, last, count

    # -- queries ----------------------------------------------------------
    def resolutions(self, domain: str, window: TimeWindow) -> list[tuple[str, int, int]]:
        """A-record IPs of ``domain`` active in ``window``, most recent first.

        ``time_last`` is reported as seen at the window end (clipped).
        """
        agg: dict[str, list[int]] = {}
        for ip, _first, last, count in self._window_segs(domain, "A", window):
            last = min(last, window.end - 1)
            cur = agg.get(ip)
            if cur is None:
                agg[ip] = [last, count]
            else:
                cur[0] = max(cur[0], last)
                cur[1] += count
        out = [(ip, v[0], v[1]) for ip, v in agg.items()]
        out.sort(key=lambda t: (-t[1], t[0]))
        return out

    def recent_domains(self, ip: str, window: TimeWindow, limit: int | None = None) -> list[str]:
        if limit is not None and limit < 1:
            raise ValueError("limit must be >= 1")
        ranked = []
        for name in self._by_ip.get(ip, ()):
            latest = None
            for first, last, _count in self._by_name[name].get(("A", ip), ()):
                if window.intersects(first, last):
                    last = min(last, window.end - 1)
                    latest = last if latest is None else max(latest, last)
            if latest is not None:
                ranked.append((-latest, name))
        ranked.sort()
        if limit is not None:
            ranked = ranked[:limit]
        return [name for _, name in ranked]

    def hosting_stats(self, key: str, window: TimeWindow,
                      include_subdomains: bool = False) -> HostingStats | None:
        """Aggregate activity of a domain or IPv4 key over ``window``.

        ``query_count`` sums A-record counts only; ``duration_days`` spans every
        record type, clipped to the window.

        Returns ``None`` when nothing intersects the window (absent marker).
        ``include_subdomains`` folds in every name under the apex ``key``.
        """
        if is_ipv4(key):
            return self._ip_stats(key, window)
        names = [key]
        if include_subdomains:
            names = sorted(set(self._by_apex.get(key, ())) | {key})
        first_seen = last_seen = None
        queries = 0
        ips, ns, soa, mx = set(), set(), set(), set()
        for name in names:
            for (rrtype, rdata), segs in self._by_name.get(name, {}).items():
                for first, last, count in segs:
                    if not window.intersects(first, last):
                        continue
                    first, last = max(first, window.start), min(last, window.end - 1)
                    first_seen = first if first_seen is None else min(first_seen, first)
                    last_seen = last if last_seen is None else max(last_seen, last)
                    if rrtype == "A":
                        queries += count
                    {"A": ips, "NS": ns, "SOA": soa, "MX": mx}[rrtype].add(rdata)
        if first_seen is None:
            return None
        return HostingStats(
            query_count=queries,
            duration_days=(last_seen - first_seen) / DAY,
            distinct_counterparties=len(ips),
            ns_names=tuple(sorted(ns)),
            soa_names=tuple(sorted(soa)),
            mx_count=len(mx),
        )

    def _ip_stats(self, ip: str, window: TimeWindow) -> HostingStats | None:
        first_seen = last_seen = None
        queries = 0
        names = set()
        for name in self._by_ip.get(ip, ()):
            for first, last, count in self._by_name[name].get(("A", ip), ()):
                if not window.intersects(first, last):
                    continue
                first, last = max(first, window.start), min(last, window.end - 1)
                first_seen = first if first_seen is None else min(first_seen, first)
                last_seen = last if last_seen is None else max(last_seen, last)
                queries += count
                names.add(name)
        if first_seen is None:
            return None
        return HostingStats(
            query_count=queries,
            duration_days=(last_seen - first_seen) / DAY,
            distinct_counterparties=len(names),
            apexes=len({apex_of(n) for n in names}),
        )

    def active_a_records(self, window: TimeWindow) -> Iterator[tuple[str, str]]:
        """All (name, ip) pairs with an A segment intersecting ``window``."""
        for name, slots in self._by_name.items():
            for (rrtype, rdata), segs in slots.items():
                if rrtype == "A" and any(window.intersects(s[0], s[1]) for s in segs):
                    yield name, rdata

    # -- persistence ------------------------------------------------------
    def save(self, path: str | Path) -> None:
        """Write every segment as one canonical JSONL line (re-ingestable)."""
        with open(path, "w", encoding="utf-8") as fh:
            for name in sorted(self._by_name):
                for (rrtype, rdata), segs in sorted(self._by_name[name].items()):
                    for first, last, count in sorted(segs):
                        fh.write(json.dumps(
                            {"rrname": name, "rrtype": rrtype, "rdata": rdata,
                             "time_first": first, "time_last": last, "count": count},
                            separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, *paths: str | Path) -> "PdnsStore":
        store = cls()
        for p in paths:
            p = Path(p)
            files = sorted(p.glob("*.jsonl")) if p.is_dir() else [p]
            for f in files:
                store.ingest_file(f)
        if store.rejected:
            log.warning("%d records rejected during load", len(store.rejected))
        return store


def _read_jsonl(path, rejected) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                rejected.append((f"{path}:{lineno}", f"bad json: {exc.msg}"))
