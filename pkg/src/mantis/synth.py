"""Deterministic synthetic passive-DNS worlds.

A world is a population of long-lived benign sites on hosting providers plus
attacker campaigns that register short-lived domains day after day and park
them on a slowly rotating pool of IPs. The generator writes the same file
formats the rest of the package reads:

    pdns.jsonl            passive-DNS segments
    feed.csv              domain,first_seen,positives,total_scanners
    toplists/<src>/<day>.csv   rank,domain
    asn.csv               prefix,asn
    sinkholes.txt, webhosting.txt, brands.txt, labels.csv, world.json
"""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .names import apex_of, bundled_list, subnet24
from .pdns import DAY, DnsRecord, PdnsStore, TimeWindow, day_start

NAME_STYLES = ("brand_squat", "random_token", "dga_like")
TOTAL_SCANNERS = 90

_SQUAT_WORDS = ("login", "secure", "verify", "account", "support", "update", "wallet",
                "auth", "signin", "billing", "service", "help", "alert", "recovery", "confirm")
_SERVICE_WORDS = ("support", "help", "account", "service", "secure", "login", "update", "billing",
                  "customer", "alert")
_BENIGN_TLDS = (("com", 50), ("net", 8), ("org", 8), ("de", 4), ("co.uk", 4), ("io", 3),
                ("fr", 3), ("nl", 2), ("it", 2), ("ca", 2), ("com.au", 2), ("info", 2),
                ("co", 2), ("me", 1), ("shop", 2), ("xyz", 1), ("online", 1), ("site", 1),
                ("app", 1), ("store", 1))
_REPUTABLE_TLDS = ("edu", "gov", "ac.uk", "gov.uk", "edu.au")
_SQUAT_TLDS = (("com", 25), ("net", 6), ("xyz", 12), ("top", 10), ("online", 8), ("site", 6),
               ("info", 6), ("live", 5), ("icu", 4), ("shop", 5), ("tk", 4), ("ml", 3), ("app", 3), ("club", 3))
_TOKEN_TLDS = (("com", 20), ("xyz", 14), ("top", 14), ("shop", 10), ("online", 10), ("site", 8),
               ("store", 6), ("net", 6), ("buzz", 4), ("icu", 4), ("ga", 2), ("cf", 2))
_DGA_TLDS = (("com", 30), ("net", 20), ("org", 10), ("info", 10), ("ru", 10), ("biz", 10), ("top", 10))


class SpecError(ValueError):
    pass


@dataclass
class CampaignSpec:
    campaign_id: str
    n_domains: int
    ip_pool: list[str]
    daily_new_domains: int
    ip_reuse_prob: float
    name_style: str
    lifetime_days: int
    start_day: int = 0
    domains_per_ip: int = 2
    hosting: str = "dedicated"

    def validate(self) -> None:
        if not 0.0 <= self.ip_reuse_prob <= 1.0:
            raise SpecError(f"{self.campaign_id}: ip_reuse_prob outside [0,1]")
        if self.n_domains < 1:
            raise SpecError(f"{self.campaign_id}: n_domains < 1")
        if self.daily_new_domains < 1 or self.daily_new_domains > self.n_domains:
            raise SpecError(f"{self.campaign_id}: daily_new_domains must be in [1, n_domains]")
        if self.name_style not in NAME_STYLES:
            raise SpecError(f"{self.campaign_id}: unknown name_style {self.name_style!r}")
        if not self.ip_pool:
            raise SpecError(f"{self.campaign_id}: empty ip_pool")
        if self.lifetime_days < 1 or self.domains_per_ip < 1:
            raise SpecError(f"{self.campaign_id}: lifetime_days and domains_per_ip must be >= 1")


@dataclass
class WorldSpec:
    days: int = 30
    n_benign: int = 45000
    n_campaigns: int = 14
    shared_hosting_frac: float = 0.05
    rng_seed: int = 7
    campaigns: list[CampaignSpec] = field(default_factory=list)
    start: str = "2022-07-01"
    n_providers: int = 40
    n_cdns: int = 3
    cdn_frac: float = 0.005
    cdn_popular_frac: float = 0.9
    benign_scan_frac: float = 0.7
    new_benign_frac: float = 0.08
    reputable_frac: float = 0.03
    toplist_size: int = 6000
    toplist_sources: tuple[str, ...] = ("popular_a", "popular_b")
    feed_delay_mean: float = 3.0
    sinkhole_prob: float = 0.3
    compromised_per_day: int = 2
    webhosting_malicious_per_day: int = 3
    shared_campaign_frac: float = 0.2
    ip_reuse_prob: float = 0.8
    daily_new_range: tuple[int, int] = (3, 8)
    brand_benign_frac: float = 0.03
    keyword_benign_frac: float = 0.06  # benign sites whose name carries a service keyword
    stealth_frac: float = 0.15  # campaign sites with aged, busy, plainly named domains

    def validate(self) -> None:
        for name in ("shared_hosting_frac", "new_benign_frac", "reputable_frac", "sinkhole_prob",
                     "shared_campaign_frac", "ip_reuse_prob", "brand_benign_frac",
                     "keyword_benign_frac", "stealth_frac",
                     "cdn_frac", "cdn_popular_frac", "benign_scan_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SpecError(f"{name} outside [0,1]")
        if self.days < 1 or self.n_benign < 0 or self.n_campaigns < 0:
            raise SpecError("days >= 1, n_benign >= 0, n_campaigns >= 0 required")
        if self.campaigns and len(self.campaigns) != self.n_campaigns:
            raise SpecError("len(campaigns) must equal n_campaigns when campaigns are given")
        seen: dict[str, str] = {}
        for c in self.campaigns:
            c.validate()
            for ip in c.ip_pool:
                if seen.setdefault(ip, c.campaign_id) != c.campaign_id and c.hosting == "dedicated":
                    raise SpecError(f"ip {ip} shared between dedicated campaigns")

    @property
    def start_date(self) -> dt.date:
        return dt.date.fromisoformat(self.start)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)


@dataclass
class Corpus:
    root: Path

    @property
    def pdns(self) -> Path:
        return self.root / "pdns.jsonl"

    @property
    def feed(self) -> Path:
        return self.root / "feed.csv"

    @property
    def toplists(self) -> Path:
        return self.root / "toplists"

    @property
    def labels(self) -> Path:
        return self.root / "labels.csv"

    @property
    def asn(self) -> Path:
        return self.root / "asn.csv"

    @property
    def sinkholes(self) -> Path:
        return self.root / "sinkholes.txt"

    @property
    def webhosting(self) -> Path:
        return self.root / "webhosting.txt"

    @property
    def brands(self) -> Path:
        return self.root / "brands.txt"

    @property
    def spec(self) -> WorldSpec:
        raw = json.loads((self.root / "world.json").read_text())
        raw["campaigns"] = [CampaignSpec(**c) for c in raw["campaigns"]]
        raw["toplist_sources"] = tuple(raw["toplist_sources"])
        raw["daily_new_range"] = tuple(raw["daily_new_range"])
        return WorldSpec(**raw)

    def read_labels(self) -> dict[str, str]:
        out = {}
        with open(self.labels, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                name, label = line.rstrip("\n").split(",")
                out[name] = label
        return out


# ---------------------------------------------------------------------------
# address space

class _Allocator:
    """Hands out consecutive public-looking /24 blocks and ASNs."""

    def __init__(self):
        self._block = 0
        self._asn = 64500
        self.prefixes: list[tuple[str, str]] = []

    def asn(self) -> str:
        self._asn += 1
        return f"AS{self._asn}"

    def subnet(self, asn: str) -> list[str]:
        b = self._block
        self._block += 1
        a, rest = divmod(b, 256 * 4)
        first = 23 + a * 7 % 170
        second, third = divmod(rest, 256)
        second = 16 + second * 37 % 200
        base = f"{first}.{second}.{third}"
        self.prefixes.append((f"{base}.0/24", asn))
        return [f"{base}.{h}" for h in range(2, 251)]


def _weighted(rng, table):
    items = [t[0] for t in table]
    w = np.array([t[1] for t in table], dtype=float)
    return items[rng.choice(len(items), p=w / w.sum())]


# ---------------------------------------------------------------------------
# names

class _Namer:
    def __init__(self, rng):
        self.rng = rng
        self.words = bundled_list("words.txt")
        self.brands = bundled_list("brands.txt")
        self.used: set[str] = set()

    def _unique(self, make):
        for _ in range(200):
            name = make()
            if name not in self.used:
                self.used.add(name)
                return name
        raise RuntimeError("name space exhausted")

    def _word(self):
        return self.words[self.rng.integers(len(self.words))]

    def benign(self, tld=None, brand=False, keyword=False):
        rng = self.rng

        def make():
            parts = [self._word()]
            if rng.random() < 0.7:
                parts.append(self._word())
            if brand:
                parts.insert(rng.integers(len(parts) + 1), self.brands[rng.integers(len(self.brands))])
            if keyword:
                parts.insert(rng.integers(len(parts) + 1), _SERVICE_WORDS[rng.integers(len(_SERVICE_WORDS))])
            sep = "-" if rng.random() < 0.25 else ""
            label = sep.join(parts)
            if rng.random() < 0.06:
                label += str(rng.integers(1, 99))
            return f"{label}.{tld or _weighted(rng, _BENIGN_TLDS)}"
        return self._unique(make)

    def squat(self):
        rng = self.rng

        def make():
            brand = self.brands[rng.integers(len(self.brands))]
            if rng.random() < 0.3:
                brand = _homograph(brand, rng)
            kw = _SQUAT_WORDS[rng.integers(len(_SQUAT_WORDS))]
            parts = [brand, kw] if rng.random() < 0.6 else [kw, brand]
            if rng.random() < 0.35:
                parts.append(_SQUAT_WORDS[rng.integers(len(_SQUAT_WORDS))])
            sep = "-" if rng.random() < 0.7 else ""
            label = sep.join(parts)
            if rng.random() < 0.3:
                label += str(rng.integers(1, 999))
            return f"{label}.{_weighted(rng, _SQUAT_TLDS)}"
        return self._unique(make)

    def token(self):
        rng = self.rng

        def make():
            parts = [self._word(), self._word()]
            if rng.random() < 0.5:
                parts.append(self._word())
            sep = "-" if rng.random() < 0.6 else ""
            label = sep.join(parts)
            if rng.random() < 0.6:
                label += str(rng.integers(1, 999))
            return f"{label}.{_weighted(rng, _TOKEN_TLDS)}"
        return self._unique(make)

    def dga(self):
        rng = self.rng
        consonants = "bcdfghjklmnpqrstvwxz"

        def make():
            n = int(rng.integers(10, 17))
            chars = []
            for _ in range(n):
                r = rng.random()
                if r < 0.12:
                    chars.append("aeiou"[rng.integers(5)])
                elif r < 0.25:
                    chars.append(str(rng.integers(10)))
                else:
                    chars.append(consonants[rng.integers(len(consonants))])
            return "".join(chars) + "." + _weighted(rng, _DGA_TLDS)
        return self._unique(make)

    def for_style(self, style):
        return {"brand_squat": self.squat, "random_token": self.token, "dga_like": self.dga}[style]()


def _homograph(brand, rng):
    swaps = {"l": "1", "o": "0", "e": "3", "a": "4", "i": "1", "s": "5"}
    idx = [i for i, ch in enumerate(brand) if ch in swaps]
    if not idx:
        return brand + brand[-1]
    i = idx[rng.integers(len(idx))]
    return brand[:i] + swaps[brand[i]] + brand[i + 1:]


# ---------------------------------------------------------------------------
# generation

class _World:
    def __init__(self, spec: WorldSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.rng_seed)
        self.namer = _Namer(self.rng)
        self.alloc = _Allocator()
        self.t0 = day_start(spec.start_date)
        self.t_end = self.t0 + spec.days * DAY
        self.records: list[tuple] = []
        self.labels: dict[str, str] = {}
        self.feed: dict[str, tuple[int, int]] = {}
        self.site_popularity: dict[str, float] = {}
        self.mal_hosting: dict[int, set[str]] = defaultdict(set)

    # -- records ----------------------------------------------------------
    def rec(self, name, rrtype, rdata, first, last, count):
        self.records.append((name, rrtype, rdata, int(first), int(last), max(1, int(count))))

    def a_weekly(self, name, ip, first, last, rate):
        """A-record activity split into calendar-week segments from the world start."""
        rng = self.rng
        if first < self.t0:
            pre_last = min(last, self.t0 - 1)
            days = max(1.0, (pre_last - first) / DAY)
            self.rec(name, "A", ip, first, pre_last, rng.poisson(rate * days) + 1)
        cursor = max(first, self.t0)
        while cursor <= last and cursor < self.t_end:
            week = (cursor - self.t0) // (7 * DAY)
            seg_end = min(last, self.t0 + (week + 1) * 7 * DAY - 1, self.t_end - 1)
            days = max(1.0, (seg_end - cursor) / DAY)
            self.rec(name, "A", ip, cursor, seg_end, rng.poisson(rate * days) + 1)
            cursor = seg_end + 1

    def a_daily(self, name, ip, first_day, last_day, rate):
        rng = self.rng
        for d in range(first_day, last_day + 1):
            if d >= self.spec.days:
                break
            start = self.t0 + d * DAY
            off = int(rng.integers(0, 6 * 3600)) if d == first_day else 0
            self.rec(name, "A", ip, start + off, start + DAY - 1 - int(rng.integers(0, 3600)),
                     rng.poisson(rate) + 1)

    # -- infrastructure ---------------------------------------------------
    def build_providers(self):
        spec, rng = self.spec, self.rng
        self.providers = []
        for p in range(spec.n_providers):
            asn = self.alloc.asn()
            n_subnets = int(rng.integers(1, 5))
            ips = []
            for _ in range(n_subnets):
                ips.extend(self.alloc.subnet(asn)[: int(rng.integers(10, 60))])
            ns = f"ns1.{self.namer.benign(tld='net')}"
            self.providers.append({"asn": asn, "ips": ips, "ns": ns,
                                   "weight": float(rng.pareto(1.2) + 0.2)})
        # per-IP load is heavy-tailed: a few IPs carry hundreds of sites
        self.ip_weights = {ip: float(rng.pareto(0.9) + 0.05) for p in self.providers for ip in p["ips"]}
        self.cdns = []
        for _ in range(spec.n_cdns):
            asn = self.alloc.asn()
            self.cdns.append({"asn": asn, "ips": self.alloc.subnet(asn)[:12],
                              "ns": f"ns1.{self.namer.benign(tld='net')}"})
        shady_asns = [self.alloc.asn() for _ in range(4)]
        self.shady_asns = shady_asns
        sink_asn = self.alloc.asn()
        self.sinkholes = self.alloc.subnet(sink_asn)[:4]
        self.registrar_ns = ["dns1.registrar-servers.com", "dns2.registrar-servers.com"]
        self.free_ns = ["ns1.freedns-host.net", "ns2.freedns-host.net"]

    def build_campaigns(self) -> list[CampaignSpec]:
        spec, rng = self.spec, self.rng
        if spec.campaigns:
            return spec.campaigns
        out = []
        # shared-hosting campaigns favour busy provider IPs and CDN edges
        busy = [ip for p in self.providers for ip in p["ips"]]
        bw = np.array([self.ip_weights[ip] for ip in busy])
        order = rng.choice(len(busy), size=len(busy), replace=False, p=bw / bw.sum())
        shared_pool = [busy[i] for i in order]
        cdn_pool = [ip for cd in self.cdns for ip in cd["ips"]]
        rng.shuffle(cdn_pool)
        lo, hi = spec.daily_new_range
        n_shared = int(round(spec.shared_campaign_frac * spec.n_campaigns))
        # spread the shared-hosting campaigns evenly over the campaign list
        shared_ids = {int(k * spec.n_campaigns / n_shared) + 1 for k in range(n_shared)} if n_shared else set()
        for c in range(spec.n_campaigns):
            style = NAME_STYLES[0] if c % 7 in (0, 2, 4, 5) else NAME_STYLES[1] if c % 7 in (1, 3) else NAME_STYLES[2]
            shared = style != "dga_like" and c in shared_ids
            daily = int(rng.integers(lo, hi + 1))
            if shared:
                pool, shared_pool = shared_pool[:20], shared_pool[20:]
                if cdn_pool:
                    pool = cdn_pool[:5] + pool
                    cdn_pool = cdn_pool[5:] + cdn_pool[:5]
            else:
                shady = self.shady_asns[c % len(self.shady_asns)]
                pool = []
                for _ in range(2):
                    pool.extend(self.alloc.subnet(shady))
                rng.shuffle(pool)
            out.append(CampaignSpec(
                campaign_id=f"c{c:02d}", n_domains=daily * spec.days, ip_pool=pool,
                daily_new_domains=daily, ip_reuse_prob=spec.ip_reuse_prob, name_style=style,
                lifetime_days=int(rng.integers(2, 7)), start_day=0,
                domains_per_ip=daily if shared else int(rng.integers(2, 4)),
                hosting="shared" if shared else "dedicated"))
        return out

    # -- benign -----------------------------------------------------------
    def build_benign(self):
        spec, rng = self.spec, self.rng
        weights = np.array([p["weight"] for p in self.providers])
        weights /= weights.sum()
        ip_weights = self.ip_weights
        self.benign_sites = []
        n_reputable = int(round(spec.n_benign * spec.reputable_frac))
        for i in range(spec.n_benign):
            if i < n_reputable:
                apex = self.namer.benign(tld=_REPUTABLE_TLDS[i % len(_REPUTABLE_TLDS)])
            else:
                apex = self.namer.benign(brand=rng.random() < spec.brand_benign_frac,
                                         keyword=rng.random() < spec.keyword_benign_frac)
            popularity = float(rng.lognormal(2.0, 1.6))
            new = rng.random() < spec.new_benign_frac
            if new:
                first = self.t0 + int(rng.integers(0, spec.days * DAY))
                popularity = float(rng.lognormal(0.6, 0.9))
            else:
                first = self.t0 - int(rng.integers(30, 2000)) * DAY
            cdn_p = spec.cdn_popular_frac if popularity > 30 else 0.3 if i < n_reputable else spec.cdn_frac
            if self.cdns and rng.random() < cdn_p:
                prov = self.cdns[int(rng.integers(len(self.cdns)))]
                ips = list(rng.choice(prov["ips"], size=int(rng.integers(1, 3)), replace=False))
                self.benign_sites.append({"apex": apex, "ips": ips, "first": first,
                                          "pop": popularity, "prov": prov})
                continue
            prov = self.providers[rng.choice(len(self.providers), p=weights)]
            n_ips = 1 if popularity < 60 or rng.random() < 0.5 else int(rng.integers(2, 4))
            pw = np.array([ip_weights[ip] for ip in prov["ips"]])
            if popularity > 60:
                pw = 1.0 / pw
            ips = list(rng.choice(prov["ips"], size=min(n_ips, len(prov["ips"])), replace=False, p=pw / pw.sum()))
            self.benign_sites.append({"apex": apex, "ips": ips, "first": first,
                                      "pop": popularity, "prov": prov})
        # a slice of small benign sites lives on campaign infrastructure
        self.site_popularity = {s["apex"]: s["pop"] for s in self.benign_sites}

    def cohost_benign(self, campaigns):
        spec, rng = self.spec, self.rng
        candidates = [s for s in self.benign_sites[int(round(spec.n_benign * spec.reputable_frac)):]
                      if s["pop"] < 40]
        n = min(len(candidates), int(round(spec.n_benign * spec.shared_hosting_frac)))
        if not n or not campaigns:
            return
        picks = rng.choice(len(candidates), size=n, replace=False)
        dedicated = [c for c in campaigns if c.hosting == "dedicated"]
        for j, k in enumerate(picks):
            site = candidates[k]
            pool = (dedicated or campaigns)[j % len(dedicated or campaigns)].ip_pool
            # co-hosts cluster on the first part of the pool, which the campaign reaches early
            site["ips"] = [pool[int(rng.integers(0, min(len(pool), 40)))]]
            site["prov"] = None

    def emit_benign(self):
        rng = self.rng
        for s in self.benign_sites:
            apex = s["apex"]
            names = [apex]
            if rng.random() < 0.6:
                names.append("www." + apex)
            if rng.random() < 0.35:
                subs = ("mail.", "shop.", "blog.", "app.", "api.", "cdn.", "static.", "m.")
                for k in rng.choice(len(subs), size=int(rng.integers(1, 4)), replace=False):
                    names.append(subs[k] + apex)
            s["names"] = names
            last = self.t_end - 1
            for name in names:
                rate = s["pop"] * (1.0 if name == apex else 0.4)
                for ip in s["ips"]:
                    self.a_weekly(name, ip, s["first"], last, rate / len(s["ips"]))
                self.labels[name] = "benign"
            r = rng.random()
            if r < 0.25:
                ns = [f"ns1.{apex}", f"ns2.{apex}"]
            elif r < 0.45 or s["prov"] is None:
                ns = self.registrar_ns
            else:
                ns = [s["prov"]["ns"], s["prov"]["ns"].replace("ns1.", "ns2.", 1)]
            for n in ns:
                self.rec(apex, "NS", n, s["first"], last, rng.poisson(3) + 1)
            self.rec(apex, "SOA", ns[0], s["first"], last, 1)
            if rng.random() < 0.5:
                self.rec(apex, "MX", f"mx.{apex}" if rng.random() < 0.5 else "mx.mailhost-provider.com",
                         s["first"], last, rng.poisson(2) + 1)
        # a sample of benign names is scanned and comes back clean
        for s in self.benign_sites:
            for name in s["names"]:
                if rng.random() < self.spec.benign_scan_frac:
                    self.feed[name] = (int(max(s["first"], self.t0) + rng.integers(0, DAY)), 0)

    # -- malicious --------------------------------------------------------
    def emit_campaign(self, c: CampaignSpec):
        spec, rng = self.spec, self.rng
        used_by_day: dict[int, list[str]] = {}
        pool_iter = iter(c.ip_pool)
        fresh_used: list[str] = []
        made = 0
        own_ns = [f"ns1.{self.namer.token()}", None]
        own_ns[1] = own_ns[0].replace("ns1.", "ns2.", 1)
        ns_mode = rng.random()
        for d in range(c.start_day, spec.days):
            if made >= c.n_domains:
                break
            n_new = min(c.daily_new_domains, c.n_domains - made)
            slots = max(1, math.ceil(n_new / c.domains_per_ip))
            recent = sorted({ip for dd in range(d - 7, d) for ip in used_by_day.get(dd, ())})
            today: list[str] = []
            for _ in range(slots):
                avail = [ip for ip in recent if ip not in today]
                if avail and rng.random() < c.ip_reuse_prob:
                    today.append(avail[int(rng.integers(len(avail)))])
                    continue
                ip = next(pool_iter, None)
                if ip is None:
                    # pool exhausted: fall back to the least recently used address
                    ip = fresh_used[(d * 7 + len(today)) % len(fresh_used)]
                else:
                    fresh_used.append(ip)
                if ip not in today:
                    today.append(ip)
            used_by_day[d] = today
            for k in range(n_new):
                stealth = rng.random() < spec.stealth_frac
                apex = self.namer.benign() if stealth else self.namer.for_style(c.name_style)
                ips = [today[k % len(today)]]
                if len(today) > 1 and rng.random() < 0.15:
                    ips.append(today[(k + 1) % len(today)])
                life = max(1, int(rng.integers(max(1, c.lifetime_days - 2), c.lifetime_days + 3)))
                if stealth:
                    self.emit_stealth_site(apex, ips, d, max(life, int(rng.integers(14, 31))))
                else:
                    self.emit_malicious_site(apex, ips, d, life, c, own_ns, ns_mode)
                made += 1

    def emit_stealth_site(self, apex, ips, day, life):
        """An aged, busy, plainly named domain repointed onto campaign infrastructure."""
        rng, spec = self.rng, self.spec
        names = [apex] + (["www." + apex] if rng.random() < 0.6 else [])
        first = self.t0 + (day - int(rng.integers(10, 120))) * DAY + int(rng.integers(0, DAY))
        moved = self.t0 + day * DAY + int(rng.integers(0, 6 * 3600))
        last_day = min(day + life - 1, spec.days - 1)
        last = self.t0 + (last_day + 1) * DAY - 1
        rate = float(rng.lognormal(2.0, 1.6))
        prov = self.providers[int(rng.integers(len(self.providers)))]
        old_ip = prov["ips"][int(rng.integers(len(prov["ips"])))]
        for name in names:
            self.a_weekly(name, old_ip, first, moved - 1, rate)
            for ip in ips:
                self.a_weekly(name, ip, moved, last, rate / len(ips))
                self.mal_hosting[day].add(ip)
            self.labels[name] = "malicious"
        ns = [f"ns1.{apex}", f"ns2.{apex}"] if rng.random() < 0.25 else self.registrar_ns
        for n in ns:
            self.rec(apex, "NS", n, first, last, rng.poisson(3) + 1)
        self.rec(apex, "SOA", ns[0], first, last, 1)
        delay = 1 + int(rng.geometric(1.0 / max(1.0, spec.feed_delay_mean)))
        self.feed[apex] = (self.t0 + (day + delay) * DAY + int(rng.integers(0, DAY)), _positives(rng))

    def emit_malicious_site(self, apex, ips, day, life, c, own_ns, ns_mode):
        rng, spec = self.rng, self.spec
        names = [apex]
        r = rng.random()
        if r < 0.4:
            names.append(("login.", "secure.", "account.", "verify.", "my.")[rng.integers(5)] + apex)
        elif r < 0.55:
            names.append("www." + apex)
        last_day = min(day + life - 1, spec.days - 1)
        rate = float(rng.lognormal(1.0, 0.8))
        for name in names:
            for ip in ips:
                self.a_daily(name, ip, day, last_day, rate / len(ips))
                self.mal_hosting[day].add(ip)
            self.labels[name] = "malicious"
        first = self.t0 + day * DAY
        last = self.t0 + (last_day + 1) * DAY - 1
        ns = own_ns if ns_mode < 0.35 else self.registrar_ns if ns_mode < 0.8 else self.free_ns
        for n in ns:
            self.rec(apex, "NS", n, first, last, rng.poisson(2) + 1)
        self.rec(apex, "SOA", ns[0], first, last, 1)
        if last_day + 1 < spec.days and rng.random() < spec.sinkhole_prob:
            sink = self.sinkholes[int(rng.integers(len(self.sinkholes)))]
            self.rec(apex, "A", sink, first + life * DAY, self.t_end - 1, rng.poisson(3) + 1)
        delay = 1 + int(rng.geometric(1.0 / max(1.0, spec.feed_delay_mean)))
        landing = names[-1]
        seen = first + delay * DAY + int(rng.integers(0, DAY))
        self.feed[landing] = (seen, _positives(rng))
        if landing != apex and rng.random() < 0.6:
            self.feed[apex] = (seen + int(rng.integers(0, DAY)), _positives(rng))

    # -- feed noise: compromised popular sites, webhosting abuse ------------
    def emit_noise(self):
        spec, rng = self.spec, self.rng
        popular = sorted(self.benign_sites, key=lambda s: -s["pop"])[: spec.toplist_size]
        self.platform_ips = {}
        webhosting = bundled_list("webhosting.txt")[:6]
        prov_asn = self.alloc.asn()
        for plat in webhosting:
            ips = self.alloc.subnet(prov_asn)[:3]
            self.platform_ips[plat] = ips
            self.labels[plat] = "benign"
            self.a_weekly(plat, ips[0], self.t0 - 900 * DAY, self.t_end - 1, 500.0)
            for _ in range(max(3, spec.n_benign // 2000)):
                user = f"{self.namer.benign().split('.')[0]}.{plat}"
                self.a_weekly(user, ips[int(rng.integers(len(ips)))],
                              self.t0 - int(rng.integers(10, 500)) * DAY, self.t_end - 1, 5.0)
                self.labels[user] = "benign"
        # background abuse (compromised sites, free-hosting phish) only exists alongside campaigns
        for d in range(spec.days if spec.n_campaigns else 0):
            base = self.t0 + d * DAY
            for _ in range(spec.compromised_per_day if popular else 0):
                site = popular[int(rng.integers(len(popular)))]
                if site["apex"] not in self.feed or self.feed[site["apex"]][1] == 0:
                    self.feed[site["apex"]] = (base + int(rng.integers(0, DAY)), _positives(rng))
            for _ in range(spec.webhosting_malicious_per_day):
                plat = webhosting[int(rng.integers(len(webhosting)))]
                name = f"{self.namer.squat().split('.')[0]}.{plat}"
                ip = self.platform_ips[plat][int(rng.integers(3))]
                self.a_daily(name, ip, d, min(d + 2, spec.days - 1), 2.0)
                self.labels[name] = "malicious"
                if d + 1 < spec.days:
                    self.feed[name] = (base + DAY + int(rng.integers(0, DAY)), _positives(rng))

    # -- top lists --------------------------------------------------------
    def toplists(self) -> dict[str, dict[dt.date, list[str]]]:
        spec, rng = self.spec, self.rng
        ranked = sorted((s for s in self.benign_sites if s["first"] < self.t0),
                        key=lambda s: -s["pop"])
        core = [s["apex"] for s in ranked[: spec.toplist_size]]
        tail = [s["apex"] for s in ranked[spec.toplist_size: spec.toplist_size * 2]]
        out = {}
        for src in spec.toplist_sources:
            lists = {}
            # each source drops a stable slice of the core and rotates a few tail entries daily
            keep = [a for a in core if rng.random() < 0.9]
            for d in range(-30, spec.days):
                day = spec.start_date + dt.timedelta(days=d)
                daily = [a for a in keep if rng.random() < 0.995]
                if tail:
                    daily += [tail[i] for i in rng.choice(len(tail), size=min(len(tail), len(keep) // 10), replace=False)]
                lists[day] = daily
            out[src] = lists
        return out


def _positives(rng) -> int:
    return int(min(TOTAL_SCANNERS, 5 + rng.poisson(6)))


def generate(spec: WorldSpec, out_dir: str | Path) -> Corpus:
    """Write a deterministic corpus for ``spec`` into ``out_dir``."""
    spec.validate()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    w = _World(spec)
    w.build_providers()
    campaigns = w.build_campaigns()
    for c in campaigns:
        c.validate()
    w.build_benign()
    w.cohost_benign(campaigns)
    w.emit_benign()
    for c in campaigns:
        w.emit_campaign(c)
    w.emit_noise()
    if not campaigns:
        w.feed.clear()  # nothing malicious was ever submitted, so there is nothing to report
    tops = w.toplists()
    resolved = dataclasses.replace(spec, campaigns=campaigns)

    with open(out / "pdns.jsonl", "w", encoding="utf-8") as fh:
        for name, rrtype, rdata, first, last, count in sorted(w.records):
            fh.write(json.dumps({"rrname": name, "rrtype": rrtype, "rdata": rdata,
                                 "time_first": first, "time_last": last, "count": count},
                                separators=(",", ":")) + "\n")
    with open(out / "feed.csv", "w", encoding="utf-8") as fh:
        for name in sorted(w.feed):
            seen, pos = w.feed[name]
            fh.write(f"{name},{seen},{pos},{TOTAL_SCANNERS}\n")
    with open(out / "labels.csv", "w", encoding="utf-8") as fh:
        fh.write("domain,label\n")
        for name in sorted(w.labels):
            fh.write(f"{name},{w.labels[name]}\n")
    with open(out / "asn.csv", "w", encoding="utf-8") as fh:
        fh.write("prefix,asn\n")
        for prefix, asn in w.alloc.prefixes:
            fh.write(f"{prefix},{asn}\n")
    (out / "sinkholes.txt").write_text("\n".join(w.sinkholes) + "\n")
    (out / "webhosting.txt").write_text("\n".join(bundled_list("webhosting.txt")) + "\n")
    (out / "brands.txt").write_text("\n".join(bundled_list("brands.txt")) + "\n")
    for src, lists in tops.items():
        d = out / "toplists" / src
        d.mkdir(parents=True, exist_ok=True)
        for day, names in lists.items():
            with open(d / f"{day.isoformat()}.csv", "w", encoding="utf-8") as fh:
                fh.write("rank,domain\n")
                for rank, name in enumerate(names, 1):
                    fh.write(f"{rank},{name}\n")
    (out / "world.json").write_text(resolved.to_json())
    return Corpus(out)


def measure_reuse(store: PdnsStore, labels: dict[str, str], day: dt.date,
                  exclude_ips=()) -> float:
    """Share of IPs newly hosting a malicious name on ``day`` that already hosted one in the prior 7 days.

    ``exclude_ips`` (sinkholes) are not hosting and are left out of both sides.
    """
    exclude = set(exclude_ips)
    day_win = TimeWindow.for_day(day)
    prior = TimeWindow(day_win.start - 7 * DAY, day_win.start)
    malicious = [n for n, lab in labels.items() if lab == "malicious" and n in store]
    earliest = min((r.time_first for n in malicious for r in _a_records(store, n)), default=None)
    if earliest is None or earliest > prior.start:
        raise ValueError("need at least 7 days of history before the measured day")
    today, before = set(), set()
    for name in malicious:
        for rec in _a_records(store, name):
            if day_win.start <= rec.time_first < day_win.end and rec.rdata not in exclude:
                today.add(rec.rdata)
        for ip, _last, _count in store.resolutions(name, prior):
            if ip not in exclude:
                before.add(ip)
    if not today:
        return 0.0
    return len(today & before) / len(today)


def _a_records(store: PdnsStore, name: str):
    for (rrtype, rdata), segs in store._by_name.get(name, {}).items():
        if rrtype == "A":
            yield DnsRecord(name, rrtype, rdata, min(s[0] for s in segs),
                            max(s[1] for s in segs), sum(s[2] for s in segs))


def global_toxicity(names, feed_positives: dict[str, int], threshold: int = 5) -> float:
    names = list(names)
    if not names:
        return 0.0
    return sum(feed_positives.get(n, 0) >= threshold for n in names) / len(names)


def subnet_of(ip: str) -> str:
    return subnet24(ip)


def apex(name: str) -> str:
    return apex_of(name)
