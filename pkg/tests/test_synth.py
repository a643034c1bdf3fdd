import datetime as dt
import json

import numpy as np
import pytest

from mantis.intel import Feed
from mantis.pdns import PdnsStore, TimeWindow
from mantis.synth import CampaignSpec, SpecError, WorldSpec, generate, global_toxicity, measure_reuse

from conftest import tiny_spec


def test_generation_is_deterministic(tmp_path, tiny_world):
    generate(tiny_spec(), tmp_path / "again")
    for name in ("pdns.jsonl", "feed.csv", "labels.csv", "asn.csv"):
        assert (tmp_path / "again" / name).read_bytes() == (tiny_world / name).read_bytes()


def test_world_files_parse(tiny_world, tiny_inputs):
    labels = {}
    for line in (tiny_world / "labels.csv").read_text().splitlines()[1:]:
        d, lab = line.split(",")
        labels[d] = lab
    assert set(labels.values()) == {"benign", "malicious"}
    assert tiny_inputs.store.rejected == []
    assert len(tiny_inputs.feed) > 0 and tiny_inputs.toplists.sources
    sinks = set(tiny_inputs.sinkholes)
    everything = TimeWindow(0, 2**40)
    sunk = {n for n in tiny_inputs.store.names()
            if any(ip in sinks for ip, _, _ in tiny_inputs.store.resolutions(n, everything))}
    assert all(labels.get(n) == "malicious" for n in sunk)


def test_campaigns_reuse_infrastructure(tiny_world, tiny_inputs):
    labels = dict(line.split(",") for line in (tiny_world / "labels.csv").read_text().splitlines()[1:])
    share = measure_reuse(tiny_inputs.store, labels, tiny_inputs.last_day(), tiny_inputs.sinkholes)
    assert 0.0 < share <= 1.0


def test_spec_validation():
    with pytest.raises(SpecError):
        WorldSpec(stealth_frac=1.5).validate()
    with pytest.raises(SpecError):
        WorldSpec(days=0).validate()
    with pytest.raises(SpecError):
        CampaignSpec("c0", 10, ["1.1.1.1"], 3, 1.5, "brand_squat", 5).validate()
    with pytest.raises(SpecError):
        CampaignSpec("c0", 10, [], 3, 0.5, "brand_squat", 5).validate()
    with pytest.raises(SpecError):
        CampaignSpec("c0", 4, ["1.1.1.1"], 9, 0.5, "brand_squat", 5).validate()
    with pytest.raises(SpecError):
        WorldSpec(n_campaigns=2, campaigns=[CampaignSpec("c0", 10, ["1.1.1.1"], 3, 0.5, "brand_squat", 5)]).validate()


def _load(root):
    labels = dict(line.split(",") for line in (root / "labels.csv").read_text().splitlines()[1:])
    return PdnsStore.load(root / "pdns.jsonl"), labels


def _sinks(root):
    return (root / "sinkholes.txt").read_text().split()


def test_no_campaigns_means_no_malice(tmp_path):
    generate(WorldSpec(n_benign=1500, n_campaigns=0, days=10), tmp_path)
    _, labels = _load(tmp_path)
    assert (tmp_path / "feed.csv").read_text() == ""
    assert set(labels.values()) == {"benign"}


SMALL = dict(n_benign=1500, days=20, webhosting_malicious_per_day=0)


def test_static_ip_campaign_is_fully_reused(tmp_path):
    camp = CampaignSpec("c00", 60, ["203.0.113.7"], 3, 0.8, "brand_squat", 3)
    generate(WorldSpec(n_campaigns=1, campaigns=[camp], sinkhole_prob=0.0, **SMALL), tmp_path)
    store, labels = _load(tmp_path)
    start = dt.date.fromisoformat(WorldSpec().start)
    for k in (8, 12, 16):
        assert measure_reuse(store, labels, start + dt.timedelta(days=k)) == 1.0


def test_fresh_ips_every_day_are_never_reused(tmp_path):
    generate(WorldSpec(ip_reuse_prob=0.0, shared_campaign_frac=0.0, **SMALL), tmp_path)
    store, labels = _load(tmp_path)
    start = dt.date.fromisoformat(WorldSpec().start)
    for k in (8, 12, 16):
        assert measure_reuse(store, labels, start + dt.timedelta(days=k), _sinks(tmp_path)) == 0.0


def test_reuse_needs_history(tmp_path):
    generate(WorldSpec(stealth_frac=0.0, **SMALL), tmp_path)
    store, labels = _load(tmp_path)
    start = dt.date.fromisoformat(WorldSpec().start)
    with pytest.raises(ValueError):
        measure_reuse(store, labels, start + dt.timedelta(days=3))
    assert 0.0 < measure_reuse(store, labels, start + dt.timedelta(days=9)) <= 1.0


# ---------------------------------------------------------------------------
# full-size worlds

@pytest.fixture(scope="module")
def default_world(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth_default")
    generate(WorldSpec(), root)
    return root


@pytest.mark.slow
def test_default_world_reuse_near_target(default_world):
    store, labels = _load(default_world)
    end = dt.date.fromisoformat(WorldSpec().start) + dt.timedelta(days=WorldSpec().days - 1)
    shares = [measure_reuse(store, labels, end - dt.timedelta(days=k), _sinks(default_world)) for k in range(14)]
    assert 0.75 <= float(np.mean(shares)) <= 0.85


def _toxicity(root):
    names = {json.loads(line)["rrname"] for line in open(root / "pdns.jsonl", encoding="utf-8")}
    return global_toxicity(names, Feed.load(root / "feed.csv").positives_map())


@pytest.mark.slow
def test_sparse_world_toxicity_and_seed_neighbourhoods(tmp_path):
    spec = WorldSpec(n_campaigns=1, webhosting_malicious_per_day=0, compromised_per_day=0, shared_hosting_frac=0.004)
    generate(spec, tmp_path)
    tox = _toxicity(tmp_path)
    assert 0.001 <= tox <= 0.003
    # names sharing an address with a flagged name are far more toxic than the world at large
    store, labels = _load(tmp_path)
    pos = Feed.load(tmp_path / "feed.csv").positives_map()
    everything = TimeWindow(0, 2**40)
    flagged = [n for n, p in pos.items() if p >= 5 and n in store]
    ips = {ip for n in flagged for ip, _, _ in store.resolutions(n, everything)} - set(_sinks(tmp_path))
    near = {n for n in store.names() if any(ip in ips for ip, _, _ in store.resolutions(n, everything))}
    assert global_toxicity(near, pos) >= 10 * tox
