import pytest
from fastapi.testclient import TestClient

from mantis.config import Config, ServiceConfig
from mantis.service import ServiceState, create_app


@pytest.fixture(scope="module")
def client(tiny_ensemble, tmp_path_factory):
    inputs, cfg, ens, _, _ = tiny_ensemble
    bl = tmp_path_factory.mktemp("bl")
    (bl / "blocklist-2022-07-20.csv").write_text("domain,score\nbad.com,0.99\n")
    conf = Config(pipeline=cfg, service=ServiceConfig(blocklist_dir=str(bl)))
    return TestClient(create_app(ServiceState(conf, ens, inputs))), ens


def test_predict(client):
    c, ens = client
    d = sorted(ens.encoders[-1].labeled_domains())[0]
    r = c.post("/predict", json={"domain": d.upper()})
    assert r.status_code == 200
    body = r.json()
    assert body["domain"] == d and body["verdict"] in ("malicious", "benign") and 0 <= body["score"] <= 1
    assert body["model_id"] == ens.model_id and body["latency_ms"] > 0
    r = c.post("/predict", json={"domain": "unseen-name-xyz.example"})
    assert r.json()["verdict"] == "no-visibility" and r.json()["score"] is None


@pytest.mark.parametrize("payload", [b"not json", b"[1]", b'{"domain": 5}', b'{"domain": "bad name"}'])
def test_predict_rejects_bad_input(client, payload):
    c, _ = client
    assert c.post("/predict", content=payload).status_code == 400


def test_unloaded_service():
    c = TestClient(create_app(ServiceState(Config())))
    assert c.post("/predict", json={"domain": "a.com"}).status_code == 503
    assert c.get("/health").json()["status"] == "unloaded"


def test_blocklist_and_health(client):
    c, ens = client
    r = c.get("/blocklist", params={"date": "2022-07-20"})
    assert r.status_code == 200 and r.text.startswith("domain,score")
    assert c.get("/blocklist", params={"date": "2022-07-21"}).status_code == 404
    assert c.get("/blocklist", params={"date": "july"}).status_code == 400
    h = c.get("/health").json()
    assert h["status"] == "ok" and h["encoders"] == ens.encoder_ids
