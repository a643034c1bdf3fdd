"""HTTP surface: on-demand prediction, blocklist retrieval, health."""
from __future__ import annotations

import json
import logging
import re
import time
from pathlib import Path

from fastapi import FastAPI, Query, Request
from fastapi.responses import JSONResponse, PlainTextResponse

from .config import Config
from .names import canonical, is_valid_name
from .pipelines import EnsembleModel, Inputs, predict_on_demand

log = logging.getLogger("mantis.service")

_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


class ServiceState:
    """Read-only models and stores shared by all requests."""

    def __init__(self, cfg: Config, ensemble: EnsembleModel | None = None, inputs: Inputs | None = None):
        self.cfg = cfg
        self.ensemble = ensemble
        self.inputs = inputs
        if ensemble is not None:
            for enc in ensemble.encoders:
                enc.gt  # build tensors up front so requests never mutate shared state

    @property
    def loaded(self) -> bool:
        return self.ensemble is not None and self.inputs is not None

    @classmethod
    def from_config(cls, cfg: Config) -> "ServiceState":
        ens_dir = Path(cfg.service.ensemble_dir)
        ensemble = EnsembleModel.load(ens_dir) if (ens_dir / "ensemble.json").exists() else None
        inputs = Inputs.load(cfg.data_dir) if Path(cfg.data_dir).exists() else None
        return cls(cfg, ensemble, inputs)


def _log(event: str, **kw) -> None:
    log.info(json.dumps({"event": event, **kw}, sort_keys=True))


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="mantis", docs_url=None, redoc_url=None)
    app.state.mantis = state

    @app.post("/predict")
    async def predict(request: Request):
        t0 = time.perf_counter()
        try:
            body = await request.json()
        except (json.JSONDecodeError, UnicodeDecodeError):
            return JSONResponse({"error": "body must be JSON"}, status_code=400)
        if not isinstance(body, dict) or not isinstance(body.get("domain"), str):
            return JSONResponse({"error": 'expected {"domain": "<name>"}'}, status_code=400)
        name = canonical(body["domain"])
        if not is_valid_name(name):
            return JSONResponse({"error": f"invalid domain name {body['domain']!r}"}, status_code=400)
        if not state.loaded:
            return JSONResponse({"error": "model not loaded"}, status_code=503)
        day = state.cfg.service.predict_day
        res = predict_on_demand(state.ensemble, name, state.inputs, state.cfg.pipeline, day=day)
        latency = (time.perf_counter() - t0) * 1000.0
        _log("predict", domain=name, verdict=res.verdict, score=res.score, latency_ms=round(latency, 3))
        return {"domain": res.domain, "score": res.score, "verdict": res.verdict,
                "model_id": res.model_id, "latency_ms": latency}

    @app.get("/blocklist")
    def blocklist(date: str = Query(...)):
        if not _DATE.match(date):
            return JSONResponse({"error": "date must be YYYY-MM-DD"}, status_code=400)
        path = Path(state.cfg.service.blocklist_dir) / f"blocklist-{date}.csv"
        if not path.exists():
            return JSONResponse({"error": f"no blocklist for {date}"}, status_code=404)
        return PlainTextResponse(path.read_text(encoding="utf-8"), media_type="text/csv")

    @app.get("/health")
    def health():
        ens = state.ensemble
        return {"status": "ok" if state.loaded else "unloaded",
                "model_id": ens.model_id if ens else None,
                "encoders": ens.encoder_ids if ens else [],
                "threshold": ens.threshold if ens else None}

    return app
