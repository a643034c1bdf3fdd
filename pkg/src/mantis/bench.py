"""End-to-end synthetic benchmark: blocklist quality on next-day labels plus the baseline ordering."""
from __future__ import annotations

import dataclasses
import datetime as dt
import json
import logging
import time
from pathlib import Path

import numpy as np

from .baselines import FEATURE_SETS, bp_baseline, feature_tree_baseline
from .pdns import parse_day
from .pipelines import Inputs, PipelineConfig, daily_blocklist, next_day_evaluation
from .synth import WorldSpec, generate

log = logging.getLogger(__name__)

AUC_MIN = 0.95
RECALL_MIN = 0.85
RUNTIME_MAX_S = 600.0
GAP_MIN = 0.02
BP_FPR_RATIO = 5.0


def bench_config() -> PipelineConfig:
    """Default pipeline with 20% of the benign labels withheld as next-day negatives."""
    return dataclasses.replace(PipelineConfig(), test_frac=0.2)


def ensure_world(root: Path, spec: WorldSpec | None = None) -> Path:
    if not (root / "pdns.jsonl").exists():
        log.info("generating default world at %s", root)
        generate(spec or WorldSpec(), root)
    return root


def gnn_fold_scores(result) -> dict[str, float]:
    keys = ("precision", "recall", "f1", "accuracy", "fpr", "auc")
    return {k: float(np.mean([getattr(f, k) for f in result.folds])) for k in keys}


def ordering_checks(rows: dict[str, dict[str, float]]) -> dict[str, bool]:
    g, rh, rl, bp = (rows[k] for k in ("gnn", "rf_lexical+hosting", "rf_lexical", "bp"))
    return {
        "gnn>rf_lex+host": g["accuracy"] - rh["accuracy"] >= GAP_MIN,
        "rf_lex+host>rf_lex": rh["accuracy"] - rl["accuracy"] >= GAP_MIN,
        "rf_lex>bp": rl["accuracy"] - bp["accuracy"] >= GAP_MIN,
        "bp_fpr>=5x_gnn_fpr": bp["fpr"] >= BP_FPR_RATIO * g["fpr"],
    }


def run_bench(world: Path, day: str | dt.date | None = None, out: Path | None = None,
              baselines: bool = True, cfg: PipelineConfig | None = None) -> dict:
    """Train on the 7-day window ending at ``day`` and score day+1 detections.

    The returned report also carries the ``BlocklistRun`` under ``"run"``. ``day`` defaults to the second-to-last day of the world so next-day
    labels exist. The runtime budget covers world loading onward.
    """
    t0 = time.perf_counter()
    world = ensure_world(Path(world))
    t_load = time.perf_counter()
    inputs = Inputs.load(world)
    day = parse_day(day) if day else inputs.last_day() - dt.timedelta(days=1)
    cfg = cfg or bench_config()
    run = daily_blocklist(day, inputs, cfg)
    nd = next_day_evaluation(run, inputs)
    runtime = time.perf_counter() - t_load
    report: dict = {
        "day": day.isoformat(),
        "model_id": run.model_id,
        "calibration": dataclasses.asdict(run.calibration),
        "next_day": nd,
        "new_per_seed": run.manifest()["new_per_seed"],
        "runtime_s": runtime,
        "generate_s": t_load - t0,
    }
    checks = {
        "auc": nd.get("auc", float("nan")) >= AUC_MIN,
        "recall@0.5%fpr": nd.get("recall", float("nan")) >= RECALL_MIN,
        "runtime": runtime < RUNTIME_MAX_S,
    }
    lines = [
        f"[{'PASS' if checks['auc'] else 'FAIL'}] next-day AUC {nd.get('auc', float('nan')):.4f} (>= {AUC_MIN})",
        f"[{'PASS' if checks['recall@0.5%fpr'] else 'FAIL'}] next-day recall {nd.get('recall', float('nan')):.4f} "
        f"at threshold {run.calibration.threshold:.6f} (>= {RECALL_MIN}; n_pos={nd['n_pos']} n_neg={nd['n_neg']})",
        f"[{'PASS' if checks['runtime'] else 'FAIL'}] runtime {runtime:.1f}s (< {RUNTIME_MAX_S:.0f}s)",
    ]
    if baselines:
        g = cfg.gnn
        rows = {"gnn": gnn_fold_scores(run.result)}
        for name, cols in FEATURE_SETS.items():
            _, fs = feature_tree_baseline(run.window.graph, run.window.features, run.train_labels, cols,
                                          folds=g.folds, seed=g.seed)
            rows[f"rf_{name}"] = fs.mean
        rows["bp"] = bp_baseline(run.window.graph, run.train_labels, folds=g.folds, seed=g.seed).mean
        report["comparison"] = rows
        order = ordering_checks(rows)
        checks.update(order)
        for k, r in rows.items():
            lines.append(f"       {k:20s} accuracy {r['accuracy']:.4f} fpr {r['fpr']:.4f} f1 {r['f1']:.4f}")
        for k, ok in order.items():
            lines.append(f"[{'PASS' if ok else 'FAIL'}] {k}")
    report["checks"] = checks
    report["passed"] = all(checks.values())
    report["lines"] = lines
    report["run"] = run
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8") as fh:
            json.dump({k: v for k, v in report.items() if k not in ("lines", "run")}, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
    return report
