"""Command-line entry point: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, load_config

log = logging.getLogger("mantis")


# ---------------------------------------------------------------------------
# helpers

def _inputs(cfg: Config):
    from .pipelines import Inputs
    return Inputs.load(cfg.data_dir)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _stage_manifest(stage: str, cfg: Config, out: Path, inputs=None, **extra) -> Path:
    """Write ``<out>.manifest.json`` next to a stage artifact."""
    from .pipelines import file_sha256
    record = {"stage": stage, "config_sha256": cfg.pipeline.digest(), "config": cfg.to_dict()}
    if inputs is not None:
        record["inputs_sha256"] = inputs.hashes()
    if out.is_file():
        record["output_sha256"] = file_sha256(out)
    record.update(extra)
    path = out.with_name(out.name + ".manifest.json")
    _write_json(path, record)
    return path


def _day(cfg: Config, args, inputs=None) -> dt.date:
    from .pdns import parse_day
    if getattr(args, "day", None):
        return parse_day(args.day)
    if inputs is None:
        raise ValueError("--day is required")
    return inputs.last_day() - dt.timedelta(days=1)


def _gnn_cfg(cfg: Config, args):
    from dataclasses import replace
    g = cfg.pipeline.gnn
    if getattr(args, "folds", None):
        g = replace(g, folds=args.folds)
    if getattr(args, "epochs", None):
        g = replace(g, epochs=args.epochs)
    if getattr(args, "seed", None) is not None:
        g = replace(g, seed=args.seed)
    return g


# ---------------------------------------------------------------------------
# stages

def cmd_synth(cfg: Config, args) -> int:
    from .synth import WorldSpec, generate
    spec = WorldSpec()
    for name in ("days", "n_benign", "n_campaigns", "rng_seed"):
        v = getattr(args, name)
        if v is not None:
            setattr(spec, name, v)
    out = Path(args.out or cfg.data_dir)
    corpus = generate(spec, out)
    print(json.dumps({"out": str(corpus.root), "labels": len(corpus.read_labels())}))
    return 0


def cmd_ingest(cfg: Config, args) -> int:
    from .pdns import PdnsStore
    store = PdnsStore()
    for p in args.inputs:
        store.ingest_file(p)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.save(out)
    _stage_manifest("ingest", cfg, out, sources=[str(p) for p in args.inputs], records=len(store),
                    rejected=len(store.rejected))
    print(json.dumps({"records": len(store), "names": len(store.names()), "rejected": len(store.rejected)}))
    return 0


def cmd_seeds(cfg: Config, args) -> int:
    from .pipelines import window_seeds
    inputs = _inputs(cfg)
    day = _day(cfg, args, inputs)
    seeds, reports = window_seeds(inputs, [day])
    lines = seeds[day]
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text("".join(s + "\n" for s in lines), encoding="utf-8")
        _stage_manifest("seeds", cfg, out, inputs, day=day.isoformat(), filtered=reports[day])
    else:
        sys.stdout.write("".join(s + "\n" for s in lines))
    print(json.dumps({"day": day.isoformat(), "seeds": len(lines), "filtered": reports[day]}), file=sys.stderr)
    return 0


def cmd_expand(cfg: Config, args) -> int:
    from .pipelines import build_window
    inputs = _inputs(cfg)
    day = _day(cfg, args, inputs)
    w = build_window(inputs, day, cfg.pipeline)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    w.graph.save(out)
    _stage_manifest("expand", cfg, out, inputs, day=day.isoformat(), seeds=len(w.seeds),
                    nodes=len(w.graph.nodes), edges=len(w.graph.edges), pruned=len(w.report.pruned),
                    skipped_seeds=len(w.report.skipped_seeds))
    print(json.dumps({"nodes": len(w.graph.nodes), "edges": len(w.graph.edges), "seeds": len(w.seeds)}))
    return 0


def cmd_featurize(cfg: Config, args) -> int:
    from .features import write_feature_csv
    from .pipelines import build_window, write_labels
    inputs = _inputs(cfg)
    day = _day(cfg, args, inputs)
    w = build_window(inputs, day, cfg.pipeline)
    out = Path(args.out)
    paths = write_feature_csv(w.features, out)
    w.graph.save(out / "graph.csv")
    write_labels(w.labels, out / "labels.csv")
    for p in paths:
        _stage_manifest("featurize", cfg, p, inputs, day=day.isoformat())
    print(json.dumps({"out": str(out), "nodes": len(w.features), "labels": len(w.labels)}))
    return 0


def cmd_train(cfg: Config, args) -> int:
    from dataclasses import asdict
    from .gnn.train import train
    from .pipelines import build_window
    inputs = _inputs(cfg)
    day = _day(cfg, args, inputs)
    w = build_window(inputs, day, cfg.pipeline)
    res = train(w.graph, w.features, w.labels, _gnn_cfg(cfg, args))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    res.model.save(out)
    _stage_manifest("train", cfg, out, inputs, day=day.isoformat(), model_id=res.model.version,
                    best_fold=res.best_fold, folds=[asdict(f) for f in res.folds])
    print(json.dumps({"model_id": res.model.version, "best_fold": res.best_fold,
                      "f1": [round(f.f1, 4) for f in res.folds]}))
    return 0


def cmd_blocklist(cfg: Config, args) -> int:
    from dataclasses import replace
    from .pipelines import daily_blocklist, detection_history
    inputs = _inputs(cfg)
    day = _day(cfg, args, inputs)
    pcfg = cfg.pipeline
    if args.fpr is not None:
        pcfg = replace(pcfg, fpr_target=args.fpr)
    pcfg = replace(pcfg, gnn=_gnn_cfg(cfg, args))
    out_dir = Path(args.out_dir or cfg.service.blocklist_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run = daily_blocklist(day, inputs, pcfg, detection_history(out_dir, day))
    csv_path, man_path = run.write(out_dir)
    m = run.manifest()
    print(json.dumps({"blocklist": str(csv_path), "manifest": str(man_path), "entries": m["counts"]["entries"],
                      "newly_predicted": m["counts"]["newly_predicted"], "threshold": run.calibration.threshold}))
    return 0


def _ensemble_days(cfg: Config, inputs, args):
    from .pdns import parse_day
    last = args.last_day or cfg.ensemble.last_day
    if last:
        last = parse_day(last)
    else:
        last = inputs.last_day() - dt.timedelta(days=cfg.ensemble.meta_days)
    return last, last + dt.timedelta(days=1), last + dt.timedelta(days=cfg.ensemble.meta_days)


def cmd_ensemble(cfg: Config, args) -> int:
    from dataclasses import replace
    from .pipelines import build_ensemble, meta_ground_truth, weekly_encoders
    inputs = _inputs(cfg)
    last, m0, m1 = _ensemble_days(cfg, inputs, args)
    gnn = replace(_gnn_cfg(cfg, args), folds=args.folds or cfg.ensemble.encoder_folds)
    encoders = weekly_encoders(inputs, last, cfg.pipeline, 4, gnn)
    taken = set().union(*(e.labeled_domains() for e in encoders))
    meta_gt = meta_ground_truth(inputs, m0, m1, cfg.pipeline, exclude=taken)
    ens, report = build_ensemble(encoders, meta_gt, inputs, last, cfg.pipeline, cfg.ensemble.holdout_frac)
    out = Path(args.out or cfg.service.ensemble_dir)
    ens.save(out)
    _write_json(out / "report.json", {"inputs_sha256": inputs.hashes(), "config_sha256": cfg.pipeline.digest(),
                                      "meta_days": [m0.isoformat(), m1.isoformat()], **report})
    print(json.dumps({"out": str(out), "model_id": ens.model_id, "encoders": ens.encoder_ids,
                      "meta_accuracy": report["ensemble"]["accuracy"],
                      "single_accuracy": [r["accuracy"] for r in report["single"]]}))
    return 0


def cmd_predict(cfg: Config, args) -> int:
    from .pipelines import EnsembleModel, predict_on_demand
    inputs = _inputs(cfg)
    ens = EnsembleModel.load(args.ensemble or cfg.service.ensemble_dir)
    out = []
    for d in args.domain:
        t0 = time.perf_counter()
        r = predict_on_demand(ens, d, inputs, cfg.pipeline, day=args.day or cfg.service.predict_day)
        out.append({"domain": r.domain, "score": r.score, "verdict": r.verdict, "model_id": r.model_id,
                    "latency_ms": (time.perf_counter() - t0) * 1000.0})
    for o in out:
        print(json.dumps(o))
    return 0


def _trained_window(cfg: Config, args, inputs):
    from .gnn.train import train
    from .pipelines import build_window
    day = _day(cfg, args, inputs)
    w = build_window(inputs, day, cfg.pipeline)
    return day, w, train(w.graph, w.features, w.labels, _gnn_cfg(cfg, args))


def cmd_attack(cfg: Config, args) -> int:
    from .adversarial import (AttackBudget, adversarial_train, benign_ip_pool, robustness_curve,
                              write_robustness_csv)
    inputs = _inputs(cfg)
    day, w, std = _trained_window(cfg, args, inputs)
    budget = AttackBudget(args.n_ips or cfg.attack.n_ips, cfg.attack.perturbation_rate, cfg.attack.edge_budget)
    pool = benign_ip_pool(w.graph, inputs.toplists, day, inputs.store)
    variants = {"standard": std.model}
    if not args.no_adversarial:
        variants["adversarial"] = adversarial_train(w.graph, w.features, w.labels, _gnn_cfg(cfg, args), budget, pool).model
    rates = [float(r) for r in args.rates.split(",")]
    rows = robustness_curve(variants, w.graph, w.features, std.val_nodes, std.val_labels, pool, rates, budget.n_ips)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_robustness_csv(rows, out)
    _stage_manifest("attack", cfg, out, inputs, day=day.isoformat(), pool=[p.key for p in pool])
    for r in rows:
        print(f"{r.perturbation_rate:.2f} {r.model_variant:12s} acc={r.accuracy:.4f} recall={r.recall:.4f} fpr={r.fpr:.4f}")
    return 0


def cmd_explain(cfg: Config, args) -> int:
    from .explain import gradient_importance, perturbation_importance, write_importance_csv
    inputs = _inputs(cfg)
    day, w, res = _trained_window(cfg, args, inputs)
    nodes, y = res.val_nodes, res.val_labels
    if args.nodes and len(nodes) > args.nodes:
        idx = np.sort(np.random.default_rng(0).choice(len(nodes), args.nodes, replace=False))
        nodes, y = [nodes[i] for i in idx], y[idx]
    fn = gradient_importance if args.method == "gradient" else perturbation_importance
    report = fn(res.model, w.graph, w.features, nodes, y)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_importance_csv(report, out)
    _stage_manifest("explain", cfg, out, inputs, day=day.isoformat(), model_id=res.model.version,
                    method=args.method, nodes=len(nodes))
    for b, gs in sorted(report.items()):
        print(b, " ".join(f"{g}={v:.4f}" for g, v in sorted(gs.items(), key=lambda t: -t[1])))
    return 0


def cmd_bench(cfg: Config, args) -> int:
    from .bench import run_bench
    report = run_bench(Path(args.world or cfg.data_dir), day=args.day, out=Path(args.out) if args.out else None,
                       baselines=not args.no_baselines)
    for line in report["lines"]:
        print(line)
    return 0 if report["passed"] else 1


def cmd_serve(cfg: Config, args) -> int:
    import uvicorn
    from .service import ServiceState, create_app
    state = ServiceState.from_config(cfg)
    uvicorn.run(create_app(state), host=args.host or cfg.service.host, port=args.port or cfg.service.port,
                log_level=cfg.log_level.lower())
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mantis", description="Malicious-domain detection over passive DNS graphs.")
    p.add_argument("--config", help="YAML config file (MANTIS_* environment variables override it)")
    p.add_argument("--data-dir", help="input directory (pdns.jsonl, feed.csv, toplists/, ...)")
    sub = p.add_subparsers(dest="command", required=True)

    def day_arg(sp, required=False):
        sp.add_argument("--day", required=required, help="YYYY-MM-DD (default: day before the data ends)")

    def train_args(sp):
        sp.add_argument("--folds", type=int)
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--seed", type=int)

    sp = sub.add_parser("synth", help="generate a synthetic world")
    sp.add_argument("--out")
    sp.add_argument("--days", type=int)
    sp.add_argument("--n-benign", dest="n_benign", type=int)
    sp.add_argument("--n-campaigns", dest="n_campaigns", type=int)
    sp.add_argument("--seed", dest="rng_seed", type=int)
    sp.set_defaults(fn=cmd_synth)

    sp = sub.add_parser("ingest", help="validate and merge PDNS record files")
    sp.add_argument("inputs", nargs="+")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_ingest)

    sp = sub.add_parser("seeds", help="extract seed domains for a day")
    day_arg(sp)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_seeds)

    sp = sub.add_parser("expand", help="build the windowed expansion graph")
    day_arg(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_expand)

    sp = sub.add_parser("featurize", help="write node features, graph and labels")
    day_arg(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_featurize)

    sp = sub.add_parser("train", help="train a GNN on a window")
    day_arg(sp)
    train_args(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("blocklist", help="daily blocklist with a calibrated threshold")
    day_arg(sp)
    train_args(sp)
    sp.add_argument("--fpr", type=float)
    sp.add_argument("--out-dir")
    sp.set_defaults(fn=cmd_blocklist)

    sp = sub.add_parser("ensemble", help="train 4 weekly encoders and the meta-learner")
    sp.add_argument("--last-day", dest="last_day")
    train_args(sp)
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_ensemble)

    sp = sub.add_parser("predict", help="on-demand verdicts from a saved ensemble")
    sp.add_argument("--domain", action="append", required=True)
    sp.add_argument("--ensemble")
    sp.add_argument("--day")
    sp.set_defaults(fn=cmd_predict)

    sp = sub.add_parser("attack", help="MimicIP robustness curve")
    day_arg(sp)
    train_args(sp)
    sp.add_argument("--n-ips", dest="n_ips", type=int, choices=(1, 2, 3))
    sp.add_argument("--rates", default="0,0.05,0.10,0.15")
    sp.add_argument("--no-adversarial", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_attack)

    sp = sub.add_parser("explain", help="feature-group importance per outcome bucket")
    day_arg(sp)
    train_args(sp)
    sp.add_argument("--method", choices=("perturbation", "gradient"), default="perturbation")
    sp.add_argument("--nodes", type=int, default=200)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_explain)

    sp = sub.add_parser("bench", help="end-to-end synthetic benchmark")
    sp.add_argument("--world", help="world directory (generated with defaults if missing)")
    sp.add_argument("--day")
    sp.add_argument("--out")
    sp.add_argument("--no-baselines", action="store_true")
    sp.set_defaults(fn=cmd_bench)

    sp = sub.add_parser("serve", help="HTTP prediction service")
    sp.add_argument("--host")
    sp.add_argument("--port", type=int)
    sp.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # unknown flags exit 2 with usage
    try:
        cfg = load_config(args.config)
        if args.data_dir:
            from dataclasses import replace
            cfg = replace(cfg, data_dir=args.data_dir)
    except (ConfigError, OSError) as exc:
        print(f"mantis: config error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=getattr(logging, cfg.log_level.upper(), logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(cfg, args)
    except Exception as exc:  # stage failure
        print(f"mantis {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
