"""MimicIP robustness curve for a standard and an adversarially trained model.

    python scripts/robustness.py data/world runs/robustness.csv
"""
import argparse
import datetime as dt
import logging

from mantis.adversarial import AttackBudget, adversarial_train, benign_ip_pool, robustness_curve, write_robustness_csv
from mantis.gnn.train import train
from mantis.pipelines import Inputs, PipelineConfig, build_window


def main():
    p = argparse.ArgumentParser()
    p.add_argument("world")
    p.add_argument("out")
    p.add_argument("--n-ips", type=int, default=3)
    p.add_argument("--rate", type=float, default=0.15)
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    inputs = Inputs.load(a.world)
    cfg = PipelineConfig()
    day = inputs.last_day() - dt.timedelta(days=1)
    w = build_window(inputs, day, cfg)
    std = train(w.graph, w.features, w.labels, cfg.gnn)
    pool = benign_ip_pool(w.graph, inputs.toplists, day, inputs.store)
    adv = adversarial_train(w.graph, w.features, w.labels, cfg.gnn, AttackBudget(a.n_ips, a.rate), pool)
    rows = robustness_curve({"standard": std.model, "adversarial": adv.model}, w.graph, w.features,
                            std.val_nodes, std.val_labels, pool, (0.0, 0.05, 0.10, 0.15), a.n_ips)
    write_robustness_csv(rows, a.out)
    for r in rows:
        print(f"{r.perturbation_rate:.2f} {r.model_variant:12s} acc={r.accuracy:.4f} recall={r.recall:.4f}")


if __name__ == "__main__":
    main()
