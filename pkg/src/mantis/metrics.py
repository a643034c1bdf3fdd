"""Binary classification metrics shared by the pipelines and baselines."""
from __future__ import annotations

import numpy as np
from sklearn.metrics import roc_auc_score


def binary_metrics(y_true, scores, threshold: float) -> dict[str, float]:
    y = np.asarray(y_true, dtype=np.int64)
    s = np.asarray(scores, dtype=np.float64)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    auc = float(roc_auc_score(y, s)) if 0 < y.sum() < len(y) else float("nan")
    return {
        "precision": precision, "recall": recall, "f1": f1,
        "accuracy": (tp + tn) / max(1, len(y)),
        "fpr": fp / (fp + tn) if fp + tn else 0.0,
        "auc": auc, "tp": tp, "fp": fp, "fn": fn, "tn": tn, "threshold": float(threshold),
    }


def outcome_buckets(y_true, scores, threshold: float) -> list[str]:
    out = []
    for y, s in zip(y_true, scores):
        p = s >= threshold
        out.append(("TP" if y else "FP") if p else ("FN" if y else "TN"))
    return out


def format_report(rows: dict[str, dict[str, float]]) -> str:
    """Plain-text table: one row per named result, fixed metric columns."""
    cols = ("precision", "recall", "f1", "fpr", "accuracy", "auc")
    lines = ["name," + ",".join(cols)]
    for name, m in rows.items():
        lines.append(name + "," + ",".join(f"{m.get(c, float('nan')):.4f}" for c in cols))
    return "\n".join(lines) + "\n"
