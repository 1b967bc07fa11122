"""Detection metrics, multi-run aggregation and the ablation suite."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import binomtest, rankdata

from .errors import DegenerateLabels, PipelineError

ABLATIONS = ("full", "w/o-BMP", "w/o-TKG", "w/o-Expert", "w/o-MiAS", "plain-LM")


def confusion(labels, pred, positive: int = 1) -> tuple[int, int, int, int]:
    """(tp, fp, fn, tn) for one class treated as positive."""
    y = np.asarray(labels) == positive
    p = np.asarray(pred) == positive
    return int((y & p).sum()), int((~y & p).sum()), int((y & ~p).sum()), int((~y & ~p).sum())


def f1_score(tp: int, fp: int, fn: int) -> float:
    den = 2 * tp + fp + fn
    return 100.0 * 2 * tp / den if den else 0.0


def fnr(tp: int, fn: int) -> float:
    return 100.0 * fn / (fn + tp) if fn + tp else 0.0


def f1_from_predictions(labels, pred, n_classes: int = 2, positive: int = 1) -> float:
    """Binary F1 of ``positive`` (two classes) or macro one-vs-rest F1."""
    if n_classes == 2:
        tp, fp, fn_, _ = confusion(labels, pred, positive)
        return f1_score(tp, fp, fn_)
    vals = []
    for c in range(n_classes):
        tp, fp, fn_, _ = confusion(labels, pred, c)
        vals.append(f1_score(tp, fp, fn_))
    return float(np.mean(vals))


def auc_score(scores, is_pos) -> float:
    """Mann-Whitney AUC in percent with midranks for ties."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(is_pos, dtype=bool)
    n1, n0 = int(y.sum()), int((~y).sum())
    if n1 == 0 or n0 == 0:
        raise DegenerateLabels("AUC needs both positive and negative examples")
    r = rankdata(s)
    u = r[y].sum() - n1 * (n1 + 1) / 2.0
    return 100.0 * u / (n1 * n0)


@dataclass
class MetricsReport:
    f1: float
    auc: float
    fnr: float
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)
    n_classes: int = 2

    def to_dict(self) -> dict:
        return {"f1": self.f1, "auc": self.auc, "fnr": self.fnr, "n_classes": self.n_classes,
                "per_class": {str(k): v for k, v in self.per_class.items()},
                "averaging": "binary" if self.n_classes == 2 else "macro one-vs-rest"}


def compute_metrics(scores, labels, positive: int = 1) -> MetricsReport:
    """Metrics from per-account class scores (n x C) and integer labels.

    Predictions are the argmax class.  Two classes give binary metrics for
    ``positive``; more classes give per-class one-vs-rest values with macro
    averages.  Raises DegenerateLabels if a class has no example.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 1:
        s = np.stack([1.0 - s, s], axis=1)
    y = np.asarray(labels, dtype=np.int64)
    c = s.shape[1]
    missing = [k for k in range(c) if not (y == k).any()]
    if missing:
        raise DegenerateLabels(f"classes without examples: {missing}")
    pred = s.argmax(axis=1)
    per = {}
    for k in range(c):
        tp, fp, fn_, _ = confusion(y, pred, k)
        per[k] = {"f1": f1_score(tp, fp, fn_), "fnr": fnr(tp, fn_), "auc": auc_score(s[:, k], y == k)}
    if c == 2:
        m = per[positive]
        return MetricsReport(m["f1"], m["auc"], m["fnr"], per, 2)
    return MetricsReport(*(float(np.mean([per[k][key] for k in range(c)])) for key in ("f1", "auc", "fnr")),
                         per, c)


# ---------------------------------------------------------------- aggregation

@dataclass
class RunSummary:
    variant: str
    runs: list[dict]
    errors: list[str] = field(default_factory=list)

    def stat(self, key: str) -> tuple[float, float]:
        vals = [r[key] for r in self.runs]
        if not vals:
            return math.nan, math.nan
        sd = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return float(np.mean(vals)), sd


def sign_test(a: Sequence[float], b: Sequence[float]) -> dict:
    """Paired sign test of a > b over seeds; ties are dropped."""
    wins = sum(x > y for x, y in zip(a, b))
    losses = sum(x < y for x, y in zip(a, b))
    n = wins + losses
    p = binomtest(wins, n, 0.5, alternative="greater").pvalue if n else 1.0
    return {"wins": wins, "losses": losses, "ties": len(a) - n, "p_value": float(p)}


def run_ablation(suite: Sequence[str], run_one: Callable[[str, int], dict], n_runs: int = 5,
                 log=None) -> list[RunSummary]:
    """Run every variant for seeds 0..n_runs-1; a failing run is recorded, not raised."""
    out = []
    for variant in suite:
        if variant not in ABLATIONS:
            raise ValueError(f"unknown ablation variant {variant!r}")
        summary = RunSummary(variant, [])
        for seed in range(n_runs):
            try:
                m = run_one(variant, seed)
            except PipelineError as e:
                summary.errors.append(f"seed {seed}: {type(e).__name__}: {e}")
                continue
            summary.runs.append({"seed": seed, **m})
            if log:
                log(f"{variant} seed {seed}: F1={m['f1']:.2f} FNR={m['fnr']:.2f}")
        out.append(summary)
    return out


TABLE_COLUMNS = ("variant", "F1_mean", "F1_std", "AUC_mean", "AUC_std", "FNR_mean", "FNR_std", "runs")


def ablation_table(summaries: Sequence[RunSummary]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    for s in summaries:
        f1, f1s = s.stat("f1")
        auc, aucs = s.stat("auc")
        fn_, fns = s.stat("fnr")
        w.writerow([s.variant] + [f"{x:.4f}" for x in (f1, f1s, auc, aucs, fn_, fns)] + [len(s.runs)])
    return buf.getvalue()


def paired_comparison(a: RunSummary, b: RunSummary, key: str = "f1") -> dict:
    """Seed-paired comparison of two variants."""
    bs = {r["seed"]: r[key] for r in b.runs}
    pairs = [(r[key], bs[r["seed"]]) for r in a.runs if r["seed"] in bs]
    res = sign_test([p[0] for p in pairs], [p[1] for p in pairs])
    res["mean_gap"] = float(np.mean([x - y for x, y in pairs])) if pairs else math.nan
    return res
