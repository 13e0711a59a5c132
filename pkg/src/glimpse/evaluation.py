"""Evaluation harness: AUROC, ROC curves, threshold protocols, KL sweeps.

AUROC is the Mann-Whitney statistic (ties count half), computed by a
single sort with midranks; it is cross-checked in the tests against the
quadratic pairwise definition and against the trapezoidal area under the
ROC curve. Threshold selection scans the midpoints between adjacent
distinct scores plus open sentinels, maximizing plain accuracy, and
supports applying a threshold chosen on one pool to a held-out pool.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .distribution import EstimatorFn, kl_divergence, truncate_observation
from .errors import ConfigError

REPORT_HEADER = (
    "method",
    "estimator",
    "dataset",
    "source",
    "K",
    "M",
    "auroc",
    "acc",
    "tpr@1%",
    "tpr@10%",
)

PROTOCOLS = ("per-dataset", "cross-dataset", "cross-source")


@dataclass(frozen=True)
class ScoredPopulation:
    """Scores for one (method, estimator, dataset, source) cell.

    Positives are machine passages, negatives human ones.
    """

    pos: np.ndarray
    neg: np.ndarray
    method: str = ""
    estimator: str = ""
    dataset: str = "all"
    source: str = "unknown"
    k: int | None = None
    m: int | None = None

    def __post_init__(self):
        pos = np.asarray(self.pos, dtype=np.float64)
        neg = np.asarray(self.neg, dtype=np.float64)
        object.__setattr__(self, "pos", pos)
        object.__setattr__(self, "neg", neg)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ConfigError("scores must be finite")


@dataclass(frozen=True)
class ThresholdReport:
    threshold: float
    accuracy: float
    tpr: float
    fpr: float
    protocol: str


def _require_both_classes(pop: ScoredPopulation) -> None:
    if pop.pos.size == 0 or pop.neg.size == 0:
        raise ConfigError(
            f"need both classes, got {pop.pos.size} machine / {pop.neg.size} human"
        )


def auroc(pop: ScoredPopulation) -> float:
    """P(random machine score > random human score), ties counted half."""
    _require_both_classes(pop)
    scores = np.concatenate([pop.pos, pop.neg])
    _, inverse, counts = np.unique(scores, return_inverse=True, return_counts=True)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    midranks = starts + (counts + 1) / 2.0  # 1-based average rank per distinct value
    rank_sum = float(midranks[inverse[: pop.pos.size]].sum())
    n_pos, n_neg = pop.pos.size, pop.neg.size
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_curve(pop: ScoredPopulation) -> np.ndarray:
    """Operating points (FPR, TPR) sweeping thresholds down the distinct scores.

    Ties are grouped, so the trapezoidal area under these points equals
    the midrank AUROC.
    """
    _require_both_classes(pop)
    thresholds = np.unique(np.concatenate([pop.pos, pop.neg]))[::-1]
    pos_sorted = np.sort(pop.pos)
    neg_sorted = np.sort(pop.neg)
    # predict machine when score >= threshold
    tpr = 1.0 - np.searchsorted(pos_sorted, thresholds, side="left") / pop.pos.size
    fpr = 1.0 - np.searchsorted(neg_sorted, thresholds, side="left") / pop.neg.size
    points = np.column_stack([fpr, tpr])
    return np.vstack([[0.0, 0.0], points])


def tpr_at_fpr(pop: ScoredPopulation, fpr_level: float) -> float:
    """Largest achievable TPR with FPR <= level (conservative step, no
    interpolation between operating points)."""
    if not (0.0 <= fpr_level <= 1.0):
        raise ConfigError(f"fpr level {fpr_level} outside [0, 1]")
    points = roc_curve(pop)
    feasible = points[points[:, 0] <= fpr_level + 1e-12]
    return float(feasible[:, 1].max())


def _pool(pops: Sequence[ScoredPopulation]) -> tuple[np.ndarray, np.ndarray]:
    pos = np.concatenate([p.pos for p in pops]) if pops else np.empty(0)
    neg = np.concatenate([p.neg for p in pops]) if pops else np.empty(0)
    return pos, neg


def _confusion_rates(pos, neg, threshold):
    tp = int(np.count_nonzero(pos > threshold))
    fp = int(np.count_nonzero(neg > threshold))
    acc = (tp + (neg.size - fp)) / (pos.size + neg.size)
    return acc, tp / pos.size, fp / neg.size


def best_threshold(
    pops: Sequence[ScoredPopulation] | ScoredPopulation,
    protocol: str = "per-dataset",
    eval_pops: Sequence[ScoredPopulation] | None = None,
) -> ThresholdReport:
    """Pick the accuracy-maximizing threshold on the pooled populations.

    per-dataset takes exactly one population and evaluates in place; the
    cross protocols pool the held-in populations for selection and, when
    eval_pops is given, report accuracy/TPR/FPR on that held-out pool
    (threshold transfer).
    """
    if protocol not in PROTOCOLS:
        raise ConfigError(f"unknown protocol {protocol!r}, expected {PROTOCOLS}")
    if isinstance(pops, ScoredPopulation):
        pops = [pops]
    if not pops:
        raise ConfigError("no populations to select a threshold on")
    if protocol == "per-dataset":
        if len(pops) != 1:
            raise ConfigError("per-dataset selection takes exactly one population")
        if eval_pops is not None:
            raise ConfigError("per-dataset selection evaluates in place")
    pos, neg = _pool(pops)
    if pos.size == 0 or neg.size == 0:
        raise ConfigError("selection pool must contain both classes")

    distinct = np.unique(np.concatenate([pos, neg]))
    candidates = np.concatenate(
        [[-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]]
    )
    # accuracy per candidate, vectorized: predict machine when score > eps
    pos_sorted = np.sort(pos)
    neg_sorted = np.sort(neg)
    tp = pos.size - np.searchsorted(pos_sorted, candidates, side="right")
    tn = np.searchsorted(neg_sorted, candidates, side="right")
    accuracy = (tp + tn) / (pos.size + neg.size)
    threshold = float(candidates[int(np.argmax(accuracy))])

    if eval_pops is not None:
        pos, neg = _pool(list(eval_pops))
        if pos.size == 0 or neg.size == 0:
            raise ConfigError("evaluation pool must contain both classes")
    acc, tpr, fpr = _confusion_rates(pos, neg, threshold)
    return ThresholdReport(
        threshold=threshold, accuracy=acc, tpr=tpr, fpr=fpr, protocol=protocol
    )


def kl_sweep(
    passages,
    estimators: dict[str, Callable[[int], EstimatorFn]],
    k_values: Sequence[int],
    smoothing: float = 0.0,
) -> list[dict]:
    """Mean KL(truth || estimate) per (estimator, K) over all positions.

    Every passage must carry ground-truth distributions. Infinite KLs
    (zero estimated mass on a used rank, only possible unsmoothed) are
    excluded from the mean and reported as a separate count.
    """
    pairs = []
    for p in passages:
        if p.true_probs is None:
            raise ConfigError(f"passage {p.id!r} has no ground-truth distributions")
        pairs.extend(zip(p.positions, p.true_probs))
    if not pairs:
        raise ConfigError("no positions to sweep")
    M = pairs[0][1].size
    if any(truth.size != M for _, truth in pairs):
        raise ConfigError("ground-truth distributions have inconsistent lengths")

    rows = []
    for name, factory in estimators.items():
        for k in k_values:
            estimate = factory(int(k))
            finite = []
            inf_count = 0
            for obs, truth in pairs:
                dist = estimate(truncate_observation(obs, int(k)))
                value = kl_divergence(dist, truth, smoothing=smoothing)
                if math.isinf(value):
                    inf_count += 1
                else:
                    finite.append(value)
            rows.append(
                {
                    "estimator": name,
                    "K": int(k),
                    "mean_kl": float(np.mean(finite)) if finite else float("nan"),
                    "inf_count": inf_count,
                    "n": len(pairs),
                }
            )
    return rows


def write_kl_csv(rows: Iterable[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["estimator", "K", "mean_kl", "inf_count", "n"])
        for row in rows:
            writer.writerow(
                [row["estimator"], row["K"], row["mean_kl"], row["inf_count"], row["n"]]
            )


def evaluate_population(pop: ScoredPopulation) -> dict:
    """One report row: AUROC, per-dataset best accuracy, TPR at 1% and 10% FPR."""
    report = best_threshold(pop, "per-dataset")
    return {
        "method": pop.method,
        "estimator": pop.estimator,
        "dataset": pop.dataset,
        "source": pop.source,
        "K": pop.k if pop.k is not None else "",
        "M": pop.m if pop.m is not None else "",
        "auroc": auroc(pop),
        "acc": report.accuracy,
        "tpr@1%": tpr_at_fpr(pop, 0.01),
        "tpr@10%": tpr_at_fpr(pop, 0.10),
    }


def write_report(rows: Iterable[dict], path) -> None:
    """CSV with the fixed header; row values taken from evaluate_population."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for row in rows:
            writer.writerow([row[col] for col in REPORT_HEADER])


def write_roc_points(pop: ScoredPopulation, path) -> None:
    points = roc_curve(pop)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fpr", "tpr"])
        for fpr, tpr in points:
            writer.writerow([fpr, tpr])


def populations_from_scores(rows: Iterable[dict]) -> list[ScoredPopulation]:
    """Group score-file rows into populations by their evaluation cell.

    Rows labeled neither human nor machine are ignored. The returned
    list is sorted by cell key so downstream reports are reproducible.
    """
    cells: dict[tuple, dict[str, list[float]]] = {}
    for row in rows:
        label = row.get("label")
        if label not in ("human", "machine"):
            continue
        key = (
            row.get("method", ""),
            row.get("estimator", ""),
            row.get("dataset", "all"),
            row.get("source", "unknown"),
            row.get("K"),
            row.get("M"),
        )
        bucket = cells.setdefault(key, {"human": [], "machine": []})
        bucket[label].append(float(row["metric"]))
    pops = []
    for key in sorted(cells, key=lambda t: tuple(str(x) for x in t)):
        method, estimator, dataset, source, k, m = key
        bucket = cells[key]
        pops.append(
            ScoredPopulation(
                pos=np.asarray(bucket["machine"]),
                neg=np.asarray(bucket["human"]),
                method=method,
                estimator=estimator,
                dataset=dataset,
                source=source,
                k=k,
                m=m,
            )
        )
    return pops
