"""AUROC, ROC operating points, threshold protocols, KL sweeps, and the
CSV report writers."""

import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glimpse.distribution import make_estimator
from glimpse.errors import ConfigError
from glimpse.evaluation import (
    REPORT_HEADER,
    ScoredPopulation,
    auroc,
    best_threshold,
    evaluate_population,
    kl_sweep,
    populations_from_scores,
    roc_curve,
    tpr_at_fpr,
    write_kl_csv,
    write_report,
    write_roc_points,
)
from glimpse.scoring import SynthConfig, gen_synthetic


def pop(pos, neg, **kw):
    return ScoredPopulation(pos=np.asarray(pos, float), neg=np.asarray(neg, float), **kw)


def brute_force_auroc(pos, neg):
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


# ----------------------------------------------------------------------- auroc


def test_auroc_perfect_separation():
    assert auroc(pop([2, 3], [0, 1])) == 1.0


def test_auroc_enumerated_pairs():
    assert auroc(pop([0.9, 0.8], [0.7, 0.85])) == 0.75


def test_auroc_all_ties():
    assert auroc(pop([0.5], [0.5])) == 0.5


def test_auroc_requires_both_classes():
    with pytest.raises(ConfigError):
        auroc(pop([], [1.0]))


def test_population_rejects_non_finite():
    with pytest.raises(ConfigError):
        pop([np.nan], [0.0])


@given(
    pos=st.lists(st.integers(0, 5), min_size=1, max_size=8),
    neg=st.lists(st.integers(0, 5), min_size=1, max_size=8),
)
@settings(max_examples=300, deadline=None)
def test_auroc_matches_pairwise_oracle(pos, neg):
    # small integer scores force heavy ties, the hard case for midranks
    assert auroc(pop(pos, neg)) == brute_force_auroc(pos, neg)


@given(
    pos=st.lists(st.integers(-10, 10), min_size=1, max_size=8),
    neg=st.lists(st.integers(-10, 10), min_size=1, max_size=8),
    scale=st.floats(0.1, 10),
    shift=st.floats(-3, 3),
)
@settings(max_examples=150, deadline=None)
def test_auroc_monotone_transform_invariant(pos, neg, scale, shift):
    # half-integer scores keep exp strictly monotone in float arithmetic
    pos = [p / 2.0 for p in pos]
    neg = [n / 2.0 for n in neg]
    base = auroc(pop(pos, neg))
    affine = auroc(pop([scale * p + shift for p in pos], [scale * n + shift for n in neg]))
    assert affine == pytest.approx(base, abs=1e-12)
    expd = auroc(pop(np.exp(np.asarray(pos) / 5), np.exp(np.asarray(neg) / 5)))
    assert expd == pytest.approx(base, abs=1e-12)


@given(
    pos=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
    neg=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
)
@settings(max_examples=150, deadline=None)
def test_auroc_complement_identity(pos, neg):
    assert auroc(pop(pos, neg)) + auroc(pop(neg, pos)) == 1.0


# ------------------------------------------------------------------- roc curve


def test_roc_endpoints_and_monotonicity():
    points = roc_curve(pop([0.9, 0.8], [0.7, 0.85]))
    assert tuple(points[0]) == (0.0, 0.0)
    assert tuple(points[-1]) == (1.0, 1.0)
    assert np.all(np.diff(points[:, 0]) >= 0)
    assert np.all(np.diff(points[:, 1]) >= 0)


def test_roc_perfect_separation_hits_corner():
    points = roc_curve(pop([2, 3], [0, 1]))
    assert any(fpr == 0.0 and tpr == 1.0 for fpr, tpr in points)
    assert tpr_at_fpr(pop([2, 3], [0, 1]), 0.01) == 1.0


def test_tpr_at_fpr_conservative_step():
    population = pop([0.9, 0.8], [0.7, 0.85])
    assert tpr_at_fpr(population, 0.49) == 0.5
    assert tpr_at_fpr(population, 0.5) == 1.0
    assert tpr_at_fpr(population, 0.0) == 0.5


def test_tpr_at_fpr_validates_level():
    with pytest.raises(ConfigError):
        tpr_at_fpr(pop([1], [0]), 1.5)


@given(
    pos=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
    neg=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
)
@settings(max_examples=200, deadline=None)
def test_trapezoid_area_equals_auroc(pos, neg):
    points = roc_curve(pop(pos, neg))
    area = float(np.trapezoid(points[:, 1], points[:, 0]))
    assert abs(area - auroc(pop(pos, neg))) <= 1e-12


# ------------------------------------------------------------------ thresholds


def test_best_threshold_trivial_split():
    report = best_threshold(pop([1, 1], [0, 0]))
    assert report.threshold == 0.5
    assert report.accuracy == 1.0
    assert report.protocol == "per-dataset"


def test_best_threshold_enumerated():
    report = best_threshold(pop([0.9, 0.6], [0.7, 0.4]))
    assert report.accuracy == 0.75
    assert 0.4 < report.threshold < 0.6


def test_best_threshold_protocol_validation():
    p = pop([1], [0])
    with pytest.raises(ConfigError):
        best_threshold(p, "global")
    with pytest.raises(ConfigError):
        best_threshold([p, p], "per-dataset")
    with pytest.raises(ConfigError):
        best_threshold(p, "per-dataset", eval_pops=[p])


def test_best_threshold_cross_dataset_transfer():
    held_in = [
        pop([1.0, 0.9], [0.1, 0.2], dataset="a"),
        pop([0.8, 0.7], [0.3, 0.0], dataset="b"),
    ]
    held_out = [pop([0.75, 0.65], [0.35, 0.25], dataset="c")]
    report = best_threshold(held_in, "cross-dataset", eval_pops=held_out)
    assert report.accuracy == 1.0  # the pooled threshold transfers cleanly
    assert report.protocol == "cross-dataset"
    # selection threshold comes from the held-in pool
    assert 0.3 < report.threshold < 0.7


@given(
    pos=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
    neg=st.lists(st.floats(-5, 5), min_size=1, max_size=8),
)
@settings(max_examples=150, deadline=None)
def test_best_threshold_beats_majority(pos, neg):
    report = best_threshold(pop(pos, neg))
    majority = max(len(pos), len(neg)) / (len(pos) + len(neg))
    assert report.accuracy >= majority - 1e-12
    assert 0.0 <= report.tpr <= 1.0 and 0.0 <= report.fpr <= 1.0


# -------------------------------------------------------------------- kl sweep


def geometric_factory(M):
    return lambda k: make_estimator("geometric", M)


def test_kl_sweep_zero_at_full_observation():
    corpus = gen_synthetic(SynthConfig(n_passages=2, length=5, M=20, K=20, seed=1))
    rows = kl_sweep(
        corpus.passages,
        {"geometric": geometric_factory(20), "zipfian": lambda k: make_estimator("zipfian", 20)},
        [20],
    )
    for row in rows:
        assert row["mean_kl"] == pytest.approx(0.0, abs=1e-9)
        assert row["inf_count"] == 0
        assert row["n"] == 20


def test_kl_sweep_improves_with_k():
    corpus = gen_synthetic(SynthConfig(n_passages=5, length=20, M=50, K=5, seed=2))
    rows = kl_sweep(corpus.passages, {"geometric": geometric_factory(50)}, [1, 5])
    by_k = {row["K"]: row["mean_kl"] for row in rows}
    assert by_k[5] <= by_k[1]


def test_kl_sweep_naive_counts_infinities():
    corpus = gen_synthetic(SynthConfig(n_passages=2, length=5, M=30, K=3, seed=3))
    rows = kl_sweep(
        corpus.passages, {"naive": lambda k: make_estimator("naive", 30)}, [3]
    )
    assert rows[0]["inf_count"] == rows[0]["n"]  # truths put mass beyond K


def test_kl_sweep_requires_truths():
    corpus = gen_synthetic(SynthConfig(n_passages=1, length=2, M=10, K=2, seed=4))
    from dataclasses import replace

    stripped = [replace(p, true_probs=None) for p in corpus.passages]
    with pytest.raises(ConfigError):
        kl_sweep(stripped, {"geometric": geometric_factory(10)}, [2])


# --------------------------------------------------------------------- reports


def test_evaluate_population_row_shape():
    row = evaluate_population(
        pop([0.9, 0.8], [0.1, 0.2], method="curvature", estimator="geometric",
            dataset="synthetic", source="unit", k=5, m=100)
    )
    assert tuple(row) == REPORT_HEADER
    assert row["auroc"] == 1.0
    assert row["acc"] == 1.0
    assert row["K"] == 5 and row["M"] == 100


def test_write_report_and_roc_csv(tmp_path):
    population = pop([0.9, 0.8], [0.7, 0.85], method="rank", estimator="naive")
    report_path = tmp_path / "report.csv"
    write_report([evaluate_population(population)], report_path)
    with open(report_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(REPORT_HEADER)
    assert rows[1][0] == "rank" and float(rows[1][6]) == 0.75

    roc_path = tmp_path / "roc.csv"
    write_roc_points(population, roc_path)
    with open(roc_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["fpr", "tpr"]
    assert [float(x) for x in rows[1]] == [0.0, 0.0]
    assert [float(x) for x in rows[-1]] == [1.0, 1.0]


def test_write_kl_csv(tmp_path):
    path = tmp_path / "kl.csv"
    write_kl_csv(
        [{"estimator": "geometric", "K": 5, "mean_kl": 0.01, "inf_count": 0, "n": 100}],
        path,
    )
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["estimator", "K", "mean_kl", "inf_count", "n"]
    assert rows[1] == ["geometric", "5", "0.01", "0", "100"]


def test_populations_from_scores_groups_cells():
    rows = [
        {"id": "1", "label": "machine", "method": "curvature", "estimator": "geometric",
         "metric": 2.0, "dataset": "d", "source": "s", "K": 5, "M": 100},
        {"id": "2", "label": "human", "method": "curvature", "estimator": "geometric",
         "metric": -1.0, "dataset": "d", "source": "s", "K": 5, "M": 100},
        {"id": "3", "label": "machine", "method": "rank", "estimator": "geometric",
         "metric": -3.0, "dataset": "d", "source": "s", "K": 5, "M": 100},
        {"id": "4", "label": "human", "method": "rank", "estimator": "geometric",
         "metric": -9.0, "dataset": "d", "source": "s", "K": 5, "M": 100},
        {"id": "5", "label": "unknown", "method": "rank", "estimator": "geometric",
         "metric": 0.0, "dataset": "d", "source": "s", "K": 5, "M": 100},
    ]
    pops = populations_from_scores(rows)
    assert len(pops) == 2
    assert [p.method for p in pops] == ["curvature", "rank"]  # sorted cells
    assert all(p.pos.size == 1 and p.neg.size == 1 for p in pops)
    assert pops[0].k == 5 and pops[0].m == 100
