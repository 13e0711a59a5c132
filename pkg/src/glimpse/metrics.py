"""Zero-shot detection scores for a passage of partial observations.

Every method reduces a passage to one real number, oriented so that a
higher value means more machine-like:

  curvature   (sum log token_prob - sum mu_j) / sqrt(sum sigma2_j)
  entropy     mean token entropy of the completed distributions
  rank        negated mean rank of the observed token
  logrank     negated mean log-rank
  likelihood  mean log token probability

mu_j / sigma2_j are the first two moments of log p under the completed
rank distribution at position j; curvature accumulates over the passage
without length normalization so that model-sampled text is standardized
to roughly N(0, 1). Rank and log-rank use per-token means so thresholds
transfer across passage lengths. The entropy orientation is reported
as-is even though empirically it often anti-correlates with machine
text; AUROC comparisons are unaffected by the sign convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distribution import EstimatorFn, PartialObservation, RankDistribution
from .errors import ConfigError, DegenerateVarianceError, ObservationError

METHODS = ("curvature", "entropy", "rank", "logrank", "likelihood")


@dataclass(frozen=True)
class TokenMoments:
    """Moments of log p at one position; mu is the negative Shannon entropy."""

    mu: float
    sigma2: float


@dataclass(frozen=True)
class PassageScore:
    metric: float
    log_likelihood: float
    mu_total: float
    sigma2_total: float
    n_tokens: int


def token_moments(dist: RankDistribution) -> TokenMoments:
    """mu = sum p log p, sigma2 = sum p log^2 p - mu^2, with 0 log 0 = 0.

    Deficient distributions simply skip the missing mass; the variance is
    clamped at zero against cancellation noise.
    """
    p = dist.probs[dist.probs > 0.0]
    logs = np.log(p)
    mu = float(np.dot(p, logs))
    sigma2 = float(np.dot(p, logs**2)) - mu * mu
    return TokenMoments(mu=mu, sigma2=max(sigma2, 0.0))


def rank_of_token(dist: RankDistribution, token_prob: float) -> int:
    """Rank whose probability is nearest to token_prob, ties to the smallest."""
    return int(np.argmin(np.abs(dist.probs - token_prob))) + 1


def _gather(
    positions: Sequence[PartialObservation], estimator: EstimatorFn | None
):
    positions = list(positions)
    if not positions:
        raise ObservationError("passage has no scoreable positions")
    dists = None
    mu_total = 0.0
    sigma2_total = 0.0
    if estimator is not None:
        dists = [estimator(obs) for obs in positions]
        moments = [token_moments(d) for d in dists]
        mu_total = float(sum(m.mu for m in moments))
        sigma2_total = float(sum(m.sigma2 for m in moments))
    log_likelihood = float(sum(math.log(obs.token_prob) for obs in positions))
    return positions, dists, log_likelihood, mu_total, sigma2_total


def score_passage(
    positions: Sequence[PartialObservation],
    estimator: EstimatorFn | None,
    method: str,
) -> PassageScore:
    """Score one passage with one method.

    The estimator completes each position once; only ``likelihood`` can
    run without one (the aggregate moments are then reported as zero).
    """
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}, expected one of {METHODS}")
    if estimator is None and method != "likelihood":
        raise ConfigError(f"method {method!r} requires an estimator")
    positions, dists, ll, mu_total, sigma2_total = _gather(positions, estimator)
    n = len(positions)
    if method == "curvature":
        if sigma2_total <= 0.0:
            raise DegenerateVarianceError(
                "all positions are deterministic; curvature is undefined"
            )
        metric = (ll - mu_total) / math.sqrt(sigma2_total)
    elif method == "entropy":
        metric = -mu_total / n
    elif method in ("rank", "logrank"):
        ranks = [rank_of_token(d, obs.token_prob) for obs, d in zip(positions, dists)]
        if method == "rank":
            metric = -float(np.mean(ranks))
        else:
            metric = -float(np.mean(np.log(ranks)))
    else:
        metric = ll / n
    return PassageScore(
        metric=metric,
        log_likelihood=ll,
        mu_total=mu_total,
        sigma2_total=sigma2_total,
        n_tokens=n,
    )


def curvature_score(
    positions: Sequence[PartialObservation], estimator: EstimatorFn
) -> PassageScore:
    return score_passage(positions, estimator, "curvature")


def entropy_score(
    positions: Sequence[PartialObservation], estimator: EstimatorFn
) -> PassageScore:
    return score_passage(positions, estimator, "entropy")


def rank_score(
    positions: Sequence[PartialObservation], estimator: EstimatorFn
) -> PassageScore:
    return score_passage(positions, estimator, "rank")


def logrank_score(
    positions: Sequence[PartialObservation], estimator: EstimatorFn
) -> PassageScore:
    return score_passage(positions, estimator, "logrank")


def likelihood_score(
    positions: Sequence[PartialObservation], estimator: EstimatorFn | None = None
) -> PassageScore:
    return score_passage(positions, estimator, "likelihood")
