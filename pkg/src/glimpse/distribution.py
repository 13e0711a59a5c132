"""Completing a truncated next-token distribution over M ranks.

A provider exposes only the top-K probabilities at each position. The
estimators here extend that prefix to a full rank distribution p(1..M):
zero-fill (naive), a geometric decay fitted so the tail absorbs the
unseen mass, a two-parameter Zipfian tail fitted on a precomputed grid,
and a learned network tail. All estimators keep the observed prefix
untouched and only differ beyond rank K.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    ConfigError,
    CorruptFileError,
    DegenerateMassError,
    DistributionError,
    ObservationError,
    VersionMismatchError,
)
from .mlp import MlpModel, mlp_forward

EPS_NUM = 1e-6    # slack for sums supplied by rounded provider data
EPS_MONO = 1e-9   # slack for the monotonic-decrease checks
EPS_MASS = 1e-12  # mass below this is treated as numerically zero

SUMTABLE_MAGIC = b"GLSUMT01"

# Fitting grid for the Zipfian tail. Both axes hit the penalty anchors
# (alpha = 1.0, beta = 2.7) exactly so a pure-penalty minimum has loss 0.
ALPHA_GRID = np.arange(1, 100) / 10.0          # 0.1, 0.2, ..., 9.9
BETA_GRID = (2 * np.arange(100) + 1) / 10.0    # 0.1, 0.3, ..., 19.9


@dataclass(frozen=True)
class PartialObservation:
    """What the provider reveals at one position: top-K probs and the
    probability it assigned to the token actually in the text.

    Probabilities live in linear space here; log space is for disk and wire.
    """

    token_prob: float
    top_probs: np.ndarray

    def __post_init__(self):
        top = np.asarray(self.top_probs, dtype=np.float64)
        object.__setattr__(self, "top_probs", top)
        if top.ndim != 1 or top.size < 1:
            raise ObservationError("top_probs must be a non-empty 1-D array")
        if not np.all(np.isfinite(top)):
            raise ObservationError("top_probs must be finite")
        if np.any(top <= 0.0) or np.any(top > 1.0):
            raise ObservationError("top-K probabilities must lie in (0, 1]")
        if np.any(np.diff(top) > EPS_MONO):
            raise ObservationError("top-K probabilities must be non-increasing")
        if top.sum() > 1.0 + EPS_NUM:
            raise ObservationError(f"top-K mass {top.sum():.9f} exceeds 1")
        if not (0.0 < self.token_prob <= 1.0):
            raise ObservationError(f"token_prob {self.token_prob} outside (0, 1]")
        if self.token_prob > top[0] + EPS_NUM:
            raise ObservationError(
                f"token_prob {self.token_prob:.9f} exceeds top probability {top[0]:.9f}"
            )

    @property
    def k(self) -> int:
        return int(self.top_probs.size)

    @property
    def p_rest(self) -> float:
        """Unseen mass beyond rank K, floored at zero."""
        return max(0.0, 1.0 - float(self.top_probs.sum()))


def truncate_observation(obs: PartialObservation, k: int) -> PartialObservation:
    """Keep only the first k of the observed top probabilities."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if k >= obs.k:
        return obs
    return PartialObservation(token_prob=obs.token_prob, top_probs=obs.top_probs[:k])


@dataclass(frozen=True)
class RankDistribution:
    """A completed distribution over ranks 1..M.

    ``deficiency`` is mass the estimator knowingly left unassigned (the
    zero-fill estimator cannot invent tail mass), so the invariant is
    sum(probs) + deficiency == 1. Ranks after ``k_observed`` come from a
    model; a free-form model tail may break monotonicity, which is
    counted rather than rejected.
    """

    probs: np.ndarray
    k_observed: int
    estimator: str
    deficiency: float = 0.0
    monotonic_violations: int = field(default=0, init=False)

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.size < 1:
            raise DistributionError("probs must be a non-empty 1-D array")
        if not (1 <= self.k_observed <= probs.size):
            raise DistributionError(
                f"k_observed {self.k_observed} outside 1..{probs.size}"
            )
        if np.any(probs < 0.0) or not np.all(np.isfinite(probs)):
            raise DistributionError("probabilities must be finite and non-negative")
        total = float(probs.sum()) + self.deficiency
        if abs(total - 1.0) > EPS_NUM:
            raise DistributionError(
                f"mass {probs.sum():.9f} + deficiency {self.deficiency:.9f} != 1"
            )
        diffs = np.diff(probs)
        prefix = diffs[: self.k_observed - 1]
        if np.any(prefix > EPS_MONO):
            raise DistributionError("observed prefix must be non-increasing")
        tail = diffs[self.k_observed - 1 :]
        object.__setattr__(
            self, "monotonic_violations", int(np.count_nonzero(tail > EPS_MONO))
        )

    @property
    def m(self) -> int:
        return int(self.probs.size)


EstimatorFn = Callable[[PartialObservation], RankDistribution]


def estimate_naive(obs: PartialObservation, M: int) -> RankDistribution:
    """Zero-fill beyond rank K.

    The unseen mass is reported as ``deficiency`` instead of being spread
    over the tail; if the observed prefix already exceeds 1 (tolerated up
    to rounding) it is renormalized.
    """
    if M < obs.k:
        raise ConfigError(f"M={M} smaller than observed K={obs.k}")
    probs = np.zeros(M)
    probs[: obs.k] = obs.top_probs
    prefix = float(obs.top_probs.sum())
    if prefix > 1.0:
        probs /= prefix
        return RankDistribution(probs, obs.k, "naive")
    return RankDistribution(probs, obs.k, "naive", deficiency=1.0 - prefix)


@dataclass(frozen=True)
class GeometricParams:
    decay: float
    iterations_used: int
    converged: bool


def solve_geometric_decay(
    p_rest: float,
    p_k: float,
    M: int,
    K: int,
    tol: float = 1e-9,
    max_iterations: int = 100,
) -> GeometricParams:
    """Find lambda with p_k * (lambda + ... + lambda^(M-K)) = p_rest.

    Starts from the untruncated-tail guess lambda0 = p_rest / (p_k + p_rest),
    which is exact up to the mass it pushes past rank M; that overhang is
    p_rest * lambda0^(M-K), so lambda0 is accepted outright when
    lambda0^(M-K) <= tol. Otherwise each iteration first tries the
    fixed-point update

        lambda <- 1 - (lambda - lambda^(M-K+1)) * p_k / p_rest,

    whose fixed point is exactly the root. The bare map can overshoot and
    oscillate (p_k > p_rest at small M - K) or crawl (root near 1), so
    every proposal is safeguarded: the series residual is monotone in
    lambda, which yields a bracket around the root; proposals that leave
    the bracket or fail to shrink the residual are replaced by a Newton
    step, then by bisection, so progress per iteration is guaranteed.
    When p_rest / p_k >= M - K the truncated tail cannot absorb the mass
    even at lambda -> 1; the result comes back non-converged at the upper
    clamp and the caller rescales.
    """
    if p_rest <= 0.0:
        raise DegenerateMassError(f"no unseen mass to place (p_rest={p_rest})")
    if p_k <= 0.0:
        raise ObservationError(f"smallest observed probability must be positive, got {p_k}")
    if M <= K:
        raise ConfigError(f"need M > K, got M={M}, K={K}")
    n_tail = M - K
    ks = np.arange(1, n_tail + 1)

    def residual(lam: float) -> tuple[float, float]:
        powers = lam**ks
        return float(p_k * powers.sum() - p_rest), float(p_k * np.dot(ks, powers) / lam)

    lam = p_rest / (p_k + p_rest)
    if lam**n_tail <= tol:
        return GeometricParams(decay=lam, iterations_used=0, converged=True)

    lo, hi = 1e-9, 1.0 - 1e-9
    res_hi, _ = residual(hi)
    if res_hi < 0.0:
        # even a nearly flat tail holds less than p_rest: no root in (0, 1)
        return GeometricParams(decay=hi, iterations_used=0, converged=False)
    lam = min(max(lam, lo), hi)
    res, dres = residual(lam)
    if res < 0.0:
        lo = lam
    else:
        hi = lam
    iters = 0
    while iters < max_iterations and abs(res) > tol * p_rest:
        iters += 1
        proposals = [1.0 - (lam - lam ** (n_tail + 1)) * p_k / p_rest]
        if dres > 0.0:
            proposals.append(lam - res / dres)
        proposals.append(0.5 * (lo + hi))
        for prop in proposals:
            if not (lo < prop < hi):
                continue
            cand_res, cand_dres = residual(prop)
            # demand the residual at least halve, or the fixed-point map can
            # crawl through all the iterations when the root sits near 1
            if abs(cand_res) <= 0.5 * abs(res):
                lam, res, dres = prop, cand_res, cand_dres
                break
        else:
            # nothing improved: take the bisection midpoint unconditionally
            lam = 0.5 * (lo + hi)
            res, dres = residual(lam)
        if res < 0.0:
            lo = lam
        else:
            hi = lam
    return GeometricParams(
        decay=lam, iterations_used=iters, converged=abs(res) <= tol * p_rest
    )


def estimate_geometric(obs: PartialObservation, M: int) -> RankDistribution:
    """Geometric tail p(K+i) = p_K * lambda^i calibrated to the unseen mass."""
    if M < obs.k:
        raise ConfigError(f"M={M} smaller than observed K={obs.k}")
    p_rest = obs.p_rest
    probs = np.zeros(M)
    probs[: obs.k] = obs.top_probs
    if M == obs.k or p_rest <= EPS_MASS:
        # nothing beyond the prefix to assign; absorb rounding as deficiency
        return RankDistribution(
            probs, obs.k, "geometric", deficiency=1.0 - float(probs.sum())
        )
    p_k = float(obs.top_probs[-1])
    params = solve_geometric_decay(p_rest, p_k, M, obs.k)
    tail = p_k * params.decay ** np.arange(1, M - obs.k + 1)
    if not params.converged:
        # the parametric tail misses the mass target; rescale it to close the gap
        tail *= p_rest / tail.sum()
    probs[obs.k :] = tail
    return RankDistribution(probs, obs.k, "geometric")


@dataclass(frozen=True)
class ZipfianParams:
    alpha: float
    beta: float
    loss: float


@dataclass(frozen=True)
class SumTable:
    """Precomputed tail sums T[a, b] = sum_{i=1..M-K} (beta / (i + beta))^alpha.

    Shared by every fit with the same (M, K): fitting then reduces to a
    grid argmin against the observed mass ratio.
    """

    M: int
    K: int
    alphas: np.ndarray
    betas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.alphas.size, self.betas.size):
            raise DistributionError(
                f"table shape {self.values.shape} does not match grid "
                f"({self.alphas.size}, {self.betas.size})"
            )
        if not (1 <= self.K < self.M):
            raise DistributionError(f"need 1 <= K < M, got K={self.K}, M={self.M}")
        if np.any(self.values <= 0.0):
            raise DistributionError("tail sums must be positive")


def build_sum_table(M: int, K: int) -> SumTable:
    if not (1 <= K < M):
        raise ConfigError(f"need 1 <= K < M, got K={K}, M={M}")
    ranks = np.arange(1, M - K + 1)
    ratios = BETA_GRID[None, :] / (ranks[:, None] + BETA_GRID[None, :])  # (n_tail, n_beta)
    values = np.empty((ALPHA_GRID.size, BETA_GRID.size))
    for i, alpha in enumerate(ALPHA_GRID):
        values[i] = (ratios**alpha).sum(axis=0)
    return SumTable(M=M, K=K, alphas=ALPHA_GRID.copy(), betas=BETA_GRID.copy(), values=values)


def save_sum_table(table: SumTable, path) -> None:
    with open(path, "wb") as fh:
        fh.write(SUMTABLE_MAGIC)
        fh.write(
            struct.pack("<4I", table.M, table.K, table.alphas.size, table.betas.size)
        )
        for arr in (table.alphas, table.betas, table.values):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_sum_table(path) -> SumTable:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(SUMTABLE_MAGIC):
        raise CorruptFileError(f"{path}: file too short for magic")
    if blob[: len(SUMTABLE_MAGIC)] != SUMTABLE_MAGIC:
        raise VersionMismatchError(
            f"{path}: bad magic {blob[:len(SUMTABLE_MAGIC)]!r}, expected {SUMTABLE_MAGIC!r}"
        )
    off = len(SUMTABLE_MAGIC)
    if off + 16 > len(blob):
        raise CorruptFileError(f"{path}: truncated header")
    M, K, n_a, n_b = struct.unpack("<4I", blob[off : off + 16])
    off += 16
    want = (n_a + n_b + n_a * n_b) * 8
    if len(blob) - off != want:
        raise CorruptFileError(
            f"{path}: payload is {len(blob) - off} bytes, expected {want}"
        )

    def take(count):
        nonlocal off
        out = np.frombuffer(blob, dtype="<f8", count=count, offset=off).copy()
        off += count * 8
        return out

    alphas = take(n_a)
    betas = take(n_b)
    values = take(n_a * n_b).reshape(n_a, n_b)
    return SumTable(M=int(M), K=int(K), alphas=alphas, betas=betas, values=values)


def fit_zipfian(obs: PartialObservation, table: SumTable) -> ZipfianParams:
    """Grid argmin of (T - p_rest/p_K)^2 + (alpha-1)^2 + 0.001 (beta-2.7)^2.

    Ties resolve to the smallest alpha, then the smallest beta (row-major
    first minimum).
    """
    p_k = float(obs.top_probs[-1])
    r = obs.p_rest / p_k
    losses = (
        (table.values - r) ** 2
        + ((table.alphas - 1.0) ** 2)[:, None]
        + 0.001 * ((table.betas - 2.7) ** 2)[None, :]
    )
    ia, ib = np.unravel_index(int(np.argmin(losses)), losses.shape)
    return ZipfianParams(
        alpha=float(table.alphas[ia]),
        beta=float(table.betas[ib]),
        loss=float(losses[ia, ib]),
    )


def estimate_zipfian(
    obs: PartialObservation,
    M: int,
    table: SumTable | None = None,
    rescale: bool = True,
) -> tuple[RankDistribution, ZipfianParams | None]:
    """Zipfian tail p(K+i) = p_K * (beta / (i + beta))^alpha.

    With ``rescale`` the fitted tail is scaled to absorb the unseen mass
    exactly; without it the raw parametric tail is kept and the signed
    gap is reported as deficiency. The degenerate-mass path returns an
    all-zero tail and no parameters.
    """
    if M < obs.k:
        raise ConfigError(f"M={M} smaller than observed K={obs.k}")
    probs = np.zeros(M)
    probs[: obs.k] = obs.top_probs
    p_rest = obs.p_rest
    if M == obs.k or p_rest <= EPS_MASS:
        dist = RankDistribution(
            probs, obs.k, "zipfian", deficiency=1.0 - float(probs.sum())
        )
        return dist, None
    if table is None:
        table = build_sum_table(M, obs.k)
    if table.M != M or table.K != obs.k:
        raise ConfigError(
            f"table built for (M={table.M}, K={table.K}), need (M={M}, K={obs.k})"
        )
    params = fit_zipfian(obs, table)
    p_k = float(obs.top_probs[-1])
    ranks = np.arange(1, M - obs.k + 1)
    tail = p_k * (params.beta / (ranks + params.beta)) ** params.alpha
    if rescale:
        tail *= p_rest / tail.sum()
        probs[obs.k :] = tail
        return RankDistribution(probs, obs.k, "zipfian"), params
    probs[obs.k :] = tail
    dist = RankDistribution(
        probs, obs.k, "zipfian", deficiency=1.0 - float(probs.sum())
    )
    return dist, params


def estimate_mlp(
    obs: PartialObservation, M: int, model: MlpModel | None
) -> RankDistribution:
    """Network tail: the unseen mass times the model's softmax over tail ranks."""
    if obs.k == M:
        probs = obs.top_probs.copy()
        return RankDistribution(
            probs, obs.k, "mlp", deficiency=1.0 - float(probs.sum())
        )
    if model is None:
        raise ConfigError("mlp estimator needs a trained model when K < M")
    if model.K != obs.k:
        raise ConfigError(f"model expects K={model.K}, observation has K={obs.k}")
    if model.M != M:
        raise ConfigError(f"model predicts M={model.M} ranks, requested M={M}")
    probs = np.zeros(M)
    probs[: obs.k] = obs.top_probs
    p_rest = obs.p_rest
    if p_rest <= EPS_MASS:
        return RankDistribution(
            probs, obs.k, "mlp", deficiency=1.0 - float(probs.sum())
        )
    tail = mlp_forward(model, np.log(obs.top_probs))
    probs[obs.k :] = p_rest * tail
    return RankDistribution(probs, obs.k, "mlp")


def _as_probs(dist) -> np.ndarray:
    probs = dist.probs if isinstance(dist, RankDistribution) else dist
    return np.asarray(probs, dtype=np.float64)


def kl_divergence(estimated, real, smoothing: float = 0.0) -> float:
    """KL(real || estimated) over ranks, with 0 * log 0 = 0.

    Accepts RankDistributions or plain arrays. Returns inf when the
    estimate assigns zero mass to a rank the real distribution uses and
    no smoothing is requested; smoothing > 0 mixes a flat floor into the
    estimate first.
    """
    est = _as_probs(estimated)
    real = _as_probs(real)
    if real.shape != est.shape or real.ndim != 1:
        raise ConfigError(f"shape mismatch {real.shape} vs {est.shape}")
    if smoothing > 0.0:
        est = est + smoothing
        est = est / est.sum()
    support = real > 0.0
    if np.any(est[support] <= 0.0):
        return float("inf")
    return float(np.sum(real[support] * (np.log(real[support]) - np.log(est[support]))))


def make_estimator(
    name: str,
    M: int,
    model: MlpModel | None = None,
    rescale: bool = True,
) -> EstimatorFn:
    """Bind an estimator family to a rank-list size M.

    The Zipfian variant caches one sum table per observed K; the network
    variant requires a model whose (K, M) must match each observation.
    """
    if name == "naive":
        return lambda obs: estimate_naive(obs, M)
    if name == "geometric":
        return lambda obs: estimate_geometric(obs, M)
    if name == "zipfian":
        tables: dict[int, SumTable] = {}

        def fit(obs: PartialObservation) -> RankDistribution:
            if obs.k < M and obs.k not in tables:
                tables[obs.k] = build_sum_table(M, obs.k)
            return estimate_zipfian(obs, M, tables.get(obs.k), rescale=rescale)[0]

        return fit
    if name == "mlp":
        return lambda obs: estimate_mlp(obs, M, model)
    raise ConfigError(f"unknown estimator {name!r}")
