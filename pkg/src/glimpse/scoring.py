"""Passage acquisition: dump files and the synthetic oracle.

A passage is a labeled sequence of partial observations. Dumps are
UTF-8 JSONL (one passage per line, gzip recognized by suffix) holding
log-space probabilities; in memory everything is linear-space. The
synthetic generator produces paired human-like and machine-like corpora
whose every position also carries the full ground-truth distribution,
which makes KL evaluation possible without any provider access.
"""

from __future__ import annotations

import gzip
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .distribution import PartialObservation, truncate_observation
from .errors import ConfigError, DumpError, ObservationError
from .mlp import TrainingExample, make_training_examples

MAX_SKIP_FRACTION = 0.1

LABELS = ("human", "machine", "unknown")


class DumpWarning(UserWarning):
    """Raised as a warning when salvage mode drops the tail of a dump."""


@dataclass(frozen=True)
class PassageObservation:
    """One labeled passage: ordered positions, optional raw text/tokens,
    optional per-position ground-truth distributions (synthetic corpora)."""

    id: str
    label: str
    positions: tuple[PartialObservation, ...]
    text: str | None = None
    tokens: tuple[str, ...] | None = None
    true_probs: tuple[np.ndarray, ...] | None = None
    source_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(self.positions))
        if not self.positions:
            raise ObservationError(f"passage {self.id!r} has no positions")
        if self.label not in LABELS:
            raise ObservationError(
                f"passage {self.id!r} label {self.label!r} not one of {LABELS}"
            )
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(self.tokens))
            if len(self.tokens) != len(self.positions):
                raise ObservationError(
                    f"passage {self.id!r}: {len(self.tokens)} tokens for "
                    f"{len(self.positions)} positions"
                )
        if self.true_probs is not None:
            truths = tuple(np.asarray(t, dtype=np.float64) for t in self.true_probs)
            object.__setattr__(self, "true_probs", truths)
            if len(truths) != len(self.positions):
                raise ObservationError(
                    f"passage {self.id!r}: {len(truths)} truths for "
                    f"{len(self.positions)} positions"
                )

    @property
    def n_positions(self) -> int:
        return len(self.positions)


def truncate_passage(passage: PassageObservation, k: int) -> PassageObservation:
    """Ablate the passage down to top-k observations (no-op when k >= stored K)."""
    return replace(
        passage,
        positions=tuple(truncate_observation(obs, k) for obs in passage.positions),
    )


def passage_to_record(passage: PassageObservation) -> dict:
    rec: dict = {"id": passage.id, "label": passage.label}
    if passage.text is not None:
        rec["text"] = passage.text
    if passage.tokens is not None:
        rec["tokens"] = list(passage.tokens)
    rec["token_logprobs"] = [math.log(obs.token_prob) for obs in passage.positions]
    rec["top_logprobs"] = [
        [math.log(float(p)) for p in obs.top_probs] for obs in passage.positions
    ]
    if passage.true_probs is not None:
        rec["true_probs"] = [[float(p) for p in t] for t in passage.true_probs]
    rec["meta"] = passage.source_meta
    return rec


def record_to_passage(rec: dict, line: int | None = None) -> PassageObservation:
    """Parse one dump record, skipping unusable positions.

    A position is skipped when its token logprob or its top list is null
    or empty (provider gaps); more than 10% skips rejects the passage.
    An unsorted top list rejects the passage outright: silently sorting
    could mask a provider bug that corrupts rank semantics.
    """
    if not isinstance(rec, dict):
        raise DumpError("record is not a JSON object", line)
    for fld in ("id", "label", "token_logprobs", "top_logprobs"):
        if fld not in rec:
            raise DumpError(f"missing field {fld!r}", line)
    token_lps = rec["token_logprobs"]
    top_lps = rec["top_logprobs"]
    if not isinstance(token_lps, list) or not isinstance(top_lps, list):
        raise DumpError("token_logprobs and top_logprobs must be arrays", line)
    if len(token_lps) != len(top_lps):
        raise DumpError(
            f"{len(token_lps)} token logprobs vs {len(top_lps)} top lists", line
        )
    truths = rec.get("true_probs")
    if truths is not None and len(truths) != len(token_lps):
        raise DumpError(f"{len(truths)} true_probs for {len(token_lps)} positions", line)
    tokens = rec.get("tokens")
    if tokens is not None and len(tokens) != len(token_lps):
        raise DumpError(f"{len(tokens)} tokens for {len(token_lps)} positions", line)

    kept: list[int] = []
    positions: list[PartialObservation] = []
    for j, (tlp, top) in enumerate(zip(token_lps, top_lps)):
        if tlp is None or top is None or top == []:
            continue
        top = np.asarray(top, dtype=np.float64)
        if np.any(np.diff(top) > 1e-9):
            raise DumpError(f"position {j}: top logprobs not sorted descending", line)
        try:
            positions.append(
                PartialObservation(token_prob=math.exp(tlp), top_probs=np.exp(top))
            )
        except (ObservationError, ValueError, TypeError, OverflowError) as exc:
            raise DumpError(f"position {j}: {exc}", line) from exc
        kept.append(j)

    n_total = len(token_lps)
    if n_total == 0 or not positions:
        raise DumpError("passage has no usable positions", line)
    skipped = n_total - len(positions)
    if skipped / n_total > MAX_SKIP_FRACTION:
        raise DumpError(
            f"{skipped}/{n_total} positions skipped exceeds {MAX_SKIP_FRACTION:.0%}",
            line,
        )
    meta = rec.get("meta", {})
    if not isinstance(meta, dict):
        raise DumpError("meta must be an object", line)
    if skipped:
        meta = dict(meta, skipped_positions=skipped)
    try:
        return PassageObservation(
            id=str(rec["id"]),
            label=rec["label"],
            positions=tuple(positions),
            text=rec.get("text"),
            tokens=tuple(tokens[j] for j in kept) if tokens is not None else None,
            true_probs=tuple(np.asarray(truths[j], dtype=np.float64) for j in kept)
            if truths is not None
            else None,
            source_meta=meta,
        )
    except ObservationError as exc:
        raise DumpError(str(exc), line) from exc


def _open_text(path, mode: str):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8")


def write_dump(passages: Iterable[PassageObservation], path) -> None:
    """Stream passages to JSONL (constant memory in the passage count)."""
    with _open_text(path, "w") as fh:
        for passage in passages:
            fh.write(json.dumps(passage_to_record(passage), separators=(",", ":")))
            fh.write("\n")


def read_dump(path, salvage: bool = False) -> list[PassageObservation]:
    """Read a dump written by :func:`write_dump`.

    With ``salvage`` a malformed line stops reading and the valid prefix
    is returned with a warning instead of raising.
    """
    passages: list[PassageObservation] = []
    with _open_text(path, "r") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if raw.strip() == "":
                continue
            try:
                rec = json.loads(raw)
                passages.append(record_to_passage(rec, line=line_no))
            except DumpError as exc:
                if not salvage:
                    raise
                warnings.warn(
                    f"{path}: salvaged {len(passages)} passages; {exc}", DumpWarning
                )
                return passages
            except json.JSONDecodeError as exc:
                if not salvage:
                    raise DumpError(f"invalid JSON: {exc.msg}", line_no) from exc
                warnings.warn(
                    f"{path}: salvaged {len(passages)} passages; "
                    f"line {line_no}: invalid JSON",
                    DumpWarning,
                )
                return passages
    return passages


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic oracle.

    One base next-token distribution is drawn per position; both classes
    observe it (top-K and the recorded truth), but tokens are sampled
    from it tempered by the class sharpness: sampling weight is
    truth^sharpness renormalized. Sharpness > 1 biases toward the head
    of the distribution (machine-like greedy decoding), sharpness < 1
    flattens it (human-like surprisal). Equal sharpness makes the two
    classes statistically identical.
    """

    family: str = "geometric"
    n_passages: int = 100
    length: int = 50
    M: int = 100
    K: int = 5
    machine_sharpness: float = 2.5
    human_sharpness: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.family not in ("geometric", "zipfian", "mixture"):
            raise ConfigError(f"unknown family {self.family!r}")
        if not (1 <= self.K <= self.M):
            raise ConfigError(f"need 1 <= K <= M, got K={self.K}, M={self.M}")
        if self.n_passages < 1 or self.length < 1:
            raise ConfigError("n_passages and length must be positive")
        if self.machine_sharpness <= 0 or self.human_sharpness <= 0:
            raise ConfigError("sharpness values must be positive")


@dataclass(frozen=True)
class SyntheticCorpus:
    human: tuple[PassageObservation, ...]
    machine: tuple[PassageObservation, ...]
    config: SynthConfig

    def __post_init__(self):
        if len(self.human) != len(self.machine):
            raise ConfigError(
                f"unpaired corpus: {len(self.human)} human vs {len(self.machine)} machine"
            )

    @property
    def passages(self) -> tuple[PassageObservation, ...]:
        return self.human + self.machine


TRUTH_JITTER = 0.25  # lognormal sigma roughening the parametric families


def _draw_truth(rng: np.random.Generator, family: str, M: int) -> np.ndarray:
    """One full next-token distribution over M ranks, sorted descending.

    Each position gets a parametric decay roughened by lognormal noise
    and re-sorted, so truths are near-geometric or near-Zipfian rather
    than exact family members, the way real model heads are.
    """
    if family == "mixture":
        family = "geometric" if rng.random() < 0.5 else "zipfian"
    ranks = np.arange(M)
    if family == "geometric":
        lam = rng.uniform(0.3, 0.7)
        probs = lam**ranks
    else:
        alpha = rng.uniform(0.8, 2.0)
        beta = rng.uniform(1.0, 5.0)
        probs = (beta / (ranks + 1 + beta)) ** alpha
    probs = probs * np.exp(TRUTH_JITTER * rng.standard_normal(M))
    probs[::-1].sort()
    return probs / probs.sum()


def _temper(probs: np.ndarray, sharpness: float) -> np.ndarray:
    if sharpness == 1.0:
        return probs
    out = probs**sharpness
    return out / out.sum()


def _synth_passage(
    rng: np.random.Generator, config: SynthConfig, label: str, index: int
) -> PassageObservation:
    sharpness = (
        config.machine_sharpness if label == "machine" else config.human_sharpness
    )
    positions = []
    truths = []
    for _ in range(config.length):
        truth = _draw_truth(rng, config.family, config.M)
        sampler = _temper(truth, sharpness)
        rank = int(rng.choice(config.M, p=sampler))
        positions.append(
            PartialObservation(
                token_prob=float(truth[rank]), top_probs=truth[: config.K].copy()
            )
        )
        truths.append(truth)
    return PassageObservation(
        id=f"syn-{label}-{index:04d}",
        label=label,
        positions=tuple(positions),
        true_probs=tuple(truths),
        source_meta={
            "dataset": "synthetic",
            "source": f"synth-{config.family}",
            "sharpness": sharpness,
            "K": config.K,
            "M": config.M,
            "seed": config.seed,
        },
    )


def gen_synthetic(config: SynthConfig) -> SyntheticCorpus:
    """Paired corpus with known truths; deterministic under the seed."""
    rng = np.random.default_rng(config.seed)
    human = tuple(
        _synth_passage(rng, config, "human", i) for i in range(config.n_passages)
    )
    machine = tuple(
        _synth_passage(rng, config, "machine", i) for i in range(config.n_passages)
    )
    return SyntheticCorpus(human=human, machine=machine, config=config)


def truth_matrix(passages: Sequence[PassageObservation]) -> np.ndarray:
    """Stack every position's ground-truth distribution into one array."""
    rows = [t for p in passages for t in (p.true_probs or ())]
    if not rows:
        raise ConfigError("no ground-truth distributions in these passages")
    return np.stack(rows)


def teacher_examples(
    passages: Sequence[PassageObservation], K: int, M: int
) -> list[TrainingExample]:
    """Network training pairs from any dump that carries truths."""
    return make_training_examples(truth_matrix(passages), K, M)
