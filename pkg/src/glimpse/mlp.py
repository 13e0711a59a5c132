"""Single-hidden-layer network that predicts tail rank probabilities.

The network maps the log-space top-K probabilities to a distribution over
the remaining M-K ranks (softmax output). Training minimizes the
cross-entropy between the predicted tail and a teacher tail distribution;
the teacher prefix does not depend on the network and drops out of the
objective. Everything runs on plain numpy with mini-batch gradient
descent so that seeded runs are reproducible bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, CorruptFileError, TrainingDivergedError, VersionMismatchError

MODEL_MAGIC = b"GLMLP001"


@dataclass(frozen=True)
class MlpModel:
    """Weights of the tail estimator for one fixed (K, M) shape.

    W1 is H x K, W2 is (M-K) x H; the hidden nonlinearity is a rectifier.
    """

    K: int
    M: int
    H: int
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    activation: str = "relu"
    version: str = MODEL_MAGIC.decode()
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (1 <= self.K < self.M):
            raise ConfigError(f"need 1 <= K < M, got K={self.K}, M={self.M}")
        if self.H < 1:
            raise ConfigError(f"hidden width must be positive, got {self.H}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")
        shapes = {
            "W1": (self.H, self.K),
            "b1": (self.H,),
            "W2": (self.M - self.K, self.H),
            "b2": (self.M - self.K,),
        }
        for name, want in shapes.items():
            arr = getattr(self, name)
            if arr.shape != want:
                raise ConfigError(f"{name} has shape {arr.shape}, expected {want}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} contains non-finite values")


@dataclass(frozen=True)
class TrainingExample:
    """One supervised pair: log-space top-K input, full-rank target probabilities."""

    input: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "input", np.asarray(self.input, dtype=np.float64))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=np.float64))
        if self.input.ndim != 1 or self.target.ndim != 1:
            raise ConfigError("input and target must be 1-D")
        if np.any(self.input > 0):
            raise ConfigError("inputs are log-probabilities and must be <= 0")
        if np.any(self.target < 0):
            raise ConfigError("target probabilities must be non-negative")
        if self.target.sum() > 1.0 + 1e-6:
            raise ConfigError("target mass exceeds 1")


@dataclass(frozen=True)
class TrainConfig:
    H: int = 64
    epochs: int = 20
    step_size: float = 0.01
    batch_size: int = 128
    seed: int = 0
    strict: bool = False
    dataset_id: str = ""


def init_mlp(K: int, M: int, H: int = 64, seed: int = 0) -> MlpModel:
    """Seeded Gaussian init, scaled by fan-in; biases start at zero."""
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0.0, np.sqrt(2.0 / K), size=(H, K))
    W2 = rng.normal(0.0, np.sqrt(2.0 / H), size=(M - K, H))
    return MlpModel(K=K, M=M, H=H, W1=W1, b1=np.zeros(H), W2=W2, b2=np.zeros(M - K))


def _forward_batch(model: MlpModel, X: np.ndarray):
    hidden = np.maximum(X @ model.W1.T + model.b1, 0.0)
    logits = hidden @ model.W2.T + model.b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    return hidden, log_probs


def mlp_forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Predict the tail distribution (length M-K) for one log-space input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.K,):
        raise ConfigError(f"input has shape {x.shape}, model expects ({model.K},)")
    if not np.all(np.isfinite(x)):
        raise ConfigError("input contains non-finite values")
    _, log_probs = _forward_batch(model, x[None, :])
    probs = np.exp(log_probs[0])
    return probs / probs.sum()


def loss_and_grads(model: MlpModel, X: np.ndarray, tail_targets: np.ndarray):
    """Mean cross-entropy of the predicted tail against teacher tails, plus grads.

    The teacher tail need not be normalized: its total mass scales the
    softmax side of the gradient, matching a target distribution whose
    prefix was handled outside the network.
    """
    B = X.shape[0]
    hidden, log_probs = _forward_batch(model, X)
    loss = float(-(tail_targets * log_probs).sum() / B)
    t_rest = tail_targets.sum(axis=1, keepdims=True)
    d_logits = (t_rest * np.exp(log_probs) - tail_targets) / B
    dW2 = d_logits.T @ hidden
    db2 = d_logits.sum(axis=0)
    d_hidden = d_logits @ model.W2
    d_hidden[hidden <= 0.0] = 0.0
    dW1 = d_hidden.T @ X
    db1 = d_hidden.sum(axis=0)
    return loss, {"W1": dW1, "b1": db1, "W2": dW2, "b2": db2}


def _stack_dataset(dataset):
    if not dataset:
        raise ConfigError("training dataset is empty")
    K = dataset[0].input.shape[0]
    M = dataset[0].target.shape[0]
    for i, ex in enumerate(dataset):
        if ex.input.shape[0] != K or ex.target.shape[0] != M:
            raise ConfigError(f"example {i} has inconsistent (K, M) shape")
    X = np.stack([ex.input for ex in dataset])
    T = np.stack([ex.target for ex in dataset])
    return K, M, X, T[:, K:]


def train_mlp(dataset: list[TrainingExample], config: TrainConfig) -> MlpModel:
    """Mini-batch gradient descent on the tail cross-entropy.

    Returns the model after ``config.epochs`` epochs (zero epochs returns
    the seeded initialization untouched). ``strict`` aborts on the first
    epoch whose mean loss increased.
    """
    K, M, X, tails = _stack_dataset(dataset)
    model = init_mlp(K, M, config.H, config.seed)
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]

    def mean_loss(m):
        loss, _ = loss_and_grads(m, X, tails)
        return loss

    history = [mean_loss(model)]
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            batch = order[start : start + config.batch_size]
            loss, grads = loss_and_grads(model, X[batch], tails[batch])
            if not np.isfinite(loss):
                raise TrainingDivergedError("non-finite batch loss", epoch=epoch)
            model = replace(
                model,
                W1=model.W1 - config.step_size * grads["W1"],
                b1=model.b1 - config.step_size * grads["b1"],
                W2=model.W2 - config.step_size * grads["W2"],
                b2=model.b2 - config.step_size * grads["b2"],
            )
        epoch_loss = mean_loss(model)
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError("non-finite epoch loss", epoch=epoch)
        if config.strict and epoch_loss > history[-1]:
            raise TrainingDivergedError(
                f"loss increased {history[-1]:.6g} -> {epoch_loss:.6g}", epoch=epoch
            )
        history.append(epoch_loss)

    meta = {
        "dataset_id": config.dataset_id,
        "examples": n,
        "epochs": config.epochs,
        "step_size": config.step_size,
        "batch_size": config.batch_size,
        "seed": config.seed,
        "initial_loss": history[0],
        "final_loss": history[-1],
    }
    return replace(model, training_meta=meta)


def make_training_examples(truths: np.ndarray, K: int, M: int) -> list[TrainingExample]:
    """Build supervised pairs from full teacher distributions.

    Teacher rows longer than M are truncated with the residual mass folded
    into rank M; rows shorter than M are rejected. Inputs are the logs of
    the teacher's own top-K probabilities.
    """
    truths = np.asarray(truths, dtype=np.float64)
    if truths.ndim != 2:
        raise ConfigError("truths must be a 2-D array of distributions")
    if truths.shape[1] < M:
        raise ConfigError(f"teacher rows have {truths.shape[1]} ranks, need >= {M}")
    if not (1 <= K < M):
        raise ConfigError(f"need 1 <= K < M, got K={K}, M={M}")
    examples = []
    for row in truths:
        target = row[:M].copy()
        target[M - 1] += row[M:].sum()
        if np.any(row[:K] <= 0):
            raise ConfigError("teacher top-K probabilities must be positive")
        examples.append(TrainingExample(input=np.log(row[:K]), target=target))
    return examples


def save_model(model: MlpModel, path) -> None:
    """Write the binary model file (magic, shape ints, float64 weights, metadata)."""
    meta = json.dumps(
        {"activation": model.activation, "version": model.version, "training_meta": model.training_meta}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<3i", model.K, model.M, model.H))
        for arr in (model.W1, model.b1, model.W2, model.b2):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<I", len(meta)))
        fh.write(meta)


def load_model(path) -> MlpModel:
    """Read a model file written by :func:`save_model`; round-trips bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MODEL_MAGIC):
        raise CorruptFileError(f"{path}: file too short for magic")
    if blob[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise VersionMismatchError(
            f"{path}: bad magic {blob[:len(MODEL_MAGIC)]!r}, expected {MODEL_MAGIC!r}"
        )
    off = len(MODEL_MAGIC)

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise CorruptFileError(f"{path}: truncated at byte {off}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    K, M, H = struct.unpack("<3i", take(12))
    if not (1 <= K < M) or H < 1:
        raise CorruptFileError(f"{path}: implausible shape K={K}, M={M}, H={H}")
    arrays = {}
    for name, shape in (("W1", (H, K)), ("b1", (H,)), ("W2", (M - K, H)), ("b2", (M - K,))):
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(take(count * 8), dtype="<f8").reshape(shape).copy()
    (meta_len,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptFileError(f"{path}: unreadable metadata blob: {exc}") from exc
    return MlpModel(
        K=K,
        M=M,
        H=H,
        **arrays,
        activation=meta.get("activation", "relu"),
        version=meta.get("version", MODEL_MAGIC.decode()),
        training_meta=meta.get("training_meta", {}),
    )
