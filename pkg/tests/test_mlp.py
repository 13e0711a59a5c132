"""Tail-estimator network: forward pass, analytic gradients, training
behavior, and model-file round trips."""

import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glimpse.distribution import kl_divergence
from glimpse.errors import (
    ConfigError,
    CorruptFileError,
    TrainingDivergedError,
    VersionMismatchError,
)
from glimpse.mlp import (
    MODEL_MAGIC,
    MlpModel,
    TrainConfig,
    TrainingExample,
    init_mlp,
    load_model,
    loss_and_grads,
    make_training_examples,
    mlp_forward,
    save_model,
    train_mlp,
)


def zero_model(K=3, M=10, H=4):
    return MlpModel(
        K=K,
        M=M,
        H=H,
        W1=np.zeros((H, K)),
        b1=np.zeros(H),
        W2=np.zeros((M - K, H)),
        b2=np.zeros(M - K),
    )


# --------------------------------------------------------------------- forward


def test_forward_zero_weights_is_uniform():
    model = zero_model()
    out = mlp_forward(model, np.log([0.5, 0.3, 0.1]))
    np.testing.assert_allclose(out, np.full(7, 1.0 / 7.0), atol=1e-15)


def test_forward_shape_validation():
    model = init_mlp(3, 10, seed=0)
    with pytest.raises(ConfigError):
        mlp_forward(model, np.log([0.5, 0.3]))
    with pytest.raises(ConfigError):
        mlp_forward(model, np.array([np.nan, -1.0, -2.0]))


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_forward_is_a_distribution(seed):
    rng = np.random.default_rng(seed)
    model = init_mlp(4, 15, H=8, seed=seed % 1000)
    x = -rng.exponential(3.0, size=4)
    out = mlp_forward(model, x)
    assert np.all(out >= 0)
    assert abs(out.sum() - 1.0) <= 1e-9


def test_model_shape_validation():
    with pytest.raises(ConfigError):
        init_mlp(5, 5)
    with pytest.raises(ConfigError):
        MlpModel(
            K=2, M=5, H=3,
            W1=np.zeros((3, 2)), b1=np.zeros(3),
            W2=np.zeros((2, 3)),  # wrong output width
            b2=np.zeros(3),
        )
    with pytest.raises(ConfigError):
        MlpModel(
            K=2, M=5, H=3,
            W1=np.full((3, 2), np.inf), b1=np.zeros(3),
            W2=np.zeros((3, 3)), b2=np.zeros(3),
        )


# ------------------------------------------------------------------- gradients


def finite_difference_check(seed, h=1e-5):
    """Max relative error of analytic grads vs central differences."""
    rng = np.random.default_rng(seed)
    K, M, H, B = 3, 10, 4, 5
    model = init_mlp(K, M, H=H, seed=seed)
    X = -rng.exponential(2.0, size=(B, K))
    tails = rng.dirichlet(np.ones(M - K), size=B) * rng.uniform(0.1, 0.9, (B, 1))
    _, grads = loss_and_grads(model, X, tails)
    worst = 0.0
    for name in ("W1", "b1", "W2", "b2"):
        arr = getattr(model, name)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up, _ = loss_and_grads(model, X, tails)
            arr[idx] = orig - h
            down, _ = loss_and_grads(model, X, tails)
            arr[idx] = orig
            fd = (up - down) / (2 * h)
            scale = max(abs(fd), abs(grads[name][idx]), 1e-8)
            worst = max(worst, abs(fd - grads[name][idx]) / scale)
    return worst


def test_gradients_match_finite_differences():
    assert max(finite_difference_check(seed) for seed in range(10)) <= 1e-4


# -------------------------------------------------------------------- training


def one_hot_example():
    target = np.zeros(10)
    target[:3] = [0.5, 0.3, 0.1]
    target[7] = 0.1
    return TrainingExample(input=np.log([0.5, 0.3, 0.1]), target=target)


def test_overfit_one_hot_tail():
    ex = one_hot_example()
    model = train_mlp(
        [ex], TrainConfig(H=16, epochs=200, step_size=0.5, batch_size=1, seed=0)
    )
    tail = mlp_forward(model, ex.input)
    assert tail[7 - 3] > 0.9


def test_training_improves_on_geometric_tails():
    truth = 0.5 ** np.arange(10)
    truth /= truth.sum()
    dataset = make_training_examples(np.tile(truth, (50, 1)), 3, 10)
    cfg = TrainConfig(H=16, epochs=200, step_size=0.5, seed=0)
    trained = train_mlp(dataset, cfg)
    init = init_mlp(3, 10, H=16, seed=0)
    true_tail = truth[3:] / truth[3:].sum()
    x = dataset[0].input
    assert kl_divergence(mlp_forward(trained, x), true_tail) < kl_divergence(
        mlp_forward(init, x), true_tail
    )
    meta = trained.training_meta
    assert meta["final_loss"] <= meta["initial_loss"]
    assert meta["examples"] == 50 and meta["epochs"] == 200


def test_zero_epochs_returns_seeded_init():
    ex = one_hot_example()
    model = train_mlp([ex], TrainConfig(H=8, epochs=0, seed=3))
    reference = init_mlp(3, 10, H=8, seed=3)
    for name in ("W1", "b1", "W2", "b2"):
        np.testing.assert_array_equal(getattr(model, name), getattr(reference, name))


def test_training_diverges_loudly():
    # two conflicting one-hot targets under a huge step oscillate, so the
    # strict monotone-loss check trips on the first epoch
    x = np.log([0.5, 0.3, 0.1])
    t1 = np.zeros(10)
    t1[:3] = [0.5, 0.3, 0.1]
    t1[3] = 0.1
    t2 = t1.copy()
    t2[3], t2[9] = 0.0, 0.1
    dataset = [
        TrainingExample(input=x, target=t1),
        TrainingExample(input=x, target=t2),
    ]
    with pytest.raises(TrainingDivergedError, match="epoch"):
        train_mlp(
            dataset,
            TrainConfig(H=8, epochs=50, step_size=100.0, batch_size=1, seed=0, strict=True),
        )


def test_training_rejects_inconsistent_shapes():
    a = one_hot_example()
    b = TrainingExample(input=np.log([0.5, 0.3]), target=np.full(10, 0.1))
    with pytest.raises(ConfigError):
        train_mlp([a, b], TrainConfig())
    with pytest.raises(ConfigError):
        train_mlp([], TrainConfig())


def test_training_example_validation():
    with pytest.raises(ConfigError):
        TrainingExample(input=np.array([0.1]), target=np.array([1.0]))
    with pytest.raises(ConfigError):
        TrainingExample(input=np.array([-1.0]), target=np.array([-0.2, 0.5]))
    with pytest.raises(ConfigError):
        TrainingExample(input=np.array([-1.0]), target=np.array([0.7, 0.7]))


def test_make_training_examples_folds_overflow():
    rows = np.tile(0.5 ** np.arange(12), (3, 1))
    rows /= rows.sum(axis=1, keepdims=True)
    examples = make_training_examples(rows, 3, 10)
    assert len(examples) == 3
    assert examples[0].target.shape == (10,)
    assert examples[0].target[9] == pytest.approx(rows[0, 9:].sum(), abs=1e-15)
    np.testing.assert_allclose(examples[0].input, np.log(rows[0, :3]), atol=1e-15)


def test_make_training_examples_rejects_short_rows():
    with pytest.raises(ConfigError):
        make_training_examples(np.full((2, 5), 0.2), 3, 10)


def test_make_training_examples_rejects_zero_head():
    rows = np.zeros((1, 10))
    rows[0, 0] = 1.0
    with pytest.raises(ConfigError):
        make_training_examples(rows, 3, 10)


# ----------------------------------------------------------------- persistence


def test_model_round_trip_bit_exact(tmp_path):
    ex = one_hot_example()
    model = train_mlp(
        [ex], TrainConfig(H=8, epochs=5, step_size=0.1, seed=1, dataset_id="unit")
    )
    path = tmp_path / "model.bin"
    save_model(model, path)
    loaded = load_model(path)
    assert (loaded.K, loaded.M, loaded.H) == (model.K, model.M, model.H)
    for name in ("W1", "b1", "W2", "b2"):
        np.testing.assert_array_equal(getattr(loaded, name), getattr(model, name))
    assert loaded.training_meta == model.training_meta
    assert loaded.version == model.version


def test_model_load_rejects_wrong_magic(tmp_path):
    path = tmp_path / "model.bin"
    save_model(init_mlp(3, 10, H=4, seed=0), path)
    raw = path.read_bytes()
    path.write_bytes(b"NOTMAGIC" + raw[len(MODEL_MAGIC):])
    with pytest.raises(VersionMismatchError):
        load_model(path)


def test_model_load_rejects_truncation(tmp_path):
    path = tmp_path / "model.bin"
    save_model(init_mlp(3, 10, H=4, seed=0), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 30])
    with pytest.raises(CorruptFileError):
        load_model(path)


def test_forward_identical_across_processes():
    code = (
        "import numpy as np\n"
        "from glimpse.mlp import init_mlp, mlp_forward\n"
        "model = init_mlp(3, 10, H=8, seed=42)\n"
        "out = mlp_forward(model, np.log([0.5, 0.3, 0.1]))\n"
        "print(out.tobytes().hex())\n"
    )
    runs = [
        subprocess.run(
            [sys.executable, "-c", code], capture_output=True, text=True, check=True
        ).stdout
        for _ in range(2)
    ]
    assert runs[0] == runs[1]
