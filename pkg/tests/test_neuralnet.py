import numpy as np
import pytest

from aedet.errors import DataError
from aedet.evaluation import CNN_GRID
from aedet.neuralnet import (
    CnnSpec, MlpSpec, TrainConfig, conv2d_forward, dense_forward, dropout_apply, forward,
    TrainedModel, init_params, load_model, loss_and_grads, predict, save_model, softmax_xent, train,
    write_history,
)
from aedet.seeding import make_rng
from aedet.transforms import PatchDataset
from helpers import finite_difference_errors, random_instance


# --- layers ------------------------------------------------------------------

def test_conv_delta_kernel():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    out = conv2d_forward(X, np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 1.0


def test_conv_symmetric_kernel():
    X = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert conv2d_forward(X, np.eye(2))[0, 0, 0] == 5.0


def test_conv_is_cross_correlation():
    X = np.arange(9.0).reshape(3, 3)
    K = np.array([[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_array_equal(conv2d_forward(X, K)[:, :, 0], [[1, 2], [4, 5]])


@pytest.mark.parametrize("k", CNN_GRID["k"])
@pytest.mark.parametrize("n_k", CNN_GRID["n_filters"])
def test_conv_shape_law(k, n_k):
    rng = np.random.default_rng(k * 10 + n_k)
    out = conv2d_forward(rng.standard_normal((256, 10, 1)), rng.standard_normal((n_k, k, k)))
    assert out.shape == (256 - k + 1, 10 - k + 1, n_k)


def test_conv_linear_in_input():
    rng = np.random.default_rng(0)
    X1, X2 = rng.standard_normal((2, 8, 6))
    W = rng.standard_normal((3, 3, 3))
    np.testing.assert_allclose(conv2d_forward(2 * X1 - 0.5 * X2, W),
                               2 * conv2d_forward(X1, W) - 0.5 * conv2d_forward(X2, W), atol=1e-9)


def test_conv_kernel_too_large():
    with pytest.raises(ValueError):
        conv2d_forward(np.zeros((3, 3)), np.zeros((1, 4, 4)))


def test_dense_examples():
    np.testing.assert_array_equal(dense_forward([1.0, -2.0], np.eye(2), np.zeros(2)), [1, 0])
    np.testing.assert_array_equal(dense_forward([5.0, 7.0], np.zeros((2, 2)), [0.3, -1.0]), [0.3, 0.0])
    np.testing.assert_array_equal(
        dense_forward([1.0, 1.0], [[1, 2], [3, 4]], [0, 0], "identity"), [3, 7])
    with pytest.raises(ValueError):
        dense_forward([1.0], np.eye(2), np.zeros(2))


def test_softmax_examples():
    p, _, _ = softmax_xent([[0.0, 0.0]], [[1, 0]])
    np.testing.assert_array_equal(p, [[0.5, 0.5]])
    p, _, _ = softmax_xent([[1000.0, 0.0]], [[1, 0]])
    assert p[0, 0] == 1.0 and np.all(np.isfinite(p))
    _, loss, grad = softmax_xent([[0.0, 0.0]], [[0, 1]])
    assert loss == pytest.approx(np.log(2))
    np.testing.assert_allclose(grad, [[0.5, -0.5]])


def test_dropout_modes():
    rng = np.random.default_rng(1)
    x = rng.standard_normal(50)
    assert dropout_apply(x, 0.5, "eval") is x
    np.testing.assert_array_equal(dropout_apply(x, 0.0, "train", rng), x)
    with pytest.raises(ValueError):
        dropout_apply(x, 1.0, "train", rng)


def test_dropout_statistics():
    x = np.ones(10 ** 6)
    out = dropout_apply(x, 0.5, "train", np.random.default_rng(2))
    assert abs(np.mean(out != 0) - 0.5) < 0.002
    assert abs(out.mean() - 1.0) < 0.005


# --- gradients ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_gradients_match_finite_differences(seed):
    errs = finite_difference_errors(*random_instance(seed))
    assert max(errs.values()) < 1e-5, errs


def test_reference_gradient_instance():
    rng = np.random.default_rng(3)
    spec = CnnSpec(8, 6, 3, 2, 4, 0.5)
    params = init_params(spec, rng, np.float64)
    X = rng.standard_normal((3, 8, 6))
    Y = np.eye(2)[[0, 1, 1]]
    errs = finite_difference_errors(spec, params, X, Y)
    assert set(errs) == {"conv_W", "conv_b", "dense_W", "dense_b", "out_W", "out_b"}
    assert max(errs.values()) < 1e-5


def test_descent_at_small_lr():
    spec, params, X, Y = random_instance(4)
    loss0, grads, _ = loss_and_grads(spec, params, X, Y, train=False)
    for name in params:
        params[name] = params[name] - 1e-5 * grads[name]
    loss1, _, _ = loss_and_grads(spec, params, X, Y, train=False)
    assert loss1 < loss0


# --- training -----------------------------------------------------------------

def toy_dataset(n=400, seed=0, h1=2, w1=1):
    """Two Gaussian blobs, linearly separable with a wide margin."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    X = rng.standard_normal((n, h1, w1)) * 0.3 + (2 * y - 1)[:, None, None] * 1.5
    return PatchDataset(X.astype(np.float32), np.eye(2, dtype=np.float32)[y],
                        np.array(["r"] * n, dtype=object), np.arange(n))


def test_separable_toy_trains():
    data = toy_dataset()
    spec = MlpSpec(2, 1, 8, 4, 0.0)
    model = train(spec, data, TrainConfig(batch_size=32, learning_rate=0.01, seed=1))
    acc = (predict(model, data.patches).argmax(axis=1) == data.y).mean()
    assert acc >= 0.99
    held = toy_dataset(200, seed=9)
    p1 = predict(model, held.patches)[held.y == 1, 1]
    assert np.all(p1 > 0.9)
    assert len(model.history) <= 20


def test_zero_learning_rate_is_flat():
    data = toy_dataset(200)
    spec = CnnSpec(2, 1, 1, 2, 3, 0.5)
    model = train(spec, data, TrainConfig(learning_rate=0.0, max_epochs=4, seed=2))
    init = init_params(spec, make_rng(2, "init"))
    for name in init:
        np.testing.assert_array_equal(model.params[name], init[name])
    assert len({h["val_loss"] for h in model.history}) == 1
    assert len({h["val_acc"] for h in model.history}) == 1


def test_training_is_deterministic():
    data = toy_dataset(300)
    spec = CnnSpec(2, 1, 1, 3, 4, 0.5)
    cfg = TrainConfig(batch_size=16, max_epochs=3, seed=5)
    a, b = train(spec, data, cfg), train(spec, data, cfg)
    for name in a.params:
        assert a.params[name].tobytes() == b.params[name].tobytes()
    assert a.history == b.history


def test_early_stopping_respects_patience():
    data = toy_dataset(300)
    spec = MlpSpec(2, 1, 4, 4, 0.0)
    model = train(spec, data, TrainConfig(batch_size=16, learning_rate=0.05, max_epochs=20,
                                          early_stop_patience=2, seed=0))
    hist = model.history
    assert len(hist) - 1 - model.best_epoch <= 2
    best = hist[model.best_epoch]
    assert all(h["val_acc"] <= best["val_acc"] for h in hist)


def test_train_errors():
    data = toy_dataset(50)
    with pytest.raises(DataError):
        train(MlpSpec(3, 1, 2, 2), data)
    one_class = PatchDataset(data.patches, np.tile([[1, 0]], (50, 1)).astype(np.float32),
                             data.recording_ids, data.starts)
    with pytest.raises(DataError):
        train(MlpSpec(2, 1, 2, 2), one_class)
    with pytest.raises(ValueError):
        TrainConfig(val_fraction=0.0)
    with pytest.raises(ValueError):
        CnnSpec(4, 2, 3)


# --- prediction and persistence ------------------------------------------------

def test_predict_rows_sum_to_one_and_pure():
    rng = np.random.default_rng(6)
    spec = CnnSpec(6, 4, 2, 3, 5)
    model = TrainedModel(spec, init_params(spec, rng))
    X = rng.standard_normal((7, 6, 4)) * 50
    p = predict(model, X)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert p.dtype == np.float64
    dup = predict(model, np.concatenate([X[:1], X[:1]]))
    np.testing.assert_array_equal(dup[0], dup[1])
    np.testing.assert_array_equal(predict(model, X), p)
    with pytest.raises(ValueError):
        predict(model, np.zeros((2, 5, 4)))


def test_forward_eval_ignores_rng():
    spec, params, X, _ = random_instance(2)
    a, _ = forward(spec, params, X, train=False, rng=np.random.default_rng(0))
    b, _ = forward(spec, params, X, train=False, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(a, b)


def test_model_round_trip(tmp_path):
    data = toy_dataset(120)
    model = train(CnnSpec(2, 1, 1, 2, 3), data, TrainConfig(max_epochs=2, seed=3))
    model.meta = {"note": "x"}
    save_model(tmp_path / "m.bin", model)
    back = load_model(tmp_path / "m.bin")
    assert back.spec == model.spec and back.meta == {"note": "x"} and back.seed == 3
    np.testing.assert_array_equal(predict(back, data.patches), predict(model, data.patches))
    first = (tmp_path / "m.bin").read_bytes()
    save_model(tmp_path / "m.bin", back)
    assert (tmp_path / "m.bin").read_bytes() == first


def test_history_csv(tmp_path):
    hist = [{"epoch": 0, "train_loss": 0.5, "train_acc": 0.8, "val_loss": 0.4, "val_acc": 0.9}]
    write_history(tmp_path / "h.csv", hist)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,train_acc,val_loss,val_acc" and lines[1].startswith("0,")


def test_param_counts():
    spec = CnnSpec(256, 10, 5, 32, 128)
    assert (spec.h2, spec.w2) == (252, 6)
    assert spec.n_params == 32 * 25 + 32 + 128 * 252 * 6 * 32 + 128 + 2 * 128 + 2
    assert MlpSpec(256, 1, 8, 64).input_dim == 256
