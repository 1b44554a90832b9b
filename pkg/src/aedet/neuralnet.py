"""A small numpy network stack: one valid-mode convolution, dense layers,
ReLU, inverted dropout and softmax cross-entropy.

Two architectures are supported:

* CNN -- ``h1 x w1`` patch -> conv (``N_k`` kernels ``k x k``) -> ReLU ->
  dense ``N_d`` -> ReLU -> dropout -> 2 outputs.
* MLP -- flattened patch (``D = h1*w1``) -> dense ``L`` -> ReLU -> dense
  ``M`` -> ReLU -> dropout -> 2 outputs.

The convolution is implemented as cross-correlation (no kernel flip).
Dense weights follow the ``y = W x + b`` convention, i.e. ``W`` has shape
``(n_out, n_in)``.
"""

import copy
import csv
from dataclasses import asdict, dataclass, field
from typing import ClassVar

import numpy as np

from .container import read_container, write_container
from .errors import DataError
from .seeding import make_rng


@dataclass(frozen=True)
class CnnSpec:
    h1: int = 256
    w1: int = 10
    k: int = 5
    n_filters: int = 32
    n_dense: int = 128
    dropout_p: float = 0.5
    kind: ClassVar[str] = "cnn"

    def __post_init__(self):
        if not 1 <= self.k <= min(self.h1, self.w1):
            raise ValueError(f"kernel {self.k} does not fit a {self.h1}x{self.w1} input")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")
        if self.n_filters < 1 or self.n_dense < 1:
            raise ValueError("layer sizes must be positive")

    @property
    def h2(self):
        return self.h1 - self.k + 1

    @property
    def w2(self):
        return self.w1 - self.k + 1

    def param_shapes(self):
        flat = self.h2 * self.w2 * self.n_filters
        return [
            ("conv_W", (self.n_filters, self.k, self.k)),
            ("conv_b", (self.n_filters,)),
            ("dense_W", (self.n_dense, flat)),
            ("dense_b", (self.n_dense,)),
            ("out_W", (2, self.n_dense)),
            ("out_b", (2,)),
        ]

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for _, s in self.param_shapes())


@dataclass(frozen=True)
class MlpSpec:
    h1: int = 256
    w1: int = 10
    n_hidden1: int = 2056
    n_hidden2: int = 64
    dropout_p: float = 0.5
    kind: ClassVar[str] = "mlp"

    def __post_init__(self):
        if self.n_hidden1 < 1 or self.n_hidden2 < 1:
            raise ValueError("hidden layer sizes must be >= 1")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p must lie in [0, 1)")

    @property
    def input_dim(self):
        return self.h1 * self.w1

    def param_shapes(self):
        return [
            ("hidden1_W", (self.n_hidden1, self.input_dim)),
            ("hidden1_b", (self.n_hidden1,)),
            ("hidden2_W", (self.n_hidden2, self.n_hidden1)),
            ("hidden2_b", (self.n_hidden2,)),
            ("out_W", (2, self.n_hidden2)),
            ("out_b", (2,)),
        ]

    @property
    def n_params(self):
        return sum(int(np.prod(s)) for _, s in self.param_shapes())


SPEC_TYPES = {"cnn": CnnSpec, "mlp": MlpSpec}


@dataclass
class TrainConfig:
    batch_size: int = 256
    max_epochs: int = 20
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    early_stop_patience: int = 5
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in (0, 1)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(eq=False)
class TrainedModel:
    spec: object
    params: dict
    history: list = field(default_factory=list)
    seed: int = 0
    best_epoch: int = -1
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Layers


def _as_batch(X):
    X = np.asarray(X)
    if X.ndim == 3 and X.shape[2] == 1:
        return X[None, :, :, 0], True
    if X.ndim == 2:
        return X[None], True
    return X, False


def _im2col(X, k):
    """``(B, h, w)`` -> ``(B*h2*w2, k*k)`` rows of k x k windows."""
    B, h, w = X.shape
    win = np.lib.stride_tricks.sliding_window_view(X, (k, k), axis=(1, 2))
    return np.ascontiguousarray(win).reshape(B * (h - k + 1) * (w - k + 1), k * k)


def conv2d_forward(X, W, b=None):
    """Valid-mode cross-correlation of single-channel input with `N_k` kernels.

    `X` is ``(h1, w1)``, ``(h1, w1, 1)`` or a batch ``(B, h1, w1)``; `W` is
    ``(N_k, k, k)`` (or one ``(k, k)`` kernel).  Output is
    ``([B,] h2, w2, N_k)`` with ``h2 = h1 - k + 1``.
    """
    Xb, single = _as_batch(X)
    W = np.asarray(W)
    if W.ndim == 2:
        W = W[None]
    n_k, k, _ = W.shape
    B, h, w = Xb.shape
    if k > h or k > w:
        raise ValueError(f"kernel {k}x{k} larger than input {h}x{w}")
    Y = (_im2col(Xb, k) @ W.reshape(n_k, k * k).T).reshape(B, h - k + 1, w - k + 1, n_k)
    if b is not None:
        Y = Y + np.asarray(b)
    return Y[0] if single else Y


def conv2d_backward(X, W, dY, need_dx=True):
    """Gradients of :func:`conv2d_forward` w.r.t. input, kernels and biases."""
    Xb, single = _as_batch(X)
    W = np.asarray(W)
    dY = np.asarray(dY)
    if single:
        dY = dY[None]
    n_k, k, _ = W.shape
    cols = _im2col(Xb, k)
    dZ = dY.reshape(-1, n_k)
    dW = (dZ.T @ cols).reshape(n_k, k, k)
    db = dZ.sum(axis=0)
    dX = None
    if need_dx:
        pad = k - 1
        dYp = np.pad(dY, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(dYp, (k, k), axis=(1, 2))
        # win: (B, h1, w1, N_k, k, k); full correlation with the flipped kernel
        dX = np.tensordot(win, W[:, ::-1, ::-1], axes=([3, 4, 5], [0, 1, 2]))
        if single:
            dX = dX[0]
    return dX, dW, db


def relu(x):
    return np.maximum(x, 0)


def dense_forward(x, W, b, activation="relu"):
    """``phi(W x + b)`` for a vector or a batch of row vectors."""
    x = np.asarray(x)
    W = np.asarray(W)
    if x.shape[-1] != W.shape[1] or W.shape[0] != np.shape(b)[0]:
        raise ValueError(f"shape mismatch: x {x.shape}, W {W.shape}, b {np.shape(b)}")
    z = x @ W.T + b
    if activation == "relu":
        return relu(z)
    if activation == "identity":
        return z
    raise ValueError(f"unknown activation {activation!r}")


def dense_backward(x, W, dz):
    """Gradients of the affine part of :func:`dense_forward`; `dz` is w.r.t. ``Wx+b``."""
    x2 = np.atleast_2d(x)
    dz2 = np.atleast_2d(dz)
    return dz2 @ W, dz2.T @ x2, dz2.sum(axis=0)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, one_hot):
    """Softmax probabilities, mean cross-entropy and its gradient w.r.t. logits."""
    logits = np.atleast_2d(logits)
    one_hot = np.atleast_2d(one_hot)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    probs = np.exp(log_p)
    n = logits.shape[0]
    loss = float(-(one_hot * log_p).sum() / n)
    grad = (probs - one_hot) / n
    return probs, loss, grad.astype(logits.dtype, copy=False)


def dropout_mask(shape, p, rng, dtype=np.float32):
    """Inverted-dropout mask: 0 with probability p, else ``1/(1-p)``."""
    if p == 0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= p
    return keep.astype(dtype) * np.asarray(1.0 / (1.0 - p), dtype=dtype)


def dropout_apply(x, p, mode, rng=None):
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout p must lie in [0, 1)")
    if mode == "eval" or p == 0:
        return x
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    x = np.asarray(x)
    return x * dropout_mask(x.shape, p, rng, x.dtype.type)


# ---------------------------------------------------------------------------
# Networks


def init_params(spec, rng, dtype=np.float32):
    """He-style uniform fan-in initialisation, zero biases."""
    params = {}
    for name, shape in spec.param_shapes():
        if name.endswith("_b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            lim = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-lim, lim, size=shape).astype(dtype)
    return params


def forward(spec, params, X, train=False, rng=None):
    """Logits for a batch ``(B, h1, w1)``; returns ``(logits, cache)``."""
    dtype = params["out_W"].dtype
    X = np.asarray(X, dtype=dtype)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != (spec.h1, spec.w1):
        raise ValueError(f"patches {X.shape[1:]} do not match spec ({spec.h1}, {spec.w1})")
    B = X.shape[0]
    cache = {"X": X}
    if spec.kind == "cnn":
        conv = conv2d_forward(X, params["conv_W"], params["conv_b"])
        a1 = relu(conv).reshape(B, -1)
        cache.update(conv=conv, a1=a1)
        h = dense_forward(a1, params["dense_W"], params["dense_b"], "relu")
        names = ("dense", "out")
    else:
        a1 = X.reshape(B, -1)
        h1 = dense_forward(a1, params["hidden1_W"], params["hidden1_b"], "relu")
        cache.update(a1=a1, h1=h1)
        h = dense_forward(h1, params["hidden2_W"], params["hidden2_b"], "relu")
        names = ("hidden2", "out")
    mask = None
    if train and spec.dropout_p > 0:
        mask = dropout_mask(h.shape, spec.dropout_p, rng, dtype.type)
    hd = h * mask if mask is not None else h
    logits = dense_forward(hd, params["out_W"], params["out_b"], "identity")
    cache.update(h=h, hd=hd, mask=mask, names=names)
    return logits, cache


def backward(spec, params, cache, dlogits):
    """Parameter gradients given ``dL/dlogits``."""
    grads = {}
    d_hd, grads["out_W"], grads["out_b"] = dense_backward(cache["hd"], params["out_W"], dlogits)
    dh = d_hd * cache["mask"] if cache["mask"] is not None else d_hd
    dz = dh * (cache["h"] > 0)
    if spec.kind == "cnn":
        da1, grads["dense_W"], grads["dense_b"] = dense_backward(cache["a1"], params["dense_W"], dz)
        dconv = da1.reshape(cache["conv"].shape) * (cache["conv"] > 0)
        _, grads["conv_W"], grads["conv_b"] = conv2d_backward(
            cache["X"], params["conv_W"], dconv, need_dx=False)
    else:
        dh1, grads["hidden2_W"], grads["hidden2_b"] = dense_backward(
            cache["h1"], params["hidden2_W"], dz)
        dz1 = dh1 * (cache["h1"] > 0)
        _, grads["hidden1_W"], grads["hidden1_b"] = dense_backward(
            cache["a1"], params["hidden1_W"], dz1)
    return grads


def loss_and_grads(spec, params, X, Y, train=True, rng=None):
    logits, cache = forward(spec, params, X, train=train, rng=rng)
    probs, loss, dlogits = softmax_xent(logits, np.asarray(Y, dtype=logits.dtype))
    return loss, backward(spec, params, cache, dlogits), probs


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= (self.lr / c1) * m / (np.sqrt(v / c2) + self.eps)


class SGD:
    def __init__(self, lr=1e-2):
        self.lr = lr

    def step(self, params, grads):
        for name, g in grads.items():
            params[name] -= self.lr * g


def _stratified_val_split(y, frac, rng):
    val = []
    for c in (0, 1):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(idx.size)]
        n_val = int(round(frac * idx.size))
        if idx.size >= 2:
            n_val = min(max(n_val, 1), idx.size - 1)
        else:
            n_val = 0
        val.append(idx[:n_val])
    val = np.sort(np.concatenate(val))
    train = np.setdiff1d(np.arange(y.size), val)
    return train, val


def _evaluate(spec, params, X, Y, batch=512):
    if X.shape[0] == 0:
        return float("nan"), float("nan")
    probs = _predict_params(spec, params, X, batch)
    y = Y.argmax(axis=1)
    loss = float(-np.log(np.maximum(probs[np.arange(y.size), y], 1e-300)).mean())
    acc = float((probs.argmax(axis=1) == y).mean())
    return loss, acc


def train(spec, data, cfg=None, dtype=np.float32, log=None):
    """Mini-batch training with stratified validation and early stopping.

    Improvement means higher validation accuracy, or equal accuracy with
    lower validation loss.  Training stops after `early_stop_patience`
    epochs without improvement and the best epoch's parameters are
    returned.  All randomness derives from ``cfg.seed``.
    """
    cfg = cfg or TrainConfig()
    X = np.asarray(data.patches, dtype=dtype)
    Y = np.asarray(data.labels, dtype=dtype)
    if X.shape[0] == 0:
        raise DataError("empty training set")
    if X.shape[1:] != (spec.h1, spec.w1):
        raise DataError(f"patches {X.shape[1:]} do not match spec ({spec.h1}, {spec.w1})")
    y = Y.argmax(axis=1)
    if np.unique(y).size < 2:
        raise DataError("training data must contain both classes")

    tr_idx, va_idx = _stratified_val_split(y, cfg.val_fraction, make_rng(cfg.seed, "val_split"))
    params = init_params(spec, make_rng(cfg.seed, "init"), dtype)
    drop_rng = make_rng(cfg.seed, "dropout")
    shuffle_rng = make_rng(cfg.seed, "shuffle")
    opt = Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)

    best = (copy.deepcopy(params), -1, -np.inf, np.inf)
    history, wait = [], 0
    for epoch in range(cfg.max_epochs):
        order = tr_idx[shuffle_rng.permutation(tr_idx.size)]
        losses, correct = [], 0
        for start in range(0, order.size, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            loss, grads, probs = loss_and_grads(spec, params, X[b], Y[b], train=True, rng=drop_rng)
            opt.step(params, grads)
            losses.append(loss * b.size)
            correct += int((probs.argmax(axis=1) == y[b]).sum())
        tr_loss = float(np.sum(losses) / max(order.size, 1))
        tr_acc = correct / max(order.size, 1)
        va_loss, va_acc = _evaluate(spec, params, X[va_idx], Y[va_idx])
        history.append({"epoch": epoch, "train_loss": tr_loss, "train_acc": tr_acc,
                        "val_loss": va_loss, "val_acc": va_acc})
        if log:
            log(f"epoch {epoch:2d} loss {tr_loss:.4f} acc {tr_acc:.3f} "
                f"val_loss {va_loss:.4f} val_acc {va_acc:.3f}")
        if va_acc > best[2] or (va_acc == best[2] and va_loss < best[3]):
            best = (copy.deepcopy(params), epoch, va_acc, va_loss)
            wait = 0
        else:
            wait += 1
            if wait >= cfg.early_stop_patience:
                break
    return TrainedModel(spec, best[0], history, cfg.seed, best[1])


def _predict_params(spec, params, X, batch=512):
    out = []
    for start in range(0, X.shape[0], batch):
        logits, _ = forward(spec, params, X[start:start + batch], train=False)
        out.append(softmax(logits))
    return np.concatenate(out) if out else np.zeros((0, 2))


def predict(model, patches, batch=512):
    """Class probabilities ``(N, 2)``; dropout is off, rows sum to 1."""
    X = np.asarray(patches)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1:] != (model.spec.h1, model.spec.w1):
        raise ValueError(f"patches {X.shape[1:]} do not match the network input "
                         f"({model.spec.h1}, {model.spec.w1})")
    return _predict_params(model.spec, model.params, X.astype(model.params["out_W"].dtype), batch)


# ---------------------------------------------------------------------------
# Persistence


def save_model(path, model):
    """Write the model container: header with spec and seed, then float32 tensors."""
    meta = {"spec": asdict(model.spec), "seed": model.seed, "best_epoch": model.best_epoch,
            "extra": model.meta}
    tensors = [(name, model.params[name].astype("<f4")) for name, _ in model.spec.param_shapes()]
    write_container(path, model.spec.kind, meta, tensors)


def load_model(path):
    kind, meta, tensors = read_container(path)
    if kind not in SPEC_TYPES:
        raise DataError(f"{path}: not a neural network model (kind {kind!r})")
    spec = SPEC_TYPES[kind](**meta["spec"])
    params = {name: tensors[name] for name, _ in spec.param_shapes()}
    return TrainedModel(spec, params, [], meta["seed"], meta["best_epoch"], meta.get("extra", {}))


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([row["epoch"]] + [f"{row[k]:.8g}" for k in HISTORY_FIELDS[1:]])
