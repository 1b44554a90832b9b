"""Shared independent oracles for the test suite."""

import numpy as np

from aedet.neuralnet import CnnSpec, MlpSpec, init_params, loss_and_grads


def random_instance(seed):
    """A small CNN or MLP problem in float64 with random shapes."""
    rng = np.random.default_rng(seed)
    h1, w1 = int(rng.integers(4, 9)), int(rng.integers(3, 7))
    if seed % 2 == 0:
        k = int(rng.integers(1, min(h1, w1) + 1))
        spec = CnnSpec(h1, w1, k, int(rng.integers(1, 4)), int(rng.integers(2, 6)), 0.5)
    else:
        spec = MlpSpec(h1, w1, int(rng.integers(2, 7)), int(rng.integers(2, 6)), 0.5)
    params = init_params(spec, rng, np.float64)
    for name in params:
        if name.endswith("_b"):
            params[name] = 0.1 * rng.standard_normal(params[name].shape)
    B = int(rng.integers(2, 6))
    X = rng.standard_normal((B, h1, w1))
    Y = np.eye(2)[rng.integers(0, 2, B)]
    return spec, params, X, Y


def finite_difference_errors(spec, params, X, Y, eps=1e-4, mask_seed=0):
    """Max relative error per parameter tensor, analytic vs central differences.

    Dropout stays on with a fixed mask (same rng seed for every evaluation).
    Relative error is ``|a - n| / max(|a| + |n|, 1e-8)``.
    """
    def loss(p):
        return loss_and_grads(spec, p, X, Y, True, np.random.default_rng(mask_seed))[0]

    _, grads, _ = loss_and_grads(spec, params, X, Y, True, np.random.default_rng(mask_seed))
    errors = {}
    for name, value in params.items():
        num = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            old = value[idx]
            value[idx] = old + eps
            up = loss(params)
            value[idx] = old - eps
            down = loss(params)
            value[idx] = old
            num[idx] = (up - down) / (2 * eps)
        denom = np.maximum(np.abs(grads[name]) + np.abs(num), 1e-8)
        errors[name] = float(np.max(np.abs(grads[name] - num) / denom))
    return errors


def brute_roc_area(scores, labels):
    """Pairwise count over every positive/negative pair."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    pos, neg = s[y == 1], s[y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (pos.size * neg.size)


def brute_pr_area(scores, labels):
    """Step integral of precision over recall from an exhaustive threshold sweep."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    n_pos = int(y.sum())
    area, prev_recall = 0.0, 0.0
    for thr in sorted(set(s.tolist()), reverse=True):
        pred = s >= thr
        tp = int(np.sum(pred & (y == 1)))
        recall = tp / n_pos
        precision = tp / int(pred.sum())
        area += (recall - prev_recall) * precision
        prev_recall = recall
    return area


def naive_median(x, length):
    """Sort-based sliding median with replicate padding."""
    x = list(np.asarray(x, dtype=float))
    half = length // 2
    padded = [x[0]] * half + x + [x[-1]] * half
    return np.array([sorted(padded[i:i + length])[half] for i in range(len(x))])
