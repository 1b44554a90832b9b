"""Detection metrics, median smoothing, cross-validation grids and
class-conditional spectra of high-scoring patches.
"""

import csv
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .features import pca_dim, rfe_dim
from .seeding import make_rng

THRESHOLD = 0.5


def _scores_labels(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if s.size == 0:
        raise ValueError("empty input")
    if s.size != y.size:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    return s, y


@dataclass
class ConfusionMetrics:
    f1: float
    tpr: float
    tnr: float
    precision: float
    tp: int
    fp: int
    fn: int
    tn: int
    tpr_undefined: bool = False
    tnr_undefined: bool = False


def confusion_metrics(scores, labels, threshold=THRESHOLD):
    """F1, TPR and TNR of the decision ``score >= threshold``.

    A rate whose denominator is zero is reported as 1 and flagged.
    """
    s, y = _scores_labels(scores, labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    tn = int(np.sum(~pred & (y == 0)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    tpr = tp / (tp + fn) if tp + fn else 1.0
    tnr = tn / (tn + fp) if tn + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ConfusionMetrics(f1, tpr, tnr, precision, tp, fp, fn, tn,
                            tp + fn == 0, tn + fp == 0)


def roc_area(scores, labels):
    """Mann-Whitney estimate ``P(s+ > s-) + P(s+ = s-)/2`` via mid-ranks."""
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC area needs both classes")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _threshold_counts(s, y):
    """Cumulative (tp, fp) at each distinct score, highest score first."""
    order = np.argsort(-s, kind="stable")
    s_sorted, y_sorted = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), s_sorted.size - 1]
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    return s_sorted[last], tp, fp


def roc_curve(scores, labels):
    """ROC points ``(fpr, tpr, thresholds)`` from (0, 0) to (1, 1)."""
    s, y = _scores_labels(scores, labels)
    thr, tp, fp = _threshold_counts(s, y)
    n_pos, n_neg = max(int(y.sum()), 1), max(int((y == 0).sum()), 1)
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    return fpr, tpr, np.r_[np.inf, thr]


def pr_area(scores, labels):
    """Average precision: sum of precision at each recall step over positives.

    Tied scores form one threshold step, so every positive in a tied block
    receives the precision measured at the end of the block (the value a
    threshold sweep reports).
    """
    s, y = _scores_labels(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("PR area needs at least one positive")
    _, tp, fp = _threshold_counts(s, y)
    d_tp = np.diff(np.r_[0, tp])
    return float(np.sum(d_tp * tp / (tp + fp)) / n_pos)


def pr_curve(scores, labels):
    """Precision-recall points ``(recall, precision, thresholds)``."""
    s, y = _scores_labels(scores, labels)
    thr, tp, fp = _threshold_counts(s, y)
    n_pos = max(int(y.sum()), 1)
    return tp / n_pos, tp / (tp + fp), thr


@dataclass
class EvalReport:
    f1: float
    tpr: float
    tnr: float
    roc_area: float
    pr_area: float
    n_pos: int
    n_neg: int
    tnr_undefined: bool = False
    roc_points: tuple = field(default=(), repr=False)
    pr_points: tuple = field(default=(), repr=False)

    def as_row(self):
        return {"f1": self.f1, "tpr": self.tpr, "tnr": self.tnr, "roc_area": self.roc_area,
                "pr_area": self.pr_area, "n_pos": self.n_pos, "n_neg": self.n_neg}


def evaluate_scores(scores, labels, threshold=THRESHOLD):
    """Full metric suite for class-1 scores."""
    s, y = _scores_labels(scores, labels)
    cm = confusion_metrics(s, y, threshold)
    n_pos, n_neg = int(y.sum()), int((y == 0).sum())
    both = n_pos > 0 and n_neg > 0
    return EvalReport(
        cm.f1, cm.tpr, cm.tnr,
        roc_area(s, y) if both else float("nan"),
        pr_area(s, y) if n_pos else float("nan"),
        n_pos, n_neg, cm.tnr_undefined,
        roc_curve(s, y)[:2] if both else (),
        pr_curve(s, y)[:2] if n_pos else (),
    )


# ---------------------------------------------------------------------------
# Median filter


def median_kernel_length(kernel_s, frame_rate):
    """Largest odd integer not exceeding ``kernel_s * frame_rate`` (at least 1)."""
    n = int(math.floor(kernel_s * frame_rate + 1e-9))
    if n % 2 == 0:
        n -= 1
    return max(n, 1)


def median_filter(scores, kernel_s=None, frame_rate=None, length=None):
    """Sliding median with replicate padding; output length equals input length.

    Give either `length` directly or `kernel_s` and `frame_rate`.
    """
    x = np.asarray(scores, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty input")
    if length is None:
        length = median_kernel_length(kernel_s, frame_rate)
    if length < 1 or length % 2 == 0:
        raise ValueError("median kernel length must be a positive odd integer")
    if length == 1:
        return x.copy()
    half = length // 2
    padded = np.pad(x, half, mode="edge")
    return np.median(np.lib.stride_tricks.sliding_window_view(padded, length), axis=1)


def median_filter_groups(scores, groups, length):
    """Median-filter each contiguous run of equal `groups` values separately."""
    scores = np.asarray(scores, dtype=np.float64)
    groups = np.asarray(groups)
    out = np.empty_like(scores)
    bounds = np.r_[0, np.flatnonzero(groups[1:] != groups[:-1]) + 1, groups.size]
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        out[lo:hi] = median_filter(scores[lo:hi], length=length)
    return out


# ---------------------------------------------------------------------------
# Cross-validation grids

CNN_GRID = {"k": (2, 3, 4, 5), "n_filters": (8, 16, 32), "n_dense": (16, 64, 128, 256)}
MLP_GRID = {"w1": (1, 10), "n_hidden1": (8, 256, 1028, 2056), "n_hidden2": (64, 512, 1024)}
PCA_STEPS = tuple(range(13))
RFE_STEPS = tuple(range(36))
SVM_GRID = {"C": (0.1, 1.0, 10.0), "gamma_scale": (1.0, 10.0)}


def product_grid(axes):
    keys = list(axes)
    return [dict(zip(keys, vals)) for vals in itertools.product(*(axes[k] for k in keys))]


def cnn_grid():
    return product_grid(CNN_GRID)


def mlp_grid():
    return product_grid(MLP_GRID)


def pca_grid():
    return [{"reduction": "pca", "n": n, "dim": pca_dim(n)} for n in PCA_STEPS]


def rfe_grid():
    return [{"reduction": "rfe", "m": m, "dim": rfe_dim(m)} for m in RFE_STEPS]


def baseline_grid(family):
    """Feature-reduction grid (PCA then RFE); SVM adds its C / gamma axes."""
    points = pca_grid() + rfe_grid()
    if family == "svm":
        points = [dict(p, **q) for p in points for q in product_grid(SVM_GRID)]
    return points


def family_grid(family):
    if family == "cnn":
        return cnn_grid()
    if family == "mlp":
        return mlp_grid()
    if family in ("nb", "rf", "svm"):
        return baseline_grid(family)
    raise ValueError(f"unknown model family {family!r}")


@dataclass
class GridResult:
    points: list
    mean_scores: np.ndarray
    fold_scores: np.ndarray
    n_params: np.ndarray
    best_index: int

    @property
    def best_point(self):
        return self.points[self.best_index]

    def ranking(self):
        """Grid indices from best to worst (score desc, then fewer parameters)."""
        score = np.where(np.isnan(self.mean_scores), -np.inf, self.mean_scores)
        return np.lexsort((np.arange(len(self.points)), self.n_params, -score))


def assign_folds(groups, labels_by_group, n_folds, seed, max_tries=100):
    """Assign whole groups (recordings) to folds.

    Every fold must see both classes; failing that the assignment is
    re-drawn, and a :class:`DataError` is raised after `max_tries`.
    `labels_by_group` maps a group to the array of its sample labels.
    """
    groups = list(groups)
    n_folds = min(n_folds, len(groups))
    if n_folds < 2:
        raise DataError("cross-validation needs at least two recordings")
    rng = make_rng(seed, "folds")
    for _ in range(max_tries):
        perm = rng.permutation(len(groups))
        fold_of = {groups[g]: i % n_folds for i, g in enumerate(perm)}
        ok = True
        for f in range(n_folds):
            ys = np.concatenate([np.asarray(labels_by_group[g]) for g in groups if fold_of[g] == f])
            if ys.size == 0 or ys.min() == ys.max():
                ok = False
                break
        if ok:
            return fold_of
    raise DataError("no fold assignment gives every fold both classes")


def crossval_grid(evaluate, groups, labels_by_group, grid, n_folds=10, seed=0,
                  n_params=None, log=None):
    """Mean validation score (PR area) of each grid point over recording folds.

    ``evaluate(train_groups, val_groups, point)`` trains on the training
    groups and returns the validation score.  Ties are broken by the
    smaller `n_params(point)` and then by grid order.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    fold_of = assign_folds(groups, labels_by_group, n_folds, seed)
    k = max(fold_of.values()) + 1
    scores = np.full((len(grid), k), np.nan)
    for gi, point in enumerate(grid):
        for f in range(k):
            train = [g for g in groups if fold_of[g] != f]
            val = [g for g in groups if fold_of[g] == f]
            scores[gi, f] = evaluate(train, val, point)
        if log:
            log(f"grid point {gi + 1}/{len(grid)} {point}: {np.nanmean(scores[gi]):.4f}")
    with np.errstate(all="ignore"):
        means = np.array([np.nanmean(r) if np.any(~np.isnan(r)) else np.nan for r in scores])
    sizes = np.array([n_params(p) if n_params else 0 for p in grid], dtype=np.int64)
    result = GridResult(grid, means, scores, sizes, 0)
    result.best_index = int(result.ranking()[0])
    return result


def write_grid_csv(path, result):
    """Ranked grid table; the best row is marked in the ``best`` column."""
    keys = []
    for p in result.points:
        keys += [k for k in p if k not in keys]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rank"] + keys + ["n_params", "mean_pr_area"]
                   + [f"fold_{i}" for i in range(result.fold_scores.shape[1])] + ["best"])
        for rank, gi in enumerate(result.ranking(), start=1):
            p = result.points[gi]
            w.writerow([rank] + [p.get(k, "") for k in keys] + [int(result.n_params[gi]),
                       f"{result.mean_scores[gi]:.6f}"]
                       + [f"{v:.6f}" for v in result.fold_scores[gi]]
                       + ["*" if gi == result.best_index else ""])


# ---------------------------------------------------------------------------
# Class spectra


@dataclass
class ClassSpectra:
    freq_axis: np.ndarray
    test: dict
    train: dict
    n_selected: dict
    constant: dict = field(default_factory=dict)


def _standardize_spectrum(x):
    x = np.asarray(x, dtype=np.float64)
    sd = x.std()
    if sd == 0 or not np.isfinite(sd):
        return np.zeros_like(x), True
    return (x - x.mean()) / sd, False


def ensemble_spectrum(patches):
    """Average of ``N x h1 x w1`` patches over patches and columns."""
    patches = np.asarray(patches, dtype=np.float64)
    return patches.mean(axis=(0, 2))


def class_spectra(probs, test_patches, train_data, top_frac=0.10, freq_axis=None):
    """Standardized spectra of the top-scoring test patches per class and of
    the labelled training patches of each class.
    """
    probs = np.asarray(probs, dtype=np.float64)
    test_patches = np.asarray(test_patches)
    n_test = test_patches.shape[0]
    if n_test == 0:
        raise DataError("empty test set")
    if not 0 < top_frac <= 1:
        raise ValueError("top_frac must lie in (0, 1]")
    n_top = max(1, int(math.ceil(top_frac * n_test - 1e-9)))
    test, train, counts, flags = {}, {}, {}, {}
    for c in (0, 1):
        top = np.argsort(-probs[:, c], kind="stable")[:n_top]
        test[c], flags[("test", c)] = _standardize_spectrum(ensemble_spectrum(test_patches[top]))
        members = train_data.patches[train_data.y == c]
        if members.shape[0] == 0:
            raise DataError(f"no labelled training patches for class {c}")
        train[c], flags[("train", c)] = _standardize_spectrum(ensemble_spectrum(members))
        counts[c] = n_top
    if freq_axis is None:
        freq_axis = train_data.freq_axis
    return ClassSpectra(np.asarray(freq_axis, dtype=np.float64), test, train, counts, flags)


def write_spectra_csv(path, spectra):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "x0_test", "x0_train", "x1_test", "x1_train"])
        for i, f in enumerate(spectra.freq_axis):
            w.writerow([f"{f:.6f}"] + [f"{v:.9f}" for v in (
                spectra.test[0][i], spectra.train[0][i], spectra.test[1][i], spectra.train[1][i])])


def write_report_csv(path, report, extra=None):
    row = dict(extra or {})
    row.update(report.as_row())
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(row))
        w.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row.values()])


def write_curve_csv(path, x, y, names):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for a, b in zip(x, y):
            w.writerow([f"{a:.8f}", f"{b:.8f}"])
