"""Traditional classifiers: Gaussian naive Bayes, random forest, RBF-SVM.

Each exposes ``*_fit(X, y, ...)`` returning a model and
``*_predict(model, X)`` returning an ``(N, 2)`` array of class
probabilities.  Labels are 0/1.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logsumexp

from .container import read_container, write_container
from .errors import DataError

VAR_FLOOR = 1e-9


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y).astype(np.int64).ravel()
    if X.shape[0] == 0:
        raise DataError("empty training data")
    if X.shape[0] != y.size:
        raise ValueError(f"{X.shape[0]} samples but {y.size} labels")
    if np.any((y != 0) & (y != 1)):
        raise ValueError("labels must be 0/1")
    return X, y


def _as_2d(X):
    X = np.asarray(X, dtype=np.float64)
    return X[None, :] if X.ndim == 1 else X


# ---------------------------------------------------------------------------
# Naive Bayes


@dataclass(eq=False)
class NbModel:
    priors: np.ndarray
    means: np.ndarray
    variances: np.ndarray


def nb_fit(X, y):
    X, y = _check_xy(X, y)
    if np.unique(y).size < 2:
        raise DataError("naive Bayes needs samples from both classes")
    priors = np.array([np.mean(y == c) for c in (0, 1)])
    means = np.stack([X[y == c].mean(axis=0) for c in (0, 1)])
    variances = np.stack([X[y == c].var(axis=0) for c in (0, 1)])
    return NbModel(priors, means, np.maximum(variances, VAR_FLOOR))


def nb_log_joint(model, X):
    X = _as_2d(X)
    ll = -0.5 * (np.log(2 * np.pi * model.variances)[None]
                 + (X[:, None, :] - model.means[None]) ** 2 / model.variances[None]).sum(axis=2)
    return ll + np.log(model.priors)


def nb_predict(model, X):
    lj = nb_log_joint(model, X)
    return np.exp(lj - logsumexp(lj, axis=1, keepdims=True))


# ---------------------------------------------------------------------------
# Random forest


@dataclass(eq=False)
class Tree:
    """Flat binary tree; ``left == -1`` marks a leaf holding `value` = P(class 1)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.left[node] >= 0
        while active.any():
            n = node[active]
            go_left = X[active, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.left[node] >= 0
        return node

    def predict_proba1(self, X):
        return self.value[self.apply(X)]


@dataclass(eq=False)
class RfModel:
    trees: list
    seeds: np.ndarray
    n_features: int


def _best_split(Xn, yn, feats):
    """Lowest weighted-Gini split over `feats`; returns (feature, threshold) or None."""
    n = yn.size
    cols = Xn[:, feats]
    order = np.argsort(cols, axis=0, kind="stable")
    sorted_x = np.take_along_axis(cols, order, axis=0)
    ones = np.cumsum(yn[order], axis=0)[:-1]
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    total1 = yn.sum()
    p_l = ones / n_left
    p_r = (total1 - ones) / n_right
    gini = n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)
    valid = sorted_x[1:] > sorted_x[:-1]
    if not valid.any():
        return None
    gini = np.where(valid, gini, np.inf)
    pos, j = np.unravel_index(np.argmin(gini), gini.shape)
    thr = 0.5 * (sorted_x[pos, j] + sorted_x[pos + 1, j])
    if not thr < sorted_x[pos + 1, j]:
        thr = sorted_x[pos, j]
    return int(feats[j]), float(thr)


def grow_tree(X, y, rng, max_features, min_samples_split=2):
    """CART tree with Gini splits, grown until nodes are pure or too small.

    `max_features` features are tried per node; if none of them separates
    the node's samples, the remaining features are tried before the node
    is made a leaf.
    """
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(value) - 1

    root = new_node(np.arange(y.size))
    stack = [(root, np.arange(y.size))]
    while stack:
        node, idx = stack.pop()
        yn = y[idx]
        if idx.size < min_samples_split or yn.min() == yn.max():
            continue
        perm = rng.permutation(d)
        split = _best_split(X[idx], yn, perm[:max_features])
        if split is None and max_features < d:
            split = _best_split(X[idx], yn, perm[max_features:])
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = new_node(idx[go_left]), new_node(idx[~go_left])
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        stack.append((ri, idx[~go_left]))
        stack.append((li, idx[go_left]))
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold),
                np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
                np.array(value))


def rf_fit(X, y, n_trees=100, seed=0, max_features=None, min_samples_split=2):
    """Bagged Gini trees with sqrt(d) candidate features per split."""
    X, y = _check_xy(X, y)
    n, d = X.shape
    max_features = max_features or max(1, int(np.sqrt(d)))
    seeds = np.random.SeedSequence(seed).generate_state(n_trees, dtype=np.uint32)
    trees = []
    for s in seeds:
        rng = np.random.default_rng(int(s))
        boot = rng.integers(0, n, size=n)
        trees.append(grow_tree(X[boot], y[boot], rng, max_features, min_samples_split))
    return RfModel(trees, seeds.astype(np.int64), d)


def rf_predict(model, X):
    X = _as_2d(X)
    p1 = np.mean([t.predict_proba1(X) for t in model.trees], axis=0)
    return np.column_stack([1.0 - p1, p1])


# ---------------------------------------------------------------------------
# RBF support vector machine


@dataclass(eq=False)
class SvmModel:
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    gamma: float
    C: float
    platt_a: float = 0.0
    platt_b: float = 0.0
    alphas: np.ndarray = field(default=None, repr=False)
    converged: bool = True
    n_iter: int = 0


def rbf_kernel(A, B, gamma):
    A = _as_2d(A)
    B = _as_2d(B)
    sq = (A ** 2).sum(1)[:, None] + (B ** 2).sum(1)[None, :] - 2.0 * A @ B.T
    return np.exp(-gamma * np.maximum(sq, 0.0))


def smo_solve(K, t, C, tol=1e-3, max_iter=100000):
    """Dual C-SVM by SMO with second-order working-set selection.

    `t` holds labels in {-1, +1}.  Stops once the maximal KKT violation
    ``m(alpha) - M(alpha)`` drops below `tol`.  Returns
    ``(alpha, b, converged, n_iter)``.
    """
    n = t.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    diag = np.diag(K)
    tau = 1e-12
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        up = ((t > 0) & (alpha < C)) | ((t < 0) & (alpha > 0))
        low = ((t > 0) & (alpha > 0)) | ((t < 0) & (alpha < C))
        score = -t * grad
        if not up.any() or not low.any():
            converged = True
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m_val = score[i]
        M_val = score[low].min()
        if m_val - M_val < tol:
            converged = True
            break
        # second-order choice of j among violating low indices
        cand = low & (score < m_val)
        b_ij = m_val - score[cand]
        a_ij = diag[i] + diag[cand] - 2.0 * K[i, cand]
        a_ij = np.where(a_ij > 0, a_ij, tau)
        j = int(np.flatnonzero(cand)[np.argmin(-(b_ij ** 2) / a_ij)])

        a = max(K[i, i] + K[j, j] - 2.0 * K[i, j], tau)
        if t[i] != t[j]:
            delta = (-grad[i] - grad[j]) / a
            diff = alpha[i] - alpha[j]
            ai, aj = alpha[i] + delta, alpha[j] + delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            delta = (grad[i] - grad[j]) / a
            s = alpha[i] + alpha[j]
            ai, aj = alpha[i] - delta, alpha[j] + delta
            if s > C:
                if ai > C:
                    ai, aj = C, s - C
            elif aj < 0:
                aj, ai = 0.0, s
            if s > C:
                if aj > C:
                    aj, ai = C, s - C
            elif ai < 0:
                ai, aj = 0.0, s
        d_i, d_j = ai - alpha[i], aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        grad += t * (t[i] * d_i * K[:, i] + t[j] * d_j * K[:, j])

    score = -t * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        b = float(score[free].mean())
    else:
        up = ((t > 0) & (alpha < C)) | ((t < 0) & (alpha > 0))
        low = ((t > 0) & (alpha > 0)) | ((t < 0) & (alpha < C))
        hi = score[up].max() if up.any() else 0.0
        lo = score[low].min() if low.any() else 0.0
        b = float(0.5 * (hi + lo))
    return alpha, b, converged, it


def platt_fit(f, y, max_iter=100):
    """Fit ``P(y=1|f) = 1 / (1 + exp(A f + B))`` by regularised Newton steps."""
    f = np.asarray(f, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int((y == 1).sum())
    n_neg = y.size - n_pos
    target = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A, B = 0.0, np.log((n_neg + 1.0) / (n_pos + 1.0))

    def objective(A, B):
        z = A * f + B
        # -sum(t log p + (1-t) log(1-p)) with p = expit(-z)
        return float(np.sum(target * z + np.logaddexp(0.0, -z)))

    fval = objective(A, B)
    for _ in range(max_iter):
        p = expit(-(A * f + B))
        d2 = p * (1 - p)
        h11 = np.sum(f * f * d2) + 1e-12
        h22 = np.sum(d2) + 1e-12
        h21 = np.sum(f * d2)
        d1 = target - p
        g1 = np.sum(f * d1)
        g2 = np.sum(d1)
        if abs(g1) < 1e-5 and abs(g2) < 1e-5:
            break
        det = h11 * h22 - h21 * h21
        dA = -(h22 * g1 - h21 * g2) / det
        dB = -(-h21 * g1 + h11 * g2) / det
        gd = g1 * dA + g2 * dB
        step = 1.0
        while step >= 1e-10:
            nA, nB = A + step * dA, B + step * dB
            nf = objective(nA, nB)
            if nf < fval + 1e-4 * step * gd:
                A, B, fval = nA, nB, nf
                break
            step /= 2
        else:
            break
    return float(A), float(B)


def svm_fit(X, y, C=1.0, gamma=None, seed=0, tol=1e-3, max_iter=100000):
    """RBF-kernel C-SVM via SMO, with Platt-scaled probabilities.

    `gamma` defaults to ``1 / n_features``.  `seed` is accepted for
    interface symmetry; the solver is deterministic.
    """
    X, y = _check_xy(X, y)
    if np.unique(y).size < 2:
        raise DataError("SVM needs samples from both classes")
    gamma = float(gamma) if gamma is not None else 1.0 / X.shape[1]
    t = np.where(y == 1, 1.0, -1.0)
    K = rbf_kernel(X, X, gamma)
    alpha, b, converged, n_iter = smo_solve(K, t, C, tol, max_iter)
    if not converged:
        warnings.warn(f"SMO stopped at the iteration cap ({max_iter}) before reaching tol={tol}")
    sv = alpha > 0
    f = K[:, sv] @ (alpha[sv] * t[sv]) + b
    A, B = platt_fit(f, y)
    return SvmModel(X[sv], alpha[sv] * t[sv], b, gamma, float(C), A, B, alpha, converged, n_iter)


def svm_decision(model, X):
    X = _as_2d(X)
    if model.support_vectors.shape[0] == 0:
        return np.full(X.shape[0], model.bias)
    return rbf_kernel(X, model.support_vectors, model.gamma) @ model.dual_coef + model.bias


def svm_predict(model, X):
    p1 = expit(-(model.platt_a * svm_decision(model, X) + model.platt_b))
    return np.column_stack([1.0 - p1, p1])


def svm_kkt_violation(model, X, y):
    """Largest violation of the C-SVM KKT conditions on the training set."""
    X, y = _check_xy(X, y)
    t = np.where(y == 1, 1.0, -1.0)
    yf = t * svm_decision(model, X)
    a = model.alphas
    eps = 1e-12 * model.C
    at_zero = a <= eps
    at_c = a >= model.C - eps
    free = ~at_zero & ~at_c
    viol = np.zeros_like(yf)
    viol[at_zero] = np.maximum(0.0, 1.0 - yf[at_zero])
    viol[at_c] = np.maximum(0.0, yf[at_c] - 1.0)
    viol[free] = np.abs(yf[free] - 1.0)
    return float(viol.max())


# ---------------------------------------------------------------------------
# Persistence


def save_baseline(path, kind, model, extra=None, aux=None):
    """Store a baseline model in the shared container under `kind`.

    `aux` maps names to extra arrays (preprocessing state) stored alongside.
    """
    meta = {"extra": extra or {}}
    if kind == "nb":
        tensors = [("priors", model.priors), ("means", model.means), ("variances", model.variances)]
    elif kind == "rf":
        counts = np.array([t.value.size for t in model.trees], dtype=np.int64)
        cat = lambda attr: np.concatenate([getattr(t, attr) for t in model.trees])
        meta["n_features"] = model.n_features
        tensors = [("node_counts", counts), ("seeds", model.seeds),
                   ("feature", cat("feature")), ("threshold", cat("threshold")),
                   ("left", cat("left")), ("right", cat("right")), ("value", cat("value"))]
    elif kind == "svm":
        meta.update(bias=model.bias, gamma=model.gamma, C=model.C, platt_a=model.platt_a,
                    platt_b=model.platt_b, converged=model.converged, n_iter=model.n_iter)
        tensors = [("support_vectors", model.support_vectors), ("dual_coef", model.dual_coef)]
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    tensors += [("aux." + n, a) for n, a in sorted((aux or {}).items())]
    write_container(path, kind, meta, [(n, np.asarray(a)) for n, a in tensors])


def load_baseline(path):
    """Return ``(kind, model, extra, aux)``."""
    kind, meta, t = read_container(path)
    if kind == "nb":
        model = NbModel(t["priors"], t["means"], t["variances"])
    elif kind == "rf":
        bounds = np.concatenate([[0], np.cumsum(t["node_counts"])])
        trees = [Tree(*(t[a][lo:hi] for a in ("feature", "threshold", "left", "right", "value")))
                 for lo, hi in zip(bounds[:-1], bounds[1:])]
        model = RfModel(trees, t["seeds"], meta["n_features"])
    elif kind == "svm":
        model = SvmModel(t["support_vectors"], t["dual_coef"], meta["bias"], meta["gamma"],
                         meta["C"], meta["platt_a"], meta["platt_b"], None,
                         meta["converged"], meta["n_iter"])
    else:
        raise DataError(f"{path}: not a baseline model (kind {kind!r})")
    aux = {n[4:]: a for n, a in t.items() if n.startswith("aux.")}
    return kind, model, meta.get("extra", {}), aux


FIT = {"nb": nb_fit, "rf": rf_fit, "svm": svm_fit}
PREDICT = {"nb": nb_predict, "rf": rf_predict, "svm": svm_predict}
