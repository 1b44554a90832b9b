"""
Feature baselines and grid search
=================================

Hand-crafted 304-dimensional frame features feed the traditional
classifiers, optionally shrunk by PCA or recursive feature elimination.
A small recording-level cross-validation picks the reduction size.
"""

import time

import numpy as np

from aedet import evaluation as E
from aedet import pipeline as P
from aedet.corpus import split_corpus, synth_corpus
from aedet.features import FEATURE_LAYOUT, pca_dim, rfe_dim

cfg = P.PipelineConfig()
cfg.corpus.n_recordings, cfg.corpus.n_train, cfg.corpus.n_test = 14, 10, 4
cfg.transform.kind = "features"
cfg.eval.folds = 5
train, test = split_corpus(synth_corpus(cfg.synth_config()), 10, 4, cfg.seed)
cache = {}

# %%
# Ten named features, flattened to one vector per 512-sample frame.
for name, width in FEATURE_LAYOUT:
    print(f"{name:>20} {width:4d}")
print(f"{'total':>20} {sum(w for _, w in FEATURE_LAYOUT):4d}")

# %%
# The reduction grids: PCA keeps round(0.8^n * 304) components, RFE drops
# 8 features per step.
print("\nPCA dims:", [pca_dim(n) for n in range(13)])
print("RFE dims (every 5th m):", [rfe_dim(m) for m in range(0, 36, 5)], "| m=27 ->", rfe_dim(27))

# %%
# One detector per family, all on the same frames.  Baselines score single
# frames, so the unit rate is 31.25 Hz rather than the patch rate.
setups = [("nb", "rfe", {}), ("rf", "none", {"n_trees": 30}), ("svm", "pca", {"pca_n": 1})]
for family, reduction, extra in setups:
    cfg.model.family, cfg.model.reduction = family, reduction
    for key, value in extra.items():
        setattr(cfg.model, key, value)
    t0 = time.perf_counter()
    det = P.fit_detector(train, cfg.validate(), cache=cache)
    scores, _ = P.score_detector(det, test, cfg, cache)
    rep = E.evaluate_scores(P.filtered_scores(scores, 1.0), scores.labels)
    print(f"{family:>4} + {reduction:<4} {det.meta['n_features']:3d} dims  "
          f"PR {rep.pr_area:.4f}  ROC {rep.roc_area:.4f}  ({time.perf_counter() - t0:.1f} s)")

# %%
# Cross-validation holds out whole recordings.  Here naive Bayes over a
# handful of PCA and RFE sizes; ties on PR area go to the smaller model.
cfg.model.family = "nb"
grid = [p for p in E.family_grid("nb") if p["dim"] in (304, 195, 88, 24)]
result = P.crossval(train, cfg, grid=grid, cache=cache)
for i in result.ranking():
    p = result.points[i]
    mark = "*" if i == result.best_index else " "
    print(f"{mark} {p['reduction']:>4} {p['dim']:3d}  mean PR {result.mean_scores[i]:.4f}  "
          f"folds {np.round(result.fold_scores[i], 3)}")
