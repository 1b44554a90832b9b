"""
Training a wavelet CNN and reading its outputs
==============================================

A shortened version of the full experiment.  A narrow CNN learns from
bump-wavelet patches of a 16-recording corpus; afterwards we score held-out
recordings and look at the spectra of the patches it is most sure about.
Takes well under a minute on a laptop CPU.

The full-size run is the same code with ``PipelineConfig()`` defaults, or
on the command line::

    aedet synth && aedet train && aedet eval && aedet visualize
"""

from pathlib import Path

import numpy as np

from aedet import evaluation as E
from aedet import pipeline as P
from aedet.corpus import split_corpus, synth_corpus
from aedet.transforms import Stats

out_dir = Path("tutorial_output")
out_dir.mkdir(exist_ok=True)

# %%
# Configuration is a set of dataclasses; every field can also be set from
# an INI file or ``--set section.key=value``.
cfg = P.PipelineConfig()
cfg.corpus.n_recordings, cfg.corpus.n_train, cfg.corpus.n_test = 16, 11, 5
cfg.model.n_filters, cfg.model.n_dense = 8, 32
cfg.train.max_epochs = 6
cfg.validate()
print(cfg.transform)
print(cfg.train)

corpus = synth_corpus(cfg.synth_config())
train, test = split_corpus(corpus, cfg.corpus.n_train, cfg.corpus.n_test, cfg.seed)
print(f"\n{len(train)} training and {len(test)} test recordings")

# %%
# Fit.  The image cache keeps each scalogram so scoring does not redo the
# transform.
cache = {}
det = P.fit_detector(train, cfg, cache=cache, log=print)
print(f"{det.model.spec.n_params} parameters, best epoch {det.model.best_epoch}")

# %%
# Score the held-out recordings, one probability per 320 ms patch.
scores, test_patches = P.score_detector(det, test, cfg, cache)
smooth = P.filtered_scores(scores, cfg.eval.median_kernel_s)
for tag, s in (("raw", scores.scores), ("median 1 s", smooth)):
    rep = E.evaluate_scores(s, scores.labels)
    print(f"{tag:>10}: F1 {rep.f1:.3f}  TPR {rep.tpr:.3f}  TNR {rep.tnr:.3f}  "
          f"ROC {rep.roc_area:.4f}  PR {rep.pr_area:.4f}")

# %%
# The kernel length is the largest odd number of patches inside one second.
length = E.median_kernel_length(1.0, scores.unit_rate)
print(f"\nunit rate {scores.unit_rate} Hz -> median kernel of {length} patches")

# %%
# Class spectra: the top-scoring 10% of test patches per class, averaged
# over time and over patches, then standardized.  The labelled training
# patches give the reference.
stats = Stats(det.meta["image_mean"], det.meta["image_std"])
train_patches = P.patch_dataset(P.image_items(train, cfg, cache=cache), stats, cfg.transform.w1)
spectra = E.class_spectra(scores.probs, test_patches.patches, train_patches)
f = spectra.freq_axis
for c, name in ((1, "event"), (0, "background")):
    print(f"{name:>10}: test peak {f[spectra.test[c].argmax()]:6.1f} Hz, "
          f"train peak {f[spectra.train[c].argmax()]:6.1f} Hz")
E.write_spectra_csv(out_dir / "02_spectra.csv", spectra)

# Nearby rows agree as well, not only the argmax.
top = np.argsort(spectra.test[1])[-5:]
print("five strongest event rows (Hz):", np.round(np.sort(f[top]), 1))
