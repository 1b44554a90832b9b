"""Acceptance suite: eight end-to-end criteria, one PASS/FAIL line each.

The heavy criteria (C5, C6, C7) share one full-size run: 57 synthetic
recordings of 10 s at 10 dB SNR, split 37/20, with CNN-wavelet, CNN-STFT and
MLP-STFT trained at their cross-validated operating points.
"""

import time

import numpy as np
import pytest

from aedet import evaluation as E
from aedet import pipeline as P
from aedet.baselines import PREDICT, nb_fit, rf_fit, svm_fit, svm_kkt_violation
from aedet.cli import main
from aedet.corpus import Recording, split_corpus, synth_corpus
from aedet.features import rfe_dim, rfe_select
from aedet.neuralnet import save_model
from aedet.transforms import (
    LOG_FLOOR, Stats, bump_wavelet_fourier, cwt_scalogram, scales_for_band, stft_spectrogram,
    windowed_frames,
)
from helpers import (
    brute_pr_area, brute_roc_area, finite_difference_errors, naive_median, random_instance,
)

FS = 8000
PR_TIE = 0.01
MODELS = {
    "cnn_cwt": ("cnn", "cwt", {"k": 5, "n_filters": 32, "n_dense": 128}),
    "cnn_stft": ("cnn", "stft", {"k": 3, "n_filters": 32, "n_dense": 128}),
    "mlp_stft": ("mlp", "stft", {"n_hidden1": 2056, "n_hidden2": 64}),
}


def model_config(name):
    family, kind, hyper = MODELS[name]
    cfg = P.PipelineConfig()
    cfg.model.family, cfg.transform.kind = family, kind
    for key, value in hyper.items():
        setattr(cfg.model, key, value)
    return cfg.validate()


@pytest.fixture(scope="module")
def full_run():
    t0 = time.perf_counter()
    cfg = P.PipelineConfig()
    train, test = split_corpus(synth_corpus(cfg.synth_config()), cfg.corpus.n_train,
                               cfg.corpus.n_test, cfg.seed)
    cache = {}
    out = {"train": train, "test": test, "cache": cache, "detectors": {}, "scores": {},
           "patches": {}}
    for name in MODELS:
        mcfg = model_config(name)
        det = P.fit_detector(train, mcfg, cache=cache)
        ss, data = P.score_detector(det, test, mcfg, cache)
        out["detectors"][name], out["scores"][name], out["patches"][name] = det, ss, data
    out["seconds"] = time.perf_counter() - t0
    return out


# --- C1 -------------------------------------------------------------------------

def test_c1_gradients(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(24):
        worst = max(worst, max(finite_difference_errors(*random_instance(seed)).values()))
    elapsed = time.perf_counter() - t0
    ok = verdict("C1 gradients", worst < 1e-5 and elapsed < 30,
                 f"24 instances, worst rel err {worst:.2e} (< 1e-5), {elapsed:.1f} s (< 30 s)")
    assert ok


# --- C2 -------------------------------------------------------------------------

def stft_parseval_error(x):
    """Worst per-frame relative error of the one-sided Parseval identity.

    Magnitudes are recovered from the log image; the dropped DC bin is
    the plain sum of the windowed frame.
    """
    img = stft_spectrogram(Recording("p", x, FS))
    mag = np.exp(img.values.T) - LOG_FLOOR
    frames = windowed_frames(x, 256)
    n = frames.shape[1]
    dc = frames.sum(axis=1)
    lhs = dc ** 2 + 2 * np.sum(mag[:, :-1] ** 2, axis=1) + mag[:, -1] ** 2
    rhs = n * np.sum(frames ** 2, axis=1)
    return float(np.max(np.abs(lhs - rhs) / rhs))


def test_c2_transforms(verdict):
    rng = np.random.default_rng(0)
    parseval = max(stft_parseval_error(rng.standard_normal(8000)) for _ in range(5))
    t = np.arange(FS) / FS
    peak = stft_spectrogram(Recording("t", np.sin(2 * np.pi * 1000 * t), FS))
    peak_bin = int(peak.values.mean(axis=1).argmax())
    bank = scales_for_band(256, 20, 4000)
    cwt_off = 0
    for f in (150.0, 300.0, 650.0, 1300.0, 2600.0):
        img = cwt_scalogram(Recording("t", np.sin(2 * np.pi * f * t), FS), bank)
        analytic = 5.0 * FS / (2 * np.pi * bank.scales)
        cwt_off = max(cwt_off, abs(int(img.values.mean(axis=1).argmax())
                                   - int(np.abs(analytic - f).argmin())))
    mu, sigma = 5.0, 0.6
    bump = max(abs(bump_wavelet_fourier(mu) - 1.0),
               abs(bump_wavelet_fourier(mu + sigma / np.sqrt(2)) - np.exp(-1)),
               abs(bump_wavelet_fourier(mu + sigma)), abs(bump_wavelet_fourier(mu - 1.5 * sigma)),
               abs(bump_wavelet_fourier(0.0)))
    ok = verdict("C2 transforms", parseval < 1e-6 and peak_bin == 63 and cwt_off <= 1
                 and bump < 1e-12,
                 f"Parseval {parseval:.1e}, 1 kHz bin {peak_bin}, CWT argmax off by {cwt_off} "
                 f"scale(s), bump err {bump:.1e}")
    assert ok


# --- C3 -------------------------------------------------------------------------

def test_c3_metric_oracles(verdict):
    roc_err = pr_err = 0.0
    med_bad = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 201))
        s = np.round(rng.random(n), int(rng.integers(1, 4)))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 1, 0
        roc_err = max(roc_err, abs(E.roc_area(s, y) - brute_roc_area(s, y)))
        pr_err = max(pr_err, abs(E.pr_area(s, y) - brute_pr_area(s, y)))
        length = 2 * int(rng.integers(0, 16)) + 1
        x = rng.random(int(rng.integers(1, 201)))
        med_bad += not np.array_equal(E.median_filter(x, length=length), naive_median(x, length))
    ok = verdict("C3 metric oracles", roc_err <= 1e-12 and pr_err <= 1e-12 and med_bad == 0,
                 f"50 instances: ROC err {roc_err:.1e}, PR err {pr_err:.1e}, "
                 f"median mismatches {med_bad}")
    assert ok


# --- C4 -------------------------------------------------------------------------

def test_c4_grids(verdict):
    counts = {"cnn": len(E.cnn_grid()), "mlp": len(E.mlp_grid())}
    pca = [p["dim"] for p in E.pca_grid()]
    rfe = [p["dim"] for p in E.rfe_grid()]
    cfg = P.PipelineConfig()
    items = P.frame_items(synth_corpus(cfg.synth_config())[:6], cfg, "features")
    X, y, _ = P.stack_frames(items)
    Z = P.FramePreprocessor.fit(X, y)(X)
    selected = rfe_select(Z, y, rfe_dim(27)).subset(rfe_dim(27))
    has_pca_ends = {304, 243} <= set(pca)
    ok = (counts == {"cnn": 48, "mlp": 24} and len(pca) == 13 and has_pca_ends
          and len(rfe) == 36 and 88 in rfe and selected.size == 88
          and np.unique(selected).size == 88)
    verdict("C4 grids", ok, f"CNN {counts['cnn']}, MLP {counts['mlp']}, PCA {len(pca)} "
            f"(304 and 243 present: {has_pca_ends}), RFE {len(rfe)}, m=27 selects "
            f"{selected.size} of {X.shape[1]}")
    assert ok


# --- C5 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c5_end_to_end_ordering(verdict, full_run):
    pr = {n: E.pr_area(ss.scores, ss.labels) for n, ss in full_run["scores"].items()}
    med = {n: E.pr_area(P.filtered_scores(ss, 1.0), ss.labels)
           for n, ss in full_run["scores"].items()}
    delta = min(med[n] - pr[n] for n in pr)
    ordered = (pr["cnn_cwt"] >= pr["cnn_stft"] - PR_TIE
               and pr["cnn_stft"] >= pr["mlp_stft"] - PR_TIE)
    fast = full_run["seconds"] < 15 * 60
    ok = pr["cnn_cwt"] >= 0.90 and ordered and delta >= -0.005 and fast
    verdict("C5 end-to-end", ok,
            f"PR cnn_cwt {pr['cnn_cwt']:.4f} (>= 0.90), cnn_stft {pr['cnn_stft']:.4f}, "
            f"mlp_stft {pr['mlp_stft']:.4f}, order within {PR_TIE}: {ordered}, "
            f"min median-filter delta {delta:+.4f} (>= -0.005), {full_run['seconds']:.0f} s")
    assert ok


@pytest.mark.slow
def test_cnn_wavelet_beats_naive_bayes(full_run):
    cfg = P.PipelineConfig()
    cfg.model.family, cfg.transform.kind = "nb", "stft"
    det = P.fit_detector(full_run["train"], cfg, cache=full_run["cache"])
    nb, _ = P.score_detector(det, full_run["test"], cfg, full_run["cache"])
    cnn = full_run["scores"]["cnn_cwt"]
    assert E.pr_area(cnn.scores, cnn.labels) >= E.pr_area(nb.scores, nb.labels)


# --- C6 -------------------------------------------------------------------------

@pytest.mark.slow
def test_c6_interpretability(verdict, full_run):
    cfg = model_config("cnn_cwt")
    det = full_run["detectors"]["cnn_cwt"]
    stats = Stats(det.meta["image_mean"], det.meta["image_std"])
    train_data = P.patch_dataset(P.image_items(full_run["train"], cfg, cache=full_run["cache"]),
                                 stats, cfg.transform.w1, "cwt")
    sp = E.class_spectra(full_run["scores"]["cnn_cwt"].probs, full_run["patches"]["cnn_cwt"].patches,
                         train_data, cfg.eval.top_frac)
    f = sp.freq_axis
    peak1, peak0 = f[sp.test[1].argmax()], f[sp.test[0].argmax()]
    fundamental, hum = cfg.corpus.tone_fundamental_hz, cfg.corpus.noise_hum_hz
    spectra = [sp.test[0], sp.test[1], sp.train[0], sp.train[1]]
    std_err = max(max(abs(s.mean()), abs(s.std() - 1.0)) for s in spectra)
    ok = abs(peak1 - fundamental) <= 50 and abs(peak0 - hum) <= 50 and std_err <= 1e-6
    verdict("C6 interpretability", ok,
            f"class 1 peak {peak1:.1f} Hz (target {fundamental:.0f} +/- 50), class 0 peak "
            f"{peak0:.1f} Hz (target {hum:.0f} +/- 50), standardization err {std_err:.1e}")
    assert ok


# --- C7 -------------------------------------------------------------------------

def small_cli_run(out, cfg_file):
    steps = [["synth"], ["train"], ["eval"], ["eval", "--set", "eval.split=train"],
             ["crossval", "--set", "eval.grid=k=3;n_filters=8;n_dense=16",
              "--set", "train.max_epochs=2"],
             ["visualize"]]
    for step in steps:
        assert main(step + ["--out", str(out), "--config", str(cfg_file)]) == 0


@pytest.mark.slow
def test_c7_determinism(verdict, full_run, tmp_path):
    from test_pipeline import small_config
    cfg_file = tmp_path / "small.ini"
    cfg_file.write_text(P.config_to_ini(small_config()))
    small_cli_run(tmp_path / "a", cfg_file)
    small_cli_run(tmp_path / "b", cfg_file)
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*")
                   if p.is_file() and p.parts[len(a.parts)] in ("models", "reports", "spectra"))
    differ = [str(rel) for rel in files if (a / rel).read_bytes() != (b / rel).read_bytes()]
    # the full-size CNN-wavelet model, retrained from scratch
    cfg = model_config("cnn_cwt")
    again = P.fit_detector(full_run["train"], cfg, cache=full_run["cache"])
    save_model(tmp_path / "first.bin", full_run["detectors"]["cnn_cwt"].model)
    save_model(tmp_path / "again.bin", again.model)
    full_same = (tmp_path / "first.bin").read_bytes() == (tmp_path / "again.bin").read_bytes()
    ok = not differ and len(files) >= 8 and full_same
    verdict("C7 determinism", ok,
            f"{len(files)} model/report/spectra files identical across CLI reruns "
            f"(differ: {differ or 'none'}), full-size CNN-wavelet retrain identical: {full_same}")
    assert ok


# --- C8 -------------------------------------------------------------------------

def two_class_problem(seed, n=80, d=4):
    rng = np.random.default_rng(seed)
    y = np.r_[np.zeros(n // 2, int), np.ones(n - n // 2, int)]
    X = rng.standard_normal((n, d)) + 0.8 * y[:, None] * rng.standard_normal(d)
    return X, y


@pytest.mark.slow
def test_c8_probability_contracts(verdict, full_run):
    worst_sum = max(float(np.max(np.abs(ss.probs.sum(axis=1) - 1.0)))
                    for ss in full_run["scores"].values())
    worst_neg = min(float(ss.probs.min()) for ss in full_run["scores"].values())
    for family, kind, trees in (("nb", "stft", 0), ("rf", "stft", 20), ("svm", "stft", 0),
                                ("nb", "features", 0)):
        cfg = P.PipelineConfig()
        cfg.model.family, cfg.transform.kind = family, kind
        cfg.model.n_trees = trees or cfg.model.n_trees
        det = P.fit_detector(full_run["train"], cfg.validate(), cache=full_run["cache"])
        ss, _ = P.score_detector(det, full_run["test"], cfg, full_run["cache"])
        worst_sum = max(worst_sum, float(np.max(np.abs(ss.probs.sum(axis=1) - 1.0))))
        worst_neg = min(worst_neg, float(ss.probs.min()))
    kkt = 0.0
    for seed in range(10):
        X, y = two_class_problem(seed)
        svm = svm_fit(X, y, C=1.0, gamma=0.5, seed=seed)
        kkt = max(kkt, svm_kkt_violation(svm, X, y))
        Q = np.random.default_rng(100 + seed).standard_normal((50, X.shape[1])) * 3
        for model, fam in ((svm, "svm"), (nb_fit(X, y), "nb"), (rf_fit(X, y, n_trees=10, seed=seed), "rf")):
            p = PREDICT[fam](model, Q)
            worst_sum = max(worst_sum, float(np.max(np.abs(p.sum(axis=1) - 1.0))))
            worst_neg = min(worst_neg, float(p.min()))
    ok = worst_sum <= 1e-9 and worst_neg >= 0 and kkt <= 1e-3
    verdict("C8 probabilities", ok,
            f"cnn/mlp/nb/rf/svm row-sum err {worst_sum:.1e} (<= 1e-9), min prob {worst_neg:.2e}, "
            f"SVM KKT violation {kkt:.1e} on 10 problems (<= 1e-3)")
    assert ok
