"""Hand-crafted per-frame features, PCA and recursive feature elimination.

Every STFT frame (``2*h1`` samples, Hann-windowed, hop ``h1``) maps to a
304-dimensional vector laid out as :data:`FEATURE_LAYOUT`.  Spectral
descriptors use the one-sided magnitude spectrum with the DC bin dropped;
frequencies are normalised by the Nyquist frequency.  All entropies are in
bits, and every descriptor is defined as 0 on an all-zero frame.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft
from scipy.optimize import minimize
from scipy.signal import get_window

from .transforms import LOG_FLOOR, windowed_frames

FEATURE_LAYOUT = (
    ("stft_slice", 256),
    ("mel_cepstrum_slice", 26),
    ("mfcc", 13),
    ("zcr", 1),
    ("energy_entropy", 1),
    ("spectral_entropy", 1),
    ("flux", 1),
    ("rolloff", 1),
    ("centroid", 1),
    ("spread", 1),
    ("entropy", 1),
    ("energy", 1),
)
FEATURE_DIM = sum(n for _, n in FEATURE_LAYOUT)
N_MEL = 26
N_MFCC = 13
N_SUBBLOCKS = 8
ROLLOFF = 0.90


def segment_slices():
    """``{segment name: slice}`` into the feature vector."""
    out, pos = {}, 0
    for name, size in FEATURE_LAYOUT:
        out[name] = slice(pos, pos + size)
        pos += size
    return out


def feature_names():
    return [f"{name}.{i}" for name, size in FEATURE_LAYOUT for i in range(size)]


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_bins=256, sample_rate=8000, n_mel=N_MEL):
    """Triangular mel filters over bins ``k*F_s/(2 n_bins)``, k = 1..n_bins."""
    freqs = np.arange(1, n_bins + 1) * sample_rate / (2 * n_bins)
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), n_mel + 2))
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    return np.maximum(0.0, np.minimum(up, down))


def _entropy_bits(p, axis=-1):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    return terms.sum(axis=axis)


def _normalise(x, axis=-1):
    total = x.sum(axis=axis, keepdims=True)
    return np.divide(x, total, out=np.zeros_like(x), where=total > 0)


def spectral_descriptors(mag):
    """Entropy, centroid, spread and 90% roll-off of magnitude spectra.

    `mag` has the bins on its last axis (bin ``i`` sits at normalised
    frequency ``(i + 1) / n_bins``).  Returns a dict of arrays.
    """
    mag = np.asarray(mag, dtype=np.float64)
    n_bins = mag.shape[-1]
    fn = np.arange(1, n_bins + 1) / n_bins
    power = mag ** 2
    p_mag = _normalise(mag)
    has_mass = mag.sum(axis=-1) > 0

    centroid = (p_mag * fn).sum(axis=-1)
    spread = np.sqrt(np.maximum((p_mag * (fn - centroid[..., None]) ** 2).sum(axis=-1), 0.0))
    entropy = _entropy_bits(_normalise(power))
    cum = np.cumsum(power, axis=-1)
    reached = cum >= ROLLOFF * cum[..., -1:]
    rolloff = np.where(has_mass, (reached.argmax(axis=-1) + 1) / n_bins, 0.0)
    return {"spectral_entropy": np.where(has_mass, entropy, 0.0),
            "centroid": np.where(has_mass, centroid, 0.0),
            "spread": np.where(has_mass, spread, 0.0),
            "rolloff": rolloff}


def _features_from_frames(raw, prev_mag=None, sample_rate=8000):
    """Vectorised feature extraction; `raw` holds unwindowed frames as rows."""
    raw = np.atleast_2d(np.asarray(raw, dtype=np.float64))
    n_frames, win_len = raw.shape
    if win_len == 0:
        raise ValueError("zero-length frame")
    h1 = win_len // 2
    windowed = raw * get_window("hann", win_len)
    mag = np.abs(sfft.rfft(windowed, axis=1))[:, 1:h1 + 1]
    n_bins = mag.shape[1]

    out = np.zeros((n_frames, FEATURE_DIM))
    seg = segment_slices()
    if n_bins == 256:
        out[:, seg["stft_slice"]] = np.log(LOG_FLOOR + mag)
    else:
        # resample the slice onto 256 bins so the layout stays fixed
        grid = np.linspace(0, n_bins - 1, 256)
        out[:, seg["stft_slice"]] = np.log(LOG_FLOOR + np.stack(
            [np.interp(grid, np.arange(n_bins), m) for m in mag]))

    mel_energy = (mag ** 2) @ mel_filterbank(n_bins, sample_rate).T
    log_mel = np.log(LOG_FLOOR + mel_energy)
    out[:, seg["mel_cepstrum_slice"]] = log_mel
    out[:, seg["mfcc"]] = sfft.dct(log_mel, type=2, norm="ortho", axis=1)[:, 1:N_MFCC + 1]

    crossings = (raw[:, :-1] * raw[:, 1:] < 0).sum(axis=1)
    out[:, seg["zcr"]] = (crossings / max(win_len - 1, 1))[:, None]

    usable = (win_len // N_SUBBLOCKS) * N_SUBBLOCKS
    if usable:
        sub = (raw[:, :usable].reshape(n_frames, N_SUBBLOCKS, -1) ** 2).sum(axis=2)
        out[:, seg["energy_entropy"]] = _entropy_bits(_normalise(sub))[:, None]

    desc = spectral_descriptors(mag)
    for name in ("spectral_entropy", "rolloff", "centroid", "spread"):
        out[:, seg[name]] = desc[name][:, None]

    norm_mag = _normalise(mag)
    prev = np.empty_like(norm_mag)
    prev[1:] = norm_mag[:-1]
    prev[0] = _normalise(np.asarray(prev_mag, dtype=np.float64)) if prev_mag is not None else norm_mag[0]
    out[:, seg["flux"]] = ((norm_mag - prev) ** 2).sum(axis=1)[:, None]

    out[:, seg["entropy"]] = _entropy_bits(_normalise(np.abs(raw)))[:, None]
    out[:, seg["energy"]] = np.log(LOG_FLOOR + (raw ** 2).mean(axis=1))[:, None]
    return out, mag


def frame_magnitude(frame):
    """DC-dropped one-sided magnitude spectrum of a Hann-windowed frame."""
    frame = np.asarray(frame, dtype=np.float64)
    h1 = frame.size // 2
    return np.abs(sfft.rfft(frame * get_window("hann", frame.size)))[1:h1 + 1]


def extract_feature_vector(frame, prev_spectrum=None, sample_rate=8000):
    """304-dimensional feature vector of one ``2*h1``-sample frame.

    `prev_spectrum` is the previous frame's magnitude spectrum (see
    :func:`frame_magnitude`); flux is 0 without it.
    """
    frame = np.asarray(frame, dtype=np.float64).ravel()
    if frame.size == 0:
        raise ValueError("zero-length frame")
    vec, _ = _features_from_frames(frame[None, :], prev_spectrum, sample_rate)
    return vec[0]


def extract_features(recording, h1=256):
    """Feature matrix (one row per STFT frame) for a whole recording."""
    # windowed_frames validates length; features need the raw frames
    n_frames = windowed_frames(recording.samples, h1).shape[0]
    raw = np.lib.stride_tricks.sliding_window_view(recording.samples, 2 * h1)[::h1][:n_frames]
    feats, _ = _features_from_frames(raw, None, recording.sample_rate)
    return feats


def features_to_csv(path, X):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(feature_names())
        for row in X:
            w.writerow([f"{v:.9g}" for v in row])


# ---------------------------------------------------------------------------
# PCA


@dataclass(eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]


def pca_dim(n, d=FEATURE_DIM):
    """Retained dimension ``round_half_up(0.8**n * d)``."""
    return int(np.floor(0.8 ** n * d + 0.5))


def pca_fit(X, n_components):
    """Top principal directions of mean-centred `X` via SVD.

    Each component is sign-fixed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n_samples, d = X.shape
    if not 1 <= n_components <= min(n_samples, d):
        raise ValueError(f"cannot keep {n_components} components from a {n_samples}x{d} matrix")
    mean = X.mean(axis=0)
    _, s, vt = np.linalg.svd(X - mean, full_matrices=False)
    comps = vt[:n_components].copy()
    pivot = np.abs(comps).argmax(axis=1)
    signs = np.sign(comps[np.arange(n_components), pivot])
    comps *= np.where(signs == 0, 1.0, signs)[:, None]
    return PcaModel(mean, comps, s[:n_components] ** 2 / max(n_samples - 1, 1))


def pca_transform(model, X):
    return (np.asarray(X, dtype=np.float64) - model.mean) @ model.components.T


def pca_inverse(model, Z):
    return np.asarray(Z) @ model.components + model.mean


# ---------------------------------------------------------------------------
# Recursive feature elimination


def linear_svm_weights(X, y, C=1.0):
    """Primal linear SVM with squared hinge loss, solved by L-BFGS.

    Minimises ``0.5*|w|^2 + C * sum(max(0, 1 - t*(w.x + b))**2)`` with
    ``t = 2y - 1``; returns ``(w, b)``.
    """
    X = np.asarray(X, dtype=np.float64)
    t = 2.0 * np.asarray(y, dtype=np.float64) - 1.0
    d = X.shape[1]

    def fun(theta):
        w, b = theta[:d], theta[d]
        margin = 1.0 - t * (X @ w + b)
        active = np.maximum(margin, 0.0)
        loss = 0.5 * w @ w + C * active @ active
        g = -2.0 * C * active * t
        return loss, np.concatenate([w + X.T @ g, [g.sum()]])

    res = minimize(fun, np.zeros(d + 1), jac=True, method="L-BFGS-B",
                   options={"maxiter": 500, "gtol": 1e-6})
    return res.x[:d], float(res.x[d])


@dataclass(eq=False)
class RfeModel:
    """Features eliminated in `ranking` order; `selected` are the survivors."""

    selected: np.ndarray
    ranking: np.ndarray
    n_features: int

    def subset(self, target):
        """Survivors after eliminating down to `target` features."""
        n_drop = self.n_features - target
        if n_drop < 0 or n_drop > self.ranking.size:
            raise ValueError(f"target {target} outside the recorded elimination path")
        return np.setdiff1d(np.arange(self.n_features), self.ranking[:n_drop])


def _zscore(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    return np.divide(X - mu, sd, out=np.zeros_like(X), where=sd > 0)


def rfe_select(X, y, target, step=8, C=1.0):
    """Eliminate `step` features at a time by smallest squared linear-SVM weight.

    Features are z-scored first (constant ones become zero and carry zero
    weight).  Weight ties are broken by feature index.
    """
    X = _zscore(np.asarray(X, dtype=np.float64))
    d = X.shape[1]
    if target < 1 or target > d or (d - target) % step:
        raise ValueError(f"target {target} is not on the grid {d} - {step}m")
    alive = np.arange(d)
    eliminated = []
    while alive.size > target:
        w, _ = linear_svm_weights(X[:, alive], y, C)
        order = np.lexsort((alive, w ** 2))
        drop = alive[order[:step]]
        eliminated.extend(drop.tolist())
        alive = np.setdiff1d(alive, drop)
    return RfeModel(alive, np.array(eliminated, dtype=np.int64), d)


def rfe_dim(m, d=FEATURE_DIM, step=8):
    return d - step * m
