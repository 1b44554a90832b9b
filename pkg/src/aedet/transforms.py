"""Time-frequency transforms and patch slicing.

Two representations share one frame grid of ``F_s / h1`` columns per second:

* :func:`stft_spectrogram` -- Hann window of ``2 * h1`` samples, hop ``h1``,
  DC bin dropped so exactly ``h1`` rows remain.
* :func:`cwt_scalogram` -- bump-wavelet CWT evaluated by FFT, ``h1`` scales,
  magnitudes mean-pooled over blocks of ``h1`` samples.

Both return log-magnitudes ``log(1e-10 + |.|)`` with rows in ascending
frequency.
"""

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import fft as sfft
from scipy.signal import get_window

from .container import read_container, write_container
from .errors import DataError

LOG_FLOOR = 1e-10
BUMP_MU = 5.0
BUMP_SIGMA = 0.6


@dataclass(eq=False)
class TimeFrequencyImage:
    values: np.ndarray
    freq_axis: np.ndarray
    frame_rate: float
    kind: str

    def __post_init__(self):
        self.values = np.asarray(self.values)
        self.freq_axis = np.asarray(self.freq_axis, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.freq_axis.size:
            raise ValueError("values must be h1 x T with one freq_axis entry per row")
        if self.kind not in ("stft", "cwt"):
            raise ValueError(f"unknown transform kind {self.kind!r}")

    @property
    def h1(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]


class Stats(NamedTuple):
    mean: float
    std: float


@dataclass(eq=False)
class PatchDataset:
    """``N x h1 x w1`` single-channel patches with one-hot labels."""

    patches: np.ndarray
    labels: np.ndarray
    recording_ids: np.ndarray
    starts: np.ndarray
    freq_axis: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frame_rate: float = 0.0

    def __len__(self):
        return self.patches.shape[0]

    @property
    def y(self):
        return self.labels.argmax(axis=1) if len(self) else np.zeros(0, dtype=np.int64)

    @property
    def h1(self):
        return self.patches.shape[1]

    @property
    def w1(self):
        return self.patches.shape[2]

    def subset(self, idx):
        idx = np.asarray(idx)
        return PatchDataset(self.patches[idx], self.labels[idx], self.recording_ids[idx],
                            self.starts[idx], self.freq_axis, self.frame_rate)


@dataclass(eq=False)
class WaveletBank:
    mu: float
    sigma: float
    scales: np.ndarray
    center_freqs: np.ndarray
    sample_rate: int


def bump_wavelet_fourier(x, mu=BUMP_MU, sigma=BUMP_SIGMA):
    """Bump wavelet in the Fourier domain at scaled frequency ``x = s * omega``.

    ``exp(1 - 1 / (1 - u**2))`` with ``u = (x - mu) / sigma`` inside
    ``|u| < 1`` and exactly zero outside.
    """
    if not mu > sigma > 0:
        raise ValueError("bump wavelet needs mu > sigma > 0")
    x = np.asarray(x, dtype=np.float64)
    u = (x - mu) / sigma
    inside = np.abs(u) < 1.0
    out = np.zeros_like(u)
    ui = u[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui * ui))
    return out if out.ndim else float(out)


def scales_for_band(h1, f_min, f_max, mu=BUMP_MU, sample_rate=8000, sigma=BUMP_SIGMA):
    """Log-spaced scales whose centre frequencies ``mu*F_s/(2 pi s)`` span the band.

    Row ``i`` of the bank has the ``i``-th lowest centre frequency; the band
    edges are hit exactly.
    """
    if not 0 < f_min < f_max <= sample_rate / 2:
        raise ValueError(f"invalid band [{f_min}, {f_max}] for F_s = {sample_rate}")
    if h1 < 2:
        raise ValueError("need at least two scales")
    freqs = np.geomspace(f_min, f_max, h1)
    freqs[0], freqs[-1] = f_min, f_max
    scales = mu * sample_rate / (2 * np.pi * freqs)
    return WaveletBank(float(mu), float(sigma), scales, freqs, int(sample_rate))


def cwt_scalogram(r, bank, scale_chunk=16):
    """Log-magnitude bump-wavelet scalogram pooled to ``F_s / h1`` frames/s."""
    if r.sample_rate != bank.sample_rate:
        raise ValueError(f"recording at {r.sample_rate} Hz, bank built for {bank.sample_rate} Hz")
    h1 = bank.scales.size
    n = r.samples.size
    if n < h1:
        raise DataError(f"{r.id}: {n} samples is shorter than h1 = {h1}")
    n_frames = n // h1
    spectrum = sfft.fft(r.samples)
    omega = 2 * np.pi * np.arange(n) / n
    out = np.empty((h1, n_frames))
    for start in range(0, h1, scale_chunk):
        s = bank.scales[start:start + scale_chunk]
        # bump filters are real, so conj() is a no-op
        psi = bump_wavelet_fourier(s[:, None] * omega[None, :], bank.mu, bank.sigma)
        coef = np.abs(sfft.ifft(spectrum[None, :] * psi, axis=1))
        pooled = coef[:, :n_frames * h1].reshape(s.size, n_frames, h1).mean(axis=2)
        out[start:start + s.size] = pooled
    return TimeFrequencyImage(np.log(LOG_FLOOR + out), bank.center_freqs.copy(),
                              r.sample_rate / h1, "cwt")


def windowed_frames(samples, h1):
    """Hann-windowed frames of length ``2*h1`` at hop ``h1`` (one per row)."""
    samples = np.asarray(samples, dtype=np.float64)
    win_len = 2 * h1
    if samples.size < win_len:
        raise DataError(f"{samples.size} samples is shorter than the {win_len}-sample window")
    n_frames = 1 + (samples.size - win_len) // h1
    frames = np.lib.stride_tricks.sliding_window_view(samples, win_len)[::h1][:n_frames]
    return frames * get_window("hann", win_len)


def stft_spectrogram(r, h1=256):
    """Log-magnitude STFT with ``h1`` rows (bins ``k*F_s/(2 h1)``, k = 1..h1)."""
    frames = windowed_frames(r.samples, h1)
    mag = np.abs(sfft.rfft(frames, axis=1))[:, 1:]
    freqs = np.arange(1, h1 + 1) * r.sample_rate / (2 * h1)
    return TimeFrequencyImage(np.log(LOG_FLOOR + mag.T), freqs, r.sample_rate / h1, "stft")


def standardize(images, stats=None):
    """Global scalar standardization ``(x - mean) / std``.

    `images` is one image or a list of them.  Without `stats` the mean and
    standard deviation are computed over every value of every image; zero
    variance falls back to ``std = 1``.  Returns ``(standardized, stats)``
    with the same container shape as the input.
    """
    single = isinstance(images, TimeFrequencyImage)
    imgs = [images] if single else list(images)
    if stats is None:
        total = sum(im.values.size for im in imgs)
        if total == 0:
            raise ValueError("cannot standardize an empty image set")
        mean = sum(float(im.values.sum()) for im in imgs) / total
        var = sum(float(((im.values - mean) ** 2).sum()) for im in imgs) / total
        std = float(np.sqrt(var))
        stats = Stats(mean, std if std > 0 else 1.0)
    out = [TimeFrequencyImage((im.values - stats.mean) / stats.std, im.freq_axis,
                              im.frame_rate, im.kind) for im in imgs]
    return (out[0] if single else out), stats


def slice_patches(img, w1, frame_labels, recording_id=""):
    """Cut non-overlapping ``h1 x w1`` patches from column 0, dropping the remainder.

    A patch is labelled 1 when at least half of its frame labels are 1.
    """
    labels = np.asarray(getattr(frame_labels, "labels", frame_labels))
    if labels.size != img.n_frames:
        raise ValueError(f"{labels.size} frame labels for {img.n_frames} columns")
    if w1 < 1:
        raise ValueError("w1 must be >= 1")
    n = img.n_frames // w1
    vals = img.values[:, :n * w1].reshape(img.h1, n, w1).transpose(1, 0, 2)
    ones = labels[:n * w1].reshape(n, w1).sum(axis=1)
    y = (2 * ones >= w1).astype(np.int64)
    return PatchDataset(
        np.ascontiguousarray(vals, dtype=np.float32),
        np.eye(2, dtype=np.float32)[y].reshape(n, 2),
        np.array([recording_id] * n, dtype=object),
        np.arange(n, dtype=np.int64) * w1,
        img.freq_axis.copy(), img.frame_rate,
    )


def concat_patches(datasets):
    """Concatenate per-recording datasets in the given order."""
    datasets = list(datasets)
    if not datasets:
        raise ValueError("nothing to concatenate")
    first = datasets[0]
    return PatchDataset(
        np.concatenate([d.patches for d in datasets]),
        np.concatenate([d.labels for d in datasets]),
        np.concatenate([d.recording_ids for d in datasets]),
        np.concatenate([d.starts for d in datasets]),
        first.freq_axis, first.frame_rate,
    )


# ---------------------------------------------------------------------------
# Serialization


def save_image(path, img):
    meta = {"kind": img.kind, "h1": img.h1, "T": img.n_frames, "frame_rate": img.frame_rate}
    write_container(path, "image", meta, [
        ("freq_axis", img.freq_axis.astype("<f8")),
        ("values", img.values.astype("<f4")),
    ])


def load_image(path):
    kind, meta, t = read_container(path)
    if kind != "image":
        raise DataError(f"{path}: container holds {kind!r}, not an image")
    return TimeFrequencyImage(t["values"], t["freq_axis"], meta["frame_rate"], meta["kind"])


def image_to_csv(path, img):
    """One row per frequency: ``freq_hz, frame_0, frame_1, ...``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz"] + [f"frame_{j}" for j in range(img.n_frames)])
        for f, row in zip(img.freq_axis, img.values):
            w.writerow([f"{f:.6f}"] + [f"{v:.7g}" for v in row])
