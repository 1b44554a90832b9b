"""Audio recordings, label tracks and the seeded synthetic corpus.

Recordings are mono float64 waveforms in [-1, 1].  Labels arrive at a coarse
annotation rate (10 Hz by default) and are held onto the spectrogram frame
grid with :func:`upsample_labels`.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import ConfigError, DataError
from .seeding import derive_seed

LABEL_RATE = 10.0
SAMPLE_RATE = 8000


@dataclass(eq=False)
class Recording:
    id: str
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataError(f"{self.id}: samples must be 1-D, got shape {self.samples.shape}")
        if self.samples.size < 1:
            raise DataError(f"{self.id}: empty recording")
        if int(self.sample_rate) <= 0:
            raise DataError(f"{self.id}: sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DataError(f"{self.id}: non-finite samples")
        self.sample_rate = int(self.sample_rate)

    @property
    def duration(self):
        return self.samples.size / self.sample_rate

    def __len__(self):
        return self.samples.size


@dataclass(eq=False)
class LabelTrack:
    recording_id: str
    labels: np.ndarray
    rate: float = LABEL_RATE

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8).ravel()
        if self.rate <= 0:
            raise DataError(f"{self.recording_id}: label rate must be positive")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise DataError(f"{self.recording_id}: labels must be 0/1")

    def __len__(self):
        return self.labels.size


@dataclass(eq=False)
class FrameLabels:
    labels: np.ndarray
    frame_rate: float

    def __len__(self):
        return self.labels.size


@dataclass
class SynthConfig:
    """Parameters of the synthetic stand-in corpus.

    Noise is white Gaussian plus a slowly amplitude-modulated hum carrying
    the same power.  ``snr_db`` is the ratio of harmonic-stack power to
    total noise power while an event is active.
    """

    n_recordings: int = 57
    duration_s: float = 10.0
    tone_fundamental_hz: float = 650.0
    n_harmonics: int = 3
    harmonic_decay: float = 0.5
    snr_db: float = 10.0
    noise_hum_hz: float = 300.0
    event_duty: float = 0.4
    seed: int = 0

    def validate(self, sample_rate=SAMPLE_RATE):
        if self.n_recordings < 1:
            raise ConfigError("n_recordings must be >= 1")
        if self.duration_s <= 0:
            raise ConfigError("duration_s must be positive")
        if not 0.0 < self.event_duty < 1.0:
            raise ConfigError("event_duty must lie in (0, 1)")
        if not 0.0 < self.tone_fundamental_hz < sample_rate / 2:
            raise ConfigError("tone_fundamental_hz must lie below the Nyquist frequency")
        if not 0.0 < self.noise_hum_hz < sample_rate / 2:
            raise ConfigError("noise_hum_hz must lie below the Nyquist frequency")
        if self.n_harmonics < 1:
            raise ConfigError("n_harmonics must be >= 1")
        if self.harmonic_decay <= 0:
            raise ConfigError("harmonic_decay must be positive")


# ---------------------------------------------------------------------------
# WAV I/O


def load_wav(path, recording_id=None):
    """Read a PCM/float WAV file into a mono :class:`Recording`.

    Integer PCM is scaled to [-1, 1] (16-bit: 1/32768, 24/32-bit: 1/2**31
    since scipy left-justifies 24-bit data, 8-bit: unsigned offset 128).
    Multichannel audio is averaged to mono.
    """
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError as exc:
        raise DataError(f"cannot read {path}: file not found") from exc
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc

    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype}")

    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise DataError(f"{path}: zero-length audio")
    return Recording(recording_id or path.stem, x, int(rate))


def write_wav(path, recording):
    """Write a recording as 32-bit float WAV."""
    wavfile.write(Path(path), recording.sample_rate, recording.samples.astype(np.float32))


def resample(r, target_rate):
    """Band-limited resampling with a Kaiser-windowed sinc polyphase filter."""
    target_rate = int(target_rate)
    if target_rate <= 0:
        raise ConfigError("target_rate must be positive")
    if target_rate == r.sample_rate:
        return r
    g = math.gcd(target_rate, r.sample_rate)
    up, down = target_rate // g, r.sample_rate // g
    y = signal.resample_poly(r.samples, up, down)
    return Recording(r.id, y, target_rate)


# ---------------------------------------------------------------------------
# Labels


def upsample_labels(track, frame_rate, n_frames):
    """Zero-order hold of a label track onto a finer frame grid.

    Frame ``k`` takes label ``floor(k * rate / frame_rate)``, clamped to the
    last available label.
    """
    if len(track) == 0:
        raise DataError(f"{track.recording_id}: empty label track")
    if frame_rate < track.rate:
        raise ConfigError("frame_rate must be >= the label rate")
    k = np.arange(int(n_frames))
    # epsilon keeps floor() exact at integer products such as 25 * 10 / 31.25
    src = np.floor(k * (track.rate / frame_rate) + 1e-9).astype(np.int64)
    src = np.minimum(src, len(track) - 1)
    return FrameLabels(track.labels[src].astype(np.int8), float(frame_rate))


def intervals_to_track(recording_id, intervals, duration_s, rate=LABEL_RATE):
    """Convert label-1 spans ``[(start_s, end_s), ...]`` into a LabelTrack.

    Tick ``i`` (time ``i / rate``) is 1 when it falls inside any span.
    """
    n = max(1, int(math.ceil(duration_s * rate - 1e-9)))
    t = np.arange(n) / rate
    lab = np.zeros(n, dtype=np.int8)
    for start, end in intervals:
        lab[(t >= start) & (t < end)] = 1
    return LabelTrack(recording_id, lab, rate)


def read_labels(path, durations=None):
    """Read a label CSV into ``{recording_id: LabelTrack}``.

    Two layouts are accepted, distinguished by header: compact
    ``recording_id,rate_hz,labels`` rows (labels as a ``0``/``1`` string) or
    interval rows ``recording_id,start_s,end_s``.  The interval layout needs
    ``durations`` (seconds per recording id).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"label file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        fields = reader.fieldnames or []
        rows = list(reader)

    tracks = {}
    if {"recording_id", "rate_hz", "labels"} <= set(fields):
        for row in rows:
            s = row["labels"].strip()
            if s and set(s) - {"0", "1"}:
                raise DataError(f"{path}: bad label string for {row['recording_id']}")
            tracks[row["recording_id"]] = LabelTrack(
                row["recording_id"], np.frombuffer(s.encode(), dtype=np.uint8) - ord("0"),
                float(row["rate_hz"]))
    elif {"recording_id", "start_s", "end_s"} <= set(fields):
        if durations is None:
            raise DataError("interval label files need recording durations")
        spans = {}
        for row in rows:
            spans.setdefault(row["recording_id"], []).append(
                (float(row["start_s"]), float(row["end_s"])))
        for rid, dur in durations.items():
            tracks[rid] = intervals_to_track(rid, spans.get(rid, []), dur)
    else:
        raise DataError(f"{path}: unrecognised label header {fields}")
    return tracks


def write_labels(path, tracks):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "rate_hz", "labels"])
        for t in tracks:
            w.writerow([t.recording_id, _fmt_rate(t.rate), "".join(map(str, t.labels.tolist()))])


def _fmt_rate(rate):
    return str(int(rate)) if float(rate).is_integer() else repr(float(rate))


# ---------------------------------------------------------------------------
# Synthetic corpus


def _event_labels(n_ticks, duty, rng, min_len=10, max_events=3):
    """Place label-1 events covering exactly round(duty * n_ticks) ticks.

    Events and interior gaps last at least `min_len` ticks when the length
    permits, so a one-second median filter cannot erase them.
    """
    n_ones = int(round(duty * n_ticks))
    n_ones = min(max(n_ones, 1), n_ticks - 1) if n_ticks > 1 else n_ticks
    n_zeros = n_ticks - n_ones
    min_ev = min(min_len, n_ones)
    min_gap = min(min_len, n_zeros)
    cap = max(1, min(max_events, n_ones // max(min_ev, 1),
                     (n_zeros // max(min_gap, 1)) + 1 if min_gap else 1))
    n_ev = int(rng.integers(1, cap + 1))

    ev = min_ev + rng.multinomial(n_ones - n_ev * min_ev, np.full(n_ev, 1.0 / n_ev))
    gaps = np.zeros(n_ev + 1, dtype=np.int64)
    gaps[1:-1] = min_gap
    gaps += rng.multinomial(n_zeros - gaps.sum(), np.full(n_ev + 1, 1.0 / (n_ev + 1)))

    lab = np.zeros(n_ticks, dtype=np.int8)
    pos = int(gaps[0])
    for e, g in zip(ev, gaps[1:]):
        lab[pos:pos + e] = 1
        pos += int(e) + int(g)
    return lab


def _slow_jitter(t, rng, n_terms=3):
    """Smooth random process bounded by [-1, 1]."""
    freqs = rng.uniform(0.05, 0.5, n_terms)
    phases = rng.uniform(0, 2 * np.pi, n_terms)
    weights = rng.uniform(0.5, 1.0, n_terms)
    j = (weights[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
    return j / weights.sum()


def synth_recording(cfg, index, sample_rate=SAMPLE_RATE):
    """Generate recording number `index` of the synthetic corpus."""
    seed = derive_seed(cfg.seed, "corpus", index)
    rng = np.random.default_rng(seed)
    n = int(round(cfg.duration_s * sample_rate))
    n_ticks = max(1, int(round(cfg.duration_s * LABEL_RATE)))
    labels = _event_labels(n_ticks, cfg.event_duty, rng)

    t = np.arange(n) / sample_rate
    white = rng.standard_normal(n)
    am = 1.0 + 0.1 * np.sin(2 * np.pi * rng.uniform(0.1, 0.3) * t + rng.uniform(0, 2 * np.pi))
    hum = np.sqrt(2.0) * am * np.sin(2 * np.pi * cfg.noise_hum_hz * t + rng.uniform(0, 2 * np.pi))
    noise = white + hum
    noise_power = 2.0

    f_inst = cfg.tone_fundamental_hz * (1.0 + 0.03 * _slow_jitter(t, rng))
    phase = 2 * np.pi * np.cumsum(f_inst) / sample_rate + rng.uniform(0, 2 * np.pi)
    amps = cfg.harmonic_decay ** np.arange(cfg.n_harmonics)
    stack = np.zeros(n)
    for h, a in enumerate(amps, start=1):
        if h * cfg.tone_fundamental_hz * 1.03 >= sample_rate / 2:
            break
        stack += a * np.sin(h * phase)
    unit_power = 0.5 * np.sum(amps ** 2)
    stack *= np.sqrt(noise_power * 10 ** (cfg.snr_db / 10) / unit_power)

    gate = labels[np.minimum((np.arange(n) * LABEL_RATE / sample_rate).astype(np.int64),
                             n_ticks - 1)].astype(np.float64)
    ramp = signal.windows.hann(int(0.01 * sample_rate) + 1)
    gate = np.convolve(gate, ramp / ramp.sum(), mode="same")

    x = 0.05 * (noise + gate * stack)
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    rid = f"rec{index:03d}"
    return Recording(rid, x, sample_rate), LabelTrack(rid, labels, LABEL_RATE), seed


def synth_corpus(cfg, sample_rate=SAMPLE_RATE):
    """Generate the full synthetic corpus as a list of (Recording, LabelTrack)."""
    cfg.validate(sample_rate)
    return [synth_recording(cfg, i, sample_rate)[:2] for i in range(cfg.n_recordings)]


def split_corpus(corpus, n_train, n_test, seed):
    """Recording-level train/test split, deterministic in `seed`."""
    corpus = list(corpus)
    if n_train < 0 or n_test < 0:
        raise ConfigError("split sizes must be non-negative")
    if n_train + n_test > len(corpus):
        raise DataError(f"need {n_train + n_test} recordings, corpus has {len(corpus)}")
    perm = np.random.default_rng(derive_seed(seed, "split")).permutation(len(corpus))
    train = [corpus[i] for i in perm[:n_train]]
    test = [corpus[i] for i in perm[n_train:n_train + n_test]]
    return train, test


# ---------------------------------------------------------------------------
# On-disk corpus


def write_corpus(directory, cfg, sample_rate=SAMPLE_RATE):
    """Synthesize and write a corpus: one WAV per recording, labels.csv, manifest.json."""
    cfg.validate(sample_rate)
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {directory}: {exc}") from exc
    entries, tracks = [], []
    for i in range(cfg.n_recordings):
        rec, track, seed = synth_recording(cfg, i, sample_rate)
        write_wav(directory / f"{rec.id}.wav", rec)
        tracks.append(track)
        entries.append({"id": rec.id, "file": f"{rec.id}.wav", "seed": seed})
    write_labels(directory / "labels.csv", tracks)
    manifest = {"sample_rate": sample_rate, "config": asdict(cfg), "recordings": entries}
    with open(directory / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return directory


def load_corpus(directory, labels_path=None, sample_rate=SAMPLE_RATE):
    """Load every recording in `directory` with its label track.

    Recordings are listed by ``manifest.json`` when present, otherwise all
    ``*.wav`` files in name order.  Audio is resampled to `sample_rate`.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"corpus directory not found: {directory}")
    manifest = directory / "manifest.json"
    if manifest.exists():
        with open(manifest, encoding="utf-8") as fh:
            files = [(e["id"], directory / e["file"]) for e in json.load(fh)["recordings"]]
    else:
        files = [(p.stem, p) for p in sorted(directory.glob("*.wav"))]
    if not files:
        raise DataError(f"no recordings in {directory}")
    recs = [resample(load_wav(p, rid), sample_rate) for rid, p in files]
    labels_path = Path(labels_path) if labels_path else directory / "labels.csv"
    tracks = read_labels(labels_path, {r.id: r.duration for r in recs})
    missing = [r.id for r in recs if r.id not in tracks]
    if missing:
        raise DataError(f"missing labels for {', '.join(missing[:5])}")
    return [(r, tracks[r.id]) for r in recs]

