"""End-to-end detector pipeline: configuration, datasets, fitting and scoring.

Neural detectors (``cnn``, ``mlp``) see standardized ``h1 x w1`` patches of
a wavelet or STFT image.  Baselines (``nb``, ``rf``, ``svm``) classify single
frames, either STFT columns or the 304-dim feature vector, after z-scoring
and an optional PCA / RFE reduction.
"""

import configparser
import dataclasses
import hashlib
import io
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines, evaluation, features, neuralnet, transforms
from .corpus import SynthConfig, upsample_labels
from .errors import ConfigError, DataError
from .seeding import derive_seed, make_rng

NEURAL = ("cnn", "mlp")
BASELINE = ("nb", "rf", "svm")
IMAGE_KINDS = ("cwt", "stft")
FRAME_KINDS = ("stft", "features")
REDUCTIONS = ("none", "pca", "rfe")


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class RunSection:
    seed: int = 0
    sample_rate: int = 8000


@dataclass
class CorpusSection:
    n_recordings: int = 57
    duration_s: float = 10.0
    tone_fundamental_hz: float = 650.0
    n_harmonics: int = 3
    harmonic_decay: float = 0.5
    snr_db: float = 10.0
    noise_hum_hz: float = 300.0
    event_duty: float = 0.4
    n_train: int = 37
    n_test: int = 20


@dataclass
class TransformSection:
    kind: str = "cwt"
    h1: int = 256
    w1: int = 10
    mu: float = 5.0
    sigma: float = 0.6
    f_min: float = 20.0
    f_max: float = 4000.0


@dataclass
class ModelSection:
    family: str = "cnn"
    name: str = ""
    k: int = 5
    n_filters: int = 32
    n_dense: int = 128
    n_hidden1: int = 2056
    n_hidden2: int = 64
    dropout_p: float = 0.5
    reduction: str = "none"
    pca_n: int = 0
    rfe_m: int = 27
    n_trees: int = 100
    svm_c: float = 1.0
    svm_gamma_scale: float = 1.0
    svm_max_train: int = 2000


@dataclass
class TrainSection:
    batch_size: int = 256
    max_epochs: int = 20
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    early_stop_patience: int = 5
    val_fraction: float = 0.1


@dataclass
class EvalSection:
    threshold: float = 0.5
    median_kernel_s: float = 1.0
    top_frac: float = 0.10
    folds: int = 10
    grid: str = ""
    split: str = "test"


@dataclass
class PathsSection:
    corpus: str = ""
    labels: str = ""


@dataclass
class PipelineConfig:
    run: RunSection = field(default_factory=RunSection)
    corpus: CorpusSection = field(default_factory=CorpusSection)
    transform: TransformSection = field(default_factory=TransformSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @property
    def seed(self):
        return self.run.seed

    @property
    def model_name(self):
        return self.model.name or f"{self.model.family}_{self.transform.kind}"

    def synth_config(self):
        c = self.corpus
        return SynthConfig(c.n_recordings, c.duration_s, c.tone_fundamental_hz, c.n_harmonics,
                           c.harmonic_decay, c.snr_db, c.noise_hum_hz, c.event_duty, self.run.seed)

    def train_config(self):
        t = self.train
        return neuralnet.TrainConfig(t.batch_size, t.max_epochs, t.optimizer, t.learning_rate,
                                     t.early_stop_patience, t.val_fraction,
                                     derive_seed(self.run.seed, "train"))

    def net_spec(self, **overrides):
        m, t = self.model, self.transform
        if m.family == "cnn":
            kw = dict(h1=t.h1, w1=t.w1, k=m.k, n_filters=m.n_filters, n_dense=m.n_dense,
                      dropout_p=m.dropout_p)
            return neuralnet.CnnSpec(**{**kw, **overrides})
        if m.family == "mlp":
            kw = dict(h1=t.h1, w1=t.w1, n_hidden1=m.n_hidden1, n_hidden2=m.n_hidden2,
                      dropout_p=m.dropout_p)
            return neuralnet.MlpSpec(**{**kw, **overrides})
        raise ConfigError(f"{m.family!r} is not a neural network family")

    def validate(self):
        m, t, e = self.model, self.transform, self.eval
        if m.family in NEURAL:
            if t.kind not in IMAGE_KINDS:
                raise ConfigError(f"{m.family} needs transform kind cwt or stft, not {t.kind!r}")
        elif m.family in BASELINE:
            if t.kind not in FRAME_KINDS:
                raise ConfigError(f"{m.family} needs transform kind stft or features, not {t.kind!r}")
        else:
            raise ConfigError(f"unknown model family {m.family!r}")
        if m.reduction not in REDUCTIONS:
            raise ConfigError(f"unknown reduction {m.reduction!r}")
        if t.h1 < 2 or t.w1 < 1:
            raise ConfigError("need h1 >= 2 and w1 >= 1")
        if not 0 < t.f_min < t.f_max <= self.run.sample_rate / 2:
            raise ConfigError("wavelet band must satisfy 0 < f_min < f_max <= F_s/2")
        if not t.mu > t.sigma > 0:
            raise ConfigError("wavelet needs mu > sigma > 0")
        if not 0.0 <= m.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if not 0.0 < e.top_frac <= 1.0:
            raise ConfigError("top_frac must lie in (0, 1]")
        if e.median_kernel_s < 0 or e.folds < 2:
            raise ConfigError("need median_kernel_s >= 0 and folds >= 2")
        if e.split not in ("test", "train"):
            raise ConfigError("eval split must be test or train")
        if self.corpus.n_train < 1 or self.corpus.n_test < 0:
            raise ConfigError("need n_train >= 1 and n_test >= 0")
        if self.corpus.n_train + self.corpus.n_test > self.corpus.n_recordings:
            raise ConfigError("n_train + n_test exceeds n_recordings")
        try:
            self.synth_config().validate(self.run.sample_rate)
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


def _coerce(kind, text, where):
    try:
        if kind is bool:
            return text.strip().lower() in ("1", "true", "yes", "on")
        return kind(text.strip()) if kind is not str else text.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot parse {text!r} as {kind.__name__}") from exc


def _field_types(section_cls):
    return {f.name: type(f.default) for f in dataclasses.fields(section_cls)}


def config_to_ini(cfg):
    """Serialize to INI text; floats use ``repr`` so parsing is exact."""
    out = io.StringIO()
    out.write("# detector pipeline configuration\n")
    for sec in dataclasses.fields(cfg):
        out.write(f"\n[{sec.name}]\n")
        for key, value in asdict(getattr(cfg, sec.name)).items():
            out.write(f"{key} = {value!r}\n" if isinstance(value, float) else f"{key} = {value}\n")
    return out.getvalue()


def set_option(cfg, dotted, text):
    """Apply one ``section.key=value`` override in place."""
    section, _, key = dotted.partition(".")
    if not key or not hasattr(cfg, section) or section.startswith("_"):
        raise ConfigError(f"unknown config key {dotted!r}")
    sec = getattr(cfg, section)
    types = _field_types(type(sec))
    if key not in types:
        raise ConfigError(f"unknown config key {dotted!r}")
    setattr(sec, key, _coerce(types[key], text, dotted))


def config_from_ini(text):
    parser = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
                                       interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    cfg = PipelineConfig()
    for section in parser.sections():
        for key, value in parser.items(section):
            set_option(cfg, f"{section}.{key}", value)
    return cfg


def load_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return config_from_ini(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def config_hash(cfg):
    return hashlib.sha256(config_to_ini(cfg).encode("utf-8")).hexdigest()


def parse_grid_filter(text):
    """``"k=3,5; n_filters=32"`` -> ``{"k": {"3", "5"}, "n_filters": {"32"}}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.replace(";", " ").split())):
        key, sep, vals = part.partition("=")
        if not sep or not vals:
            raise ConfigError(f"bad grid filter {part!r}")
        out[key.strip()] = {v.strip() for v in vals.split(",")}
    return out


def _norm(v):
    return repr(float(v)) if isinstance(v, (int, float)) and not isinstance(v, bool) else str(v)


def filtered_grid(cfg):
    """The family grid, restricted by ``eval.grid``."""
    family = cfg.model.family
    try:
        grid = evaluation.family_grid(family)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    flt = parse_grid_filter(cfg.eval.grid)
    keys = set().union(*(p.keys() for p in grid))
    unknown = set(flt) - keys
    if unknown:
        raise ConfigError(f"grid filter keys {sorted(unknown)} not in the {family} grid")
    wanted = {k: {_norm(_coerce_num(v)) for v in vs} for k, vs in flt.items()}
    grid = [p for p in grid if all(k in p and _norm(p[k]) in vs for k, vs in wanted.items())]
    if not grid:
        raise ConfigError("grid filter leaves no points")
    return grid


def _coerce_num(text):
    try:
        return float(text)
    except ValueError:
        return text


# ---------------------------------------------------------------------------
# Datasets


@dataclass(eq=False)
class Item:
    """One recording with its frame-level representation and labels."""

    recording_id: str
    values: np.ndarray  # h1 x T image, or T x d frame features
    frame_labels: np.ndarray
    frame_rate: float
    freq_axis: np.ndarray = None


def wavelet_bank(cfg):
    t = cfg.transform
    return transforms.scales_for_band(t.h1, t.f_min, t.f_max, t.mu, cfg.run.sample_rate, t.sigma)


def _check_rate(rec, cfg):
    if rec.sample_rate != cfg.run.sample_rate:
        raise DataError(f"{rec.id}: sampled at {rec.sample_rate} Hz, config expects "
                        f"{cfg.run.sample_rate} Hz")


def image_items(corpus, cfg, kind=None, cache=None):
    """Unstandardized images with labels held onto the frame grid.

    `cache`, when a dict, memoizes images per recording and transform.
    """
    kind = kind or cfg.transform.kind
    t = cfg.transform
    key_t = (kind, t.h1) + ((t.mu, t.sigma, t.f_min, t.f_max) if kind == "cwt" else ())
    bank = wavelet_bank(cfg) if kind == "cwt" else None
    items = []
    for rec, track in corpus:
        _check_rate(rec, cfg)
        key = (rec.id, rec.samples.size) + key_t
        img = cache.get(key) if cache is not None else None
        if img is None:
            img = (transforms.cwt_scalogram(rec, bank) if kind == "cwt"
                   else transforms.stft_spectrogram(rec, t.h1))
            if cache is not None:
                cache[key] = img
        fl = upsample_labels(track, img.frame_rate, img.n_frames)
        items.append(Item(rec.id, img.values, fl.labels, img.frame_rate, img.freq_axis))
    return items


def frame_items(corpus, cfg, kind=None, cache=None):
    """Per-frame vectors (``T x d``) for the baseline classifiers."""
    kind = kind or cfg.transform.kind
    if kind == "stft":
        return [Item(it.recording_id, it.values.T, it.frame_labels, it.frame_rate, it.freq_axis)
                for it in image_items(corpus, cfg, "stft", cache)]
    if kind != "features":
        raise ConfigError(f"unknown frame feature kind {kind!r}")
    h1 = cfg.transform.h1
    items = []
    for rec, track in corpus:
        _check_rate(rec, cfg)
        key = (rec.id, rec.samples.size, "features", h1)
        X = cache.get(key) if cache is not None else None
        if X is None:
            X = features.extract_features(rec, h1)
            if cache is not None:
                cache[key] = X
        rate = rec.sample_rate / h1
        fl = upsample_labels(track, rate, X.shape[0])
        items.append(Item(rec.id, X, fl.labels, rate))
    return items


def image_stats(items):
    imgs = [transforms.TimeFrequencyImage(it.values, it.freq_axis, it.frame_rate, "stft")
            for it in items]
    return transforms.standardize(imgs)[1]


def patch_dataset(items, stats, w1, kind="cwt"):
    """Standardize with `stats` and cut non-overlapping patches."""
    parts = []
    for it in items:
        img = transforms.TimeFrequencyImage((it.values - stats.mean) / stats.std, it.freq_axis,
                                            it.frame_rate, kind)
        parts.append(transforms.slice_patches(img, w1, it.frame_labels, it.recording_id))
    return transforms.concat_patches(parts)


def stack_frames(items):
    X = np.concatenate([it.values for it in items])
    y = np.concatenate([it.frame_labels for it in items]).astype(np.int64)
    groups = np.concatenate([[it.recording_id] * it.values.shape[0] for it in items])
    return X, y, groups


# ---------------------------------------------------------------------------
# Detectors


@dataclass(eq=False)
class Detector:
    family: str
    kind: str
    model: object
    meta: dict
    aux: dict = field(default_factory=dict)

    @property
    def is_neural(self):
        return self.family in NEURAL


@dataclass(eq=False)
class ScoreSet:
    """Class probabilities per scoring unit (patch or frame), in recording order."""

    probs: np.ndarray
    labels: np.ndarray
    groups: np.ndarray
    starts: np.ndarray
    unit_rate: float

    @property
    def scores(self):
        return self.probs[:, 1]


def _transform_meta(cfg):
    t = cfg.transform
    return {"kind": t.kind, "h1": t.h1, "w1": t.w1, "mu": t.mu, "sigma": t.sigma,
            "f_min": t.f_min, "f_max": t.f_max, "sample_rate": cfg.run.sample_rate}


class FramePreprocessor:
    """z-score, then optional PCA or RFE, fitted on training frames."""

    def __init__(self, mean, std, reduction="none", pca=None, selected=None):
        self.mean, self.std = mean, std
        self.reduction, self.pca, self.selected = reduction, pca, selected

    @classmethod
    def fit(cls, X, y, reduction="none", pca_n=0, rfe_m=0, rfe_path=None):
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        Z = (X - mean) / std
        pca = selected = None
        if reduction == "pca":
            dim = features.pca_dim(pca_n, X.shape[1])
            pca = features.pca_fit(Z, dim)
        elif reduction == "rfe":
            dim = features.rfe_dim(rfe_m, X.shape[1])
            path = rfe_path or features.rfe_select(Z, y, dim)
            selected = path.subset(dim)
        return cls(mean, std, reduction, pca, selected)

    def __call__(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.std
        if self.pca is not None:
            return features.pca_transform(self.pca, Z)
        if self.selected is not None:
            return Z[:, self.selected]
        return Z

    @property
    def out_dim(self):
        if self.pca is not None:
            return self.pca.n_components
        if self.selected is not None:
            return self.selected.size
        return self.mean.size

    def arrays(self):
        out = {"mean": self.mean, "std": self.std}
        if self.pca is not None:
            out.update(pca_mean=self.pca.mean, pca_components=self.pca.components,
                       pca_variance=self.pca.explained_variance)
        if self.selected is not None:
            out["selected"] = self.selected.astype(np.int64)
        return out

    @classmethod
    def from_arrays(cls, reduction, a):
        pca = None
        if reduction == "pca":
            pca = features.PcaModel(a["pca_mean"], a["pca_components"], a["pca_variance"])
        return cls(a["mean"], a["std"], reduction, pca, a.get("selected"))


def stratified_cap(y, cap, rng):
    """Indices of a class-stratified subsample of at most `cap` rows (sorted)."""
    y = np.asarray(y)
    if cap <= 0 or y.size <= cap:
        return np.arange(y.size)
    keep = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        n = max(1, int(round(cap * idx.size / y.size)))
        keep.append(rng.choice(idx, size=min(n, idx.size), replace=False))
    return np.sort(np.concatenate(keep))


def fit_classifier(family, Z, y, cfg, **point):
    """Fit a baseline on preprocessed frames; `point` may override C / gamma."""
    seed = cfg.run.seed
    m = cfg.model
    if family == "nb":
        return baselines.nb_fit(Z, y)
    if family == "rf":
        return baselines.rf_fit(Z, y, n_trees=m.n_trees, seed=derive_seed(seed, "rf"))
    if family == "svm":
        idx = stratified_cap(y, m.svm_max_train, make_rng(seed, "svm_subsample"))
        C = float(point.get("C", m.svm_c))
        gamma = float(point.get("gamma_scale", m.svm_gamma_scale)) / Z.shape[1]
        return baselines.svm_fit(Z[idx], y[idx], C=C, gamma=gamma, seed=derive_seed(seed, "svm"))
    raise ConfigError(f"unknown baseline family {family!r}")


def fit_detector(train_corpus, cfg, log=None, cache=None):
    """Transform the training recordings and fit the configured detector."""
    cfg.validate()
    family, kind = cfg.model.family, cfg.transform.kind
    meta = {"family": family, "transform": _transform_meta(cfg)}
    if family in NEURAL:
        items = image_items(train_corpus, cfg, cache=cache)
        stats = image_stats(items)
        data = patch_dataset(items, stats, cfg.transform.w1, kind)
        model = neuralnet.train(cfg.net_spec(), data, cfg.train_config(), log=log)
        meta.update(image_mean=stats.mean, image_std=stats.std)
        model.meta = meta
        return Detector(family, kind, model, meta)
    items = frame_items(train_corpus, cfg, cache=cache)
    X, y, _ = stack_frames(items)
    if np.unique(y).size < 2:
        raise DataError("training frames must contain both classes")
    m = cfg.model
    prep = FramePreprocessor.fit(X, y, m.reduction, m.pca_n, m.rfe_m)
    model = fit_classifier(family, prep(X), y, cfg)
    meta.update(reduction=m.reduction, n_features_in=int(X.shape[1]), n_features=prep.out_dim)
    if prep.selected is not None:
        meta["selected"] = [int(i) for i in prep.selected]
    return Detector(family, kind, model, meta, prep.arrays())


def score_detector(det, corpus, cfg, cache=None):
    """Class probabilities for every patch / frame of `corpus`."""
    t = det.meta["transform"]
    if t["kind"] != cfg.transform.kind:
        raise ConfigError(f"model was trained on {t['kind']!r} but config asks for "
                          f"{cfg.transform.kind!r}")
    # rebuild the transform exactly as at training time
    mcfg = PipelineConfig()
    mcfg.run.sample_rate = t["sample_rate"]
    for k in ("kind", "h1", "w1", "mu", "sigma", "f_min", "f_max"):
        setattr(mcfg.transform, k, t[k])
    if det.is_neural:
        items = image_items(corpus, mcfg, cache=cache)
        stats = transforms.Stats(det.meta["image_mean"], det.meta["image_std"])
        data = patch_dataset(items, stats, t["w1"], t["kind"])
        probs = neuralnet.predict(det.model, data.patches)
        return ScoreSet(probs, data.y, data.recording_ids, data.starts,
                        items[0].frame_rate / t["w1"]), data
    items = frame_items(corpus, mcfg, cache=cache)
    X, y, groups = stack_frames(items)
    prep = FramePreprocessor.from_arrays(det.meta["reduction"], det.aux)
    probs = baselines.PREDICT[det.family](det.model, prep(X))
    starts = np.concatenate([np.arange(it.values.shape[0]) for it in items])
    return ScoreSet(probs, y, groups, starts, items[0].frame_rate), None


def filtered_scores(scoreset, kernel_s):
    """Per-recording median filter of the class-1 scores."""
    length = evaluation.median_kernel_length(kernel_s, scoreset.unit_rate)
    return evaluation.median_filter_groups(scoreset.scores, scoreset.groups, length)


def save_detector(path, det):
    if det.is_neural:
        neuralnet.save_model(path, det.model)
    else:
        baselines.save_baseline(path, det.family, det.model, det.meta, det.aux)


def load_detector(path):
    from .container import read_container
    kind = read_container(path)[0]
    if kind in NEURAL:
        model = neuralnet.load_model(path)
        return Detector(kind, model.meta["transform"]["kind"], model, model.meta)
    kind, model, meta, aux = baselines.load_baseline(path)
    return Detector(kind, meta["transform"]["kind"], model, meta, aux)


# ---------------------------------------------------------------------------
# Cross-validation


def grid_n_params(cfg, point):
    if cfg.model.family in NEURAL:
        return cfg.net_spec(**{k: v for k, v in point.items()}).n_params
    return int(point["dim"])


def crossval(train_corpus, cfg, grid=None, log=None, cache=None):
    """Recording-level k-fold grid search scored by validation PR area."""
    cfg.validate()
    grid = grid if grid is not None else filtered_grid(cfg)
    family = cfg.model.family
    if family in NEURAL:
        items = {it.recording_id: it for it in image_items(train_corpus, cfg, cache=cache)}
    else:
        items = {it.recording_id: it for it in frame_items(train_corpus, cfg, cache=cache)}
    groups = [rec.id for rec, _ in train_corpus]
    labels_by_group = {g: items[g].frame_labels for g in groups}
    fold_cache = {}

    def neural_eval(train_g, val_g, point):
        tr = [items[g] for g in train_g]
        va = [items[g] for g in val_g]
        stats = image_stats(tr)
        spec = cfg.net_spec(**point)
        kind = cfg.transform.kind
        data = patch_dataset(tr, stats, spec.w1, kind)
        vdata = patch_dataset(va, stats, spec.w1, kind)
        if vdata.y.sum() == 0:
            return np.nan
        model = neuralnet.train(spec, data, cfg.train_config())
        return evaluation.pr_area(neuralnet.predict(model, vdata.patches)[:, 1], vdata.y)

    def baseline_eval(train_g, val_g, point):
        key = tuple(train_g)
        if key not in fold_cache:
            X, y, _ = stack_frames([items[g] for g in train_g])
            base = FramePreprocessor.fit(X, y)
            fold_cache[key] = {"X": X, "y": y, "base": base}
        fc = fold_cache[key]
        X, y = fc["X"], fc["y"]
        Xv, yv, _ = stack_frames([items[g] for g in val_g])
        if yv.sum() == 0:
            return np.nan
        if point["reduction"] == "pca":
            if "pca" not in fc:
                Z = fc["base"](X)
                fc["pca"] = features.pca_fit(Z, min(Z.shape))
            full = fc["pca"]
            pca = features.PcaModel(full.mean, full.components[:point["dim"]],
                                    full.explained_variance[:point["dim"]])
            prep = FramePreprocessor(fc["base"].mean, fc["base"].std, "pca", pca=pca)
        else:
            if "rfe" not in fc:
                target = min(features.rfe_dim(m, X.shape[1]) for m in evaluation.RFE_STEPS)
                fc["rfe"] = features.rfe_select(fc["base"](X), y, target)
            prep = FramePreprocessor(fc["base"].mean, fc["base"].std, "rfe",
                                     selected=fc["rfe"].subset(point["dim"]))
        model = fit_classifier(family, prep(X), y, cfg, **point)
        return evaluation.pr_area(baselines.PREDICT[family](model, prep(Xv))[:, 1], yv)

    evaluate = neural_eval if family in NEURAL else baseline_eval
    return evaluation.crossval_grid(evaluate, groups, labels_by_group, grid, cfg.eval.folds,
                                    cfg.run.seed, lambda p: grid_n_params(cfg, p), log)
