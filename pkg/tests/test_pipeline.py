import numpy as np
import pytest

from aedet import pipeline
from aedet.corpus import split_corpus, synth_corpus
from aedet.errors import ConfigError, DataError
from aedet.pipeline import (
    PipelineConfig, config_from_ini, config_hash, config_to_ini, crossval, filtered_grid,
    fit_detector, filtered_scores, load_detector, save_detector, score_detector, set_option,
    stratified_cap,
)


def small_config(family="cnn", kind="cwt"):
    """Tiny corpus and network; baselines keep the full 256-bin frame."""
    cfg = PipelineConfig()
    for key, value in {"corpus.n_recordings": "8", "corpus.duration_s": "4", "corpus.n_train": "6",
                       "corpus.n_test": "2", "transform.h1": "32", "model.family": family,
                       "transform.kind": kind, "model.n_filters": "4", "model.n_dense": "16",
                       "model.n_hidden1": "32", "model.n_hidden2": "8", "train.max_epochs": "6",
                       "train.batch_size": "32", "model.n_trees": "10", "eval.folds": "3",
                       "model.svm_max_train": "300"}.items():
        set_option(cfg, key, value)
    if family not in ("cnn", "mlp"):
        cfg.transform.h1 = 256
    return cfg.validate()


@pytest.fixture(scope="module")
def split():
    cfg = small_config()
    return split_corpus(synth_corpus(cfg.synth_config()), 6, 2, cfg.seed)


@pytest.fixture(scope="module")
def cache():
    return {}


# --- configuration -------------------------------------------------------------

def test_config_round_trip():
    cfg = small_config("svm", "features")
    set_option(cfg, "train.learning_rate", "0.0003")
    set_option(cfg, "eval.grid", "C=1,10")
    back = config_from_ini(config_to_ini(cfg))
    assert back == cfg and config_hash(back) == config_hash(cfg)
    assert config_from_ini(config_to_ini(PipelineConfig())) == PipelineConfig()


def test_config_errors():
    cfg = PipelineConfig()
    with pytest.raises(ConfigError):
        set_option(cfg, "model.nope", "1")
    with pytest.raises(ConfigError):
        set_option(cfg, "model.k", "three")
    with pytest.raises(ConfigError):
        config_from_ini("[model]\nfamily = cnn\n[transform]\nkind = features\n").validate()
    with pytest.raises(ConfigError):
        config_from_ini("not an ini")
    cfg.model.family = "knn"
    with pytest.raises(ConfigError):
        cfg.validate()


def test_model_name_default_and_override():
    cfg = PipelineConfig()
    assert cfg.model_name == "cnn_cwt"
    cfg.model.name = "mine"
    assert cfg.model_name == "mine"


def test_grid_filter():
    cfg = PipelineConfig()
    cfg.eval.grid = "k=3,5; n_filters=32"
    grid = filtered_grid(cfg)
    assert len(grid) == 8 and all(p["n_filters"] == 32 and p["k"] in (3, 5) for p in grid)
    cfg.eval.grid = "k=9"
    with pytest.raises(ConfigError):
        filtered_grid(cfg)
    cfg.eval.grid = "bogus=1"
    with pytest.raises(ConfigError):
        filtered_grid(cfg)


def test_stratified_cap():
    y = np.r_[np.zeros(900, int), np.ones(100, int)]
    idx = stratified_cap(y, 200, np.random.default_rng(0))
    assert idx.size == 200 and y[idx].sum() == 20 and np.all(np.diff(idx) > 0)
    np.testing.assert_array_equal(stratified_cap(y[:50], 200, None), np.arange(50))


# --- detectors ---------------------------------------------------------------------

def test_cnn_fit_score_round_trip(tmp_path, split, cache):
    train, test = split
    cfg = small_config()
    det = fit_detector(train, cfg, cache=cache)
    ss_train, _ = score_detector(det, train, cfg, cache)
    ss, data = score_detector(det, test, cfg, cache)
    assert ss.probs.shape == (len(data), 2) and ss.unit_rate == pytest.approx(250 / 10)
    np.testing.assert_allclose(ss.probs.sum(axis=1), 1.0, atol=1e-9)
    from aedet.evaluation import pr_area
    assert pr_area(ss_train.scores, ss_train.labels) >= pr_area(ss.scores, ss.labels) - 0.02
    save_detector(tmp_path / "m.bin", det)
    back = load_detector(tmp_path / "m.bin")
    np.testing.assert_array_equal(score_detector(back, test, cfg, cache)[0].probs, ss.probs)
    smooth = filtered_scores(ss, 1.0)
    assert smooth.shape == ss.scores.shape


def test_kind_mismatch_is_config_error(split, cache):
    train, test = split
    det = fit_detector(train, small_config("mlp", "stft"), cache=cache)
    with pytest.raises(ConfigError):
        score_detector(det, test, small_config("mlp", "cwt"), cache)


def test_nb_with_rfe_records_selection(tmp_path, split, cache):
    train, test = split
    cfg = small_config("nb", "features")
    cfg.model.reduction = "rfe"
    det = fit_detector(train, cfg, cache=cache)
    assert det.meta["n_features"] == 88 and len(det.meta["selected"]) == 88
    save_detector(tmp_path / "nb.bin", det)
    back = load_detector(tmp_path / "nb.bin")
    assert back.meta["selected"] == det.meta["selected"]
    np.testing.assert_array_equal(back.aux["selected"], det.meta["selected"])
    ss, data = score_detector(back, test, cfg, cache)
    assert data is None and ss.probs.shape[1] == 2 and ss.unit_rate == 31.25


@pytest.mark.parametrize("family,reduction", [("rf", "pca"), ("svm", "none")])
def test_baselines_on_stft(split, cache, family, reduction):
    train, test = split
    cfg = small_config(family, "stft")
    cfg.model.reduction = reduction
    cfg.model.pca_n = 1
    det = fit_detector(train, cfg, cache=cache)
    ss, _ = score_detector(det, test, cfg, cache)
    np.testing.assert_allclose(ss.probs.sum(axis=1), 1.0, atol=1e-9)
    if reduction == "pca":
        assert det.meta["n_features"] == 205  # 0.8 * 256, rounded


def test_single_class_training_is_data_error(split, cache):
    train, _ = split
    rec, track = train[0]
    track = type(track)(track.recording_id, np.zeros_like(track.labels), track.rate)
    with pytest.raises(DataError):
        fit_detector([(rec, track)], small_config("nb", "stft"), cache={})


# --- cross-validation ------------------------------------------------------------------

def test_crossval_single_point_best(split, cache):
    train, _ = split
    cfg = small_config()
    cfg.train.max_epochs = 2
    res = crossval(train, cfg, grid=[{"k": 3, "n_filters": 4, "n_dense": 16}], cache=cache)
    assert res.best_index == 0 and res.fold_scores.shape == (1, 3)


def test_crossval_baseline_grid(split, cache):
    train, _ = split
    cfg = small_config("nb", "features")
    grid = [p for p in pipeline.evaluation.family_grid("nb") if p["dim"] in (304, 243, 88)]
    res = crossval(train, cfg, grid=grid, cache=cache)
    assert len(res.points) == len(grid) and np.all(np.isfinite(res.mean_scores))
