"""Command-line driver: ``aedet {synth,train,eval,predict,crossval,visualize}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation, pipeline
from .corpus import load_corpus, load_wav, split_corpus, write_corpus, LabelTrack
from .errors import ConfigError, DataError
from .neuralnet import write_history
from .svgplot import Panel, Series, write_svg

log = logging.getLogger("aedet")

SUBDIRS = ("models", "reports", "curves", "spectra", "corpus")


class RunDir:
    """Output directory with a lock file and a run manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.outputs = []

    def __enter__(self):
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            for sub in SUBDIRS:
                (self.root / sub).mkdir(exist_ok=True)
        except OSError as exc:
            raise DataError(f"cannot create output directory {self.root}: {exc}") from exc
        self.lock = self.root / ".lock"
        try:
            os.close(os.open(self.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY))
        except FileExistsError:
            raise DataError(f"{self.root} is locked by another run (remove {self.lock} if stale)")
        return self

    def __exit__(self, *exc):
        self.lock.unlink(missing_ok=True)
        return False

    def path(self, sub, name):
        p = self.root / sub / name
        self.outputs.append(p.relative_to(self.root).as_posix())
        return p

    def record(self, command, cfg):
        manifest_path = self.root / "run_manifest.json"
        manifest = {}
        if manifest_path.exists():
            with open(manifest_path, encoding="utf-8") as fh:
                manifest = json.load(fh)
        (self.root / "configs").mkdir(exist_ok=True)
        cfg_name = f"configs/{command}_{cfg.model_name}.ini"
        with open(self.root / cfg_name, "w", encoding="utf-8") as fh:
            fh.write(pipeline.config_to_ini(cfg))
        manifest[f"{command}:{cfg.model_name}"] = {
            "config": cfg_name,
            "config_hash": pipeline.config_hash(cfg),
            "seed": cfg.seed,
            "outputs": sorted(set(self.outputs)),
        }
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _corpus_dir(cfg, out):
    return Path(cfg.paths.corpus) if cfg.paths.corpus else Path(out) / "corpus"


def _load_split(cfg, out, which):
    directory = _corpus_dir(cfg, out)
    corpus = load_corpus(directory, cfg.paths.labels or None, cfg.run.sample_rate)
    if len(corpus) < cfg.corpus.n_train + cfg.corpus.n_test:
        raise DataError(f"{directory} holds {len(corpus)} recordings, split needs "
                        f"{cfg.corpus.n_train + cfg.corpus.n_test}")
    train, test = split_corpus(corpus, cfg.corpus.n_train, cfg.corpus.n_test, cfg.seed)
    if which == "train":
        return train
    if which == "test":
        if not test:
            raise DataError("test split is empty (n_test = 0)")
        return test
    return train, test


def _model_path(args, cfg, run):
    if args.model:
        p = Path(args.model)
    else:
        p = run.root / "models" / f"{cfg.model_name}.bin"
    if not p.exists():
        raise DataError(f"model file not found: {p}")
    return p


def _print(obj):
    print(json.dumps(obj, sort_keys=True))


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(cfg, args, run):
    directory = _corpus_dir(cfg, run.root)
    write_corpus(directory, cfg.synth_config(), cfg.run.sample_rate)
    run.outputs += ["corpus/manifest.json", "corpus/labels.csv"] if not cfg.paths.corpus else []
    _print({"command": "synth", "recordings": cfg.corpus.n_recordings, "dir": str(directory)})


def cmd_train(cfg, args, run):
    train = _load_split(cfg, run.root, "train")
    det = pipeline.fit_detector(train, cfg, log=log.info)
    name = cfg.model_name
    pipeline.save_detector(run.path("models", f"{name}.bin"), det)
    summary = {"command": "train", "model": name}
    if det.is_neural:
        write_history(run.path("reports", f"{name}_history.csv"), det.model.history)
        best = det.model.history[det.model.best_epoch]
        summary.update(epochs=len(det.model.history), best_epoch=det.model.best_epoch,
                       val_acc=round(best["val_acc"], 6), val_loss=round(best["val_loss"], 6))
    else:
        summary.update(n_features=det.meta["n_features"], reduction=det.meta["reduction"])
    _print(summary)


def _curve_panels(title, scoreset, smoothed):
    panels = [Panel("ROC", "false positive rate", "true positive rate", xlim=(0, 1), ylim=(0, 1)),
              Panel("Precision-recall", "recall", "precision", xlim=(0, 1), ylim=(0, 1.02))]
    for label, s, style in (("raw", scoreset.scores, "line"), ("median", smoothed, "dash")):
        fpr, tpr, _ = evaluation.roc_curve(s, scoreset.labels)
        rec, prec, _ = evaluation.pr_curve(s, scoreset.labels)
        panels[0].series.append(Series(fpr, tpr, label, style))
        panels[1].series.append(Series(np.r_[0.0, rec], np.r_[prec[0], prec], label, style))
    t = np.arange(scoreset.scores.size)
    out = Panel(f"{title} outputs", "unit index", "p(event)", ylim=(-0.05, 1.05))
    out.series += [Series(t, scoreset.labels, "label", "line"),
                   Series(t, scoreset.scores, "raw", "dots"),
                   Series(t, smoothed, "median", "line")]
    return panels + [out]


def cmd_eval(cfg, args, run):
    det = pipeline.load_detector(_model_path(args, cfg, run))
    if det.family != cfg.model.family:
        raise ConfigError(f"model file holds a {det.family} model, config says {cfg.model.family}")
    recs = _load_split(cfg, run.root, cfg.eval.split)
    ss, _ = pipeline.score_detector(det, recs, cfg)
    smoothed = pipeline.filtered_scores(ss, cfg.eval.median_kernel_s)
    stem = f"{cfg.model_name}_{cfg.eval.split}"
    summary = {"command": "eval", "model": cfg.model_name, "split": cfg.eval.split}
    for tag, s in (("", ss.scores), ("_median", smoothed)):
        rep = evaluation.evaluate_scores(s, ss.labels, cfg.eval.threshold)
        extra = {"model": cfg.model_name, "split": cfg.eval.split,
                 "filter": "median" if tag else "none"}
        evaluation.write_report_csv(run.path("reports", f"{stem}{tag}.csv"), rep, extra)
        if rep.roc_points:
            evaluation.write_curve_csv(run.path("curves", f"{stem}{tag}_roc.csv"),
                                       *rep.roc_points, ["fpr", "tpr"])
        if rep.pr_points:
            evaluation.write_curve_csv(run.path("curves", f"{stem}{tag}_pr.csv"),
                                       *rep.pr_points, ["recall", "precision"])
        summary.update({f"{k}{tag}": round(v, 6) for k, v in rep.as_row().items()
                        if isinstance(v, float)})
    with open(run.path("reports", f"{stem}_scores.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "start_frame", "label", "score", "score_median"])
        for row in zip(ss.groups, ss.starts, ss.labels, ss.scores, smoothed):
            w.writerow([row[0], int(row[1]), int(row[2]), f"{row[3]:.9f}", f"{row[4]:.9f}"])
    if ss.labels.min() != ss.labels.max():
        write_svg(run.path("curves", f"{stem}.svg"), _curve_panels(cfg.model_name, ss, smoothed))
    _print(summary)


def cmd_predict(cfg, args, run):
    det = pipeline.load_detector(_model_path(args, cfg, run))
    cfg.transform.kind = det.kind
    if args.wav:
        recs = [load_wav(p) for p in args.wav]
        recs = [(r, LabelTrack(r.id, np.zeros(int(np.ceil(r.duration * 10)), np.int8)))
                for r in recs]
    else:
        recs = _load_split(cfg, run.root, "test")
    ss, _ = pipeline.score_detector(det, recs, cfg)
    smoothed = pipeline.filtered_scores(ss, cfg.eval.median_kernel_s)
    frames_per_unit = det.meta["transform"]["w1"] if det.is_neural else 1
    frame_rate = ss.unit_rate * frames_per_unit
    path = run.path("reports", f"{cfg.model_name}_predictions.csv")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["recording_id", "start_frame", "start_s", "p0", "p1", "p1_median", "detected"])
        for g, st, p, m in zip(ss.groups, ss.starts, ss.probs, smoothed):
            w.writerow([g, int(st), f"{st / frame_rate:.4f}", f"{p[0]:.9f}", f"{p[1]:.9f}",
                        f"{m:.9f}", int(m >= cfg.eval.threshold)])
    _print({"command": "predict", "model": cfg.model_name, "units": int(ss.scores.size),
            "detected": int((smoothed >= cfg.eval.threshold).sum()), "file": str(path)})


def cmd_crossval(cfg, args, run):
    train = _load_split(cfg, run.root, "train")
    result = pipeline.crossval(train, cfg, log=log.info)
    evaluation.write_grid_csv(run.path("reports", f"{cfg.model_name}_grid.csv"), result)
    _print({"command": "crossval", "model": cfg.model_name, "points": len(result.points),
            "best": result.best_point,
            "best_pr_area": round(float(result.mean_scores[result.best_index]), 6)})


def cmd_visualize(cfg, args, run):
    det = pipeline.load_detector(_model_path(args, cfg, run))
    if not det.is_neural:
        raise ConfigError("class spectra need a patch model (cnn or mlp)")
    train, test = _load_split(cfg, run.root, "both")
    if not test:
        raise DataError("test split is empty (n_test = 0)")
    ss, test_data = pipeline.score_detector(det, test, cfg)
    _, train_data = pipeline.score_detector(det, train, cfg)
    spectra = evaluation.class_spectra(ss.probs, test_data.patches, train_data,
                                       cfg.eval.top_frac)
    name = cfg.model_name
    evaluation.write_spectra_csv(run.path("spectra", f"{name}.csv"), spectra)
    f = spectra.freq_axis
    panels = [Panel(f"class {c}", "frequency (Hz)", "standardized magnitude", series=[
        Series(f, spectra.test[c], "test (top scores)", "line"),
        Series(f, spectra.train[c], "train (labelled)", "dash")]) for c in (0, 1)]
    write_svg(run.path("spectra", f"{name}.svg"), panels)
    _print({"command": "visualize", "model": name,
            "peak_hz_class1": round(float(f[spectra.test[1].argmax()]), 3),
            "peak_hz_class0": round(float(f[spectra.test[0].argmax()]), 3)})


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "crossval": cmd_crossval, "visualize": cmd_visualize}


# ---------------------------------------------------------------------------
# Argument handling


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--seed", type=int, help="root seed (run.seed)")
    common.add_argument("--out", default="run", help="output directory (default: run)")
    common.add_argument("--family", help="model family: cnn, mlp, nb, rf, svm (model.family)")
    common.add_argument("--kind", help="transform: cwt, stft, features (transform.kind)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="aedet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"synth": "write the synthetic corpus", "train": "fit a detector on the train split",
             "eval": "score a split and write reports and curves",
             "predict": "score WAV files (or the test split)",
             "crossval": "grid search with recording-level folds",
             "visualize": "class spectra of top-scoring patches"}
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text)
        if name in ("eval", "predict", "visualize"):
            p.add_argument("--model", help="model file (default: OUT/models/NAME.bin)")
        if name == "predict":
            p.add_argument("wav", nargs="*", help="WAV files to score")
    return parser


def resolve_config(args):
    cfg = pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.family:
        cfg.model.family = args.family
    if args.kind:
        cfg.transform.kind = args.kind
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        pipeline.set_option(cfg, key.strip(), value)
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        with RunDir(args.out) as run:
            COMMANDS[args.command](cfg, args, run)
            run.record(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
