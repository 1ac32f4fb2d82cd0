"""Command-line entry point: ``votseg {synth,train,predict,eval,crossval}``.

Exit codes: 0 success, 1 data error, 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import yaml

from . import __version__
from .datakit import SyntheticConfig, generate_synthetic, load_manifest, load_utterances, split_by_speaker, write_synthetic
from .encoder import FORMAT_VERSION, VotModel
from .errors import ConfigError, DataError, StorageError, VotError
from .evaluation import (
    DEFAULT_TAUS,
    PredictionRecord,
    boundary_offset_table,
    classification_accuracy,
    format_tables,
    read_predictions,
    tolerance_table,
    write_predictions,
)

log = logging.getLogger("votseg")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except OSError as e:
        raise StorageError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a mapping")
    return data


def _taus(text) -> tuple:
    try:
        taus = tuple(float(t) if "." in t else int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise ConfigError(f"bad tolerance list {text!r}") from None
    if not taus or any(t < 0 for t in taus):
        raise ConfigError("tolerances must be nonnegative")
    return taus


def _fractions(text) -> tuple:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"bad fraction list {text!r}") from None


def _outdir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StorageError(f"cannot create output directory {out}: {e}") from e
    return out


def _announce(command, resolved: dict) -> None:
    print(f"# votseg {__version__} {command} config: " + json.dumps(resolved, sort_keys=True, default=str), flush=True)


def _write_json(path, obj) -> None:
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


def _write_text(path, text) -> None:
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise StorageError(f"cannot write {path}: {e}") from e


# -- synth -------------------------------------------------------------------


def cmd_synth(args) -> int:
    conf = _load_config(args.config)
    conf = dict(conf.get("synth", conf))
    overrides = {
        "n_utterances": args.n,
        "n_corpora": args.corpora,
        "negative_fraction": args.negative_fraction,
        "noise_sd": args.noise_sd,
        "n_features": args.features,
        "t_min": args.t_min,
        "t_max": args.t_max,
        "speakers_per_corpus": args.speakers,
        "offset_scale": args.offset_scale,
    }
    known = set(SyntheticConfig.__dataclass_fields__)
    bad = set(conf) - known
    if bad:
        raise ConfigError(f"unknown synth options: {sorted(bad)}")
    conf.update({k: v for k, v in overrides.items() if v is not None})
    conf["seed"] = args.seed
    cfg = SyntheticConfig(**conf)
    split = _fractions(args.split) if args.split else None
    _announce("synth", {**asdict(cfg), "split": split})
    out = _outdir(args)
    utts = generate_synthetic(cfg)
    header = {"seed": args.seed, "generator": asdict(cfg)}
    manifest = write_synthetic(utts, out, header=header)
    print(f"wrote {len(utts)} utterances to {manifest}")
    if split:
        parts = split_by_speaker(utts, split, seed=args.seed)
        for name, part in zip(("train", "val", "test"), parts):
            path = write_synthetic(part, out, manifest_name=f"{name}.jsonl", header=header, write_features=False)
            print(f"wrote {len(part)} utterances to {path}")
    return 0


# -- train -------------------------------------------------------------------


def _train_config(args):
    from .training import TrainConfig

    conf = _load_config(args.config)
    conf = dict(conf.get("train", conf))
    flags = {
        "lam": args.lam,
        "learning_rate": args.lr,
        "max_epochs": args.epochs,
        "patience": args.patience,
        "tau_frames": args.tau,
        "hidden_size": args.hidden,
    }
    conf.update({k: v for k, v in flags.items() if v is not None})
    if args.no_tagger:
        conf["use_tagger"] = False
    if args.no_adversary:
        conf["use_adversary"] = False
    conf["seed"] = args.seed
    cfg = TrainConfig.from_dict(conf)
    cfg.validate()
    return cfg


def cmd_train(args) -> int:
    from . import plotting
    from .training import train, write_log

    cfg = _train_config(args)
    _announce("train", {**cfg.to_dict(), "manifest": args.manifest, "val_manifest": args.val_manifest})
    out = _outdir(args)
    records = load_manifest(args.manifest)
    if args.val_manifest:
        tr_recs, va_recs = records, load_manifest(args.val_manifest)
    else:
        tr_recs, va_recs, _ = split_by_speaker(records, (0.9, 0.1, 0.0), seed=args.seed)
        print(f"no validation manifest: holding out {len(va_recs)} utterances by speaker")
    tr, va = load_utterances(tr_recs), load_utterances(va_recs)

    def report(rec):
        print(
            f"epoch {rec['epoch']:3d}  struct {rec['struct']:.4f}  tagger {rec['tagger']:.4f}  "
            f"adversary {rec['adversary']:.4f}  val_loss {rec['val_task_loss']:.3f}  "
            f"val@2ms {rec['val_proportion'].get('2', float('nan')):.3f}",
            flush=True,
        )

    result = train(tr, va, cfg, on_epoch=report)
    result.model.save(out / "model.pt")
    write_log(out / "train_log.jsonl", cfg, result.log)
    plotting.training_curves(result.log, out / "training.png")
    print(f"best epoch {result.best_epoch}; model written to {out / 'model.pt'}")
    return 0


# -- predict -----------------------------------------------------------------


def cmd_predict(args) -> int:
    model = VotModel.load(args.model)
    _announce("predict", {"model": args.model, "manifest": args.manifest, "seed": args.seed, "model_config": model.describe()})
    out = _outdir(args)
    records = load_manifest(args.manifest)
    rows = []
    for u in load_utterances(records):
        m = model.predict(u.features)
        rows.append(
            PredictionRecord(u.record.utterance_id, m.vot_ms, m.vot_type, m.boundaries.y1, m.boundaries.y2, m.type_prob, FORMAT_VERSION)
        )
    header = {"seed": args.seed, "model_seed": model.seed, "model_version": FORMAT_VERSION, "manifest": os.path.basename(args.manifest)}
    write_predictions(out / "predictions.jsonl", rows, header)
    print(f"wrote {len(rows)} predictions to {out / 'predictions.jsonl'}")
    return 0


# -- eval --------------------------------------------------------------------


def cmd_eval(args) -> int:
    from . import plotting

    taus = _taus(args.taus)
    unseen = set(filter(None, (args.unseen or "").split(",")))
    _announce("eval", {"predictions": args.predictions, "manifest": args.manifest, "taus": taus, "unseen": sorted(unseen), "seed": args.seed})
    out = _outdir(args)
    preds = read_predictions(args.predictions)
    records = [r for r in load_manifest(args.manifest, check_files=False) if r.annotation is not None]
    golds = {r.utterance_id: r.annotation for r in records}
    missing = sorted(set(golds) - set(preds))
    extra = sorted(set(preds) - set(golds))
    if missing or extra:
        raise DataError(f"id mismatch: missing predictions for {missing[:20]}; no gold for {extra[:20]}")
    tables = [tolerance_table(preds, golds, taus, label="all")]
    if unseen:
        corpus = {r.utterance_id: r.corpus_id for r in records}
        for label, keep in (("within-corpus", lambda c: c not in unseen), ("unseen-corpus", lambda c: c in unseen)):
            ids = [i for i in golds if keep(corpus[i])]
            if ids:
                tables.append(tolerance_table({i: preds[i] for i in ids}, {i: golds[i] for i in ids}, taus, label=label))
    acc = classification_accuracy(preds, golds)
    report = {
        "seed": args.seed,
        "n": len(golds),
        "tables": [t.to_dict() for t in tables],
        "type_accuracy": acc,
        "boundary_offsets": boundary_offset_table(preds, golds, taus),
    }
    text = format_tables(tables) + f"\n\nVOT type accuracy: {100 * acc:.1f}%\n"
    _write_json(out / "report.json", report)
    _write_text(out / "report.txt", text)
    plotting.tolerance_curves(tables, out / "tolerance.png")
    plotting.vot_scatter(preds, golds, out / "vot_scatter.png")
    print(text)
    return 0


# -- crossval ----------------------------------------------------------------


def cmd_crossval(args) -> int:
    from . import plotting
    from .training import cross_validate, write_log

    cfg = _train_config(args)
    fractions = _fractions(args.split)
    _announce("crossval", {**cfg.to_dict(), "manifest": args.manifest, "split": fractions})
    out = _outdir(args)
    corpora = {}
    for u in load_utterances(load_manifest(args.manifest)):
        corpora.setdefault(u.record.corpus_id, []).append(u)
    folds = cross_validate(corpora, cfg, fractions, on_epoch=lambda name, rec: print(f"[{name}] epoch {rec['epoch']} val_loss {rec['val_task_loss']:.3f}", flush=True))
    dicts = [f.to_dict() for f in folds]
    for f in folds:
        write_log(out / f"train_log_{f.left_out}.jsonl", cfg, f.train_result.log)
    _write_json(out / "crossval.json", {"seed": args.seed, "config": cfg.to_dict(), "folds": dicts})
    text = "\n\n".join(f"left out: {f.left_out}\n" + format_tables([f.within, f.unseen]) for f in folds)
    _write_text(out / "crossval.txt", text + "\n")
    plotting.crossval_bars(dicts, out / "crossval.png", tau=cfg.eval_taus[0])
    print(text)
    return 0


# -- parser ------------------------------------------------------------------


def _shared(p):
    p.add_argument("--seed", type=int, default=0, help="seed for every random choice in this run")
    p.add_argument("--config", help="YAML/JSON config file; command-line flags override it")
    p.add_argument("--out", required=True, help="output directory")


def _train_flags(p):
    p.add_argument("--lambda", dest="lam", type=float, help="adversary loss weight (default 0.1)")
    p.add_argument("--lr", type=float, help="Adagrad learning rate (default 0.01)")
    p.add_argument("--epochs", type=int, help="maximum epochs (default 100)")
    p.add_argument("--patience", type=int, help="early-stopping patience (default 5)")
    p.add_argument("--tau", type=int, help="training tolerance in frames (default 2)")
    p.add_argument("--hidden", type=int, help="LSTM hidden size per direction (default 100)")
    p.add_argument("--no-tagger", action="store_true", help="drop the VOT-type tagger (single scoring head)")
    p.add_argument("--no-adversary", action="store_true", help="drop the corpus adversary")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="votseg", description="Voice onset time measurement by structured prediction")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    _shared(p)
    p.add_argument("--n", type=int, help="number of utterances")
    p.add_argument("--corpora", type=int, help="number of corpora")
    p.add_argument("--negative-fraction", type=float)
    p.add_argument("--noise-sd", type=float)
    p.add_argument("--features", type=int, help="feature dimension")
    p.add_argument("--t-min", type=int)
    p.add_argument("--t-max", type=int)
    p.add_argument("--speakers", type=int, help="speakers per corpus")
    p.add_argument("--offset-scale", type=float, help="spread of per-corpus feature offsets")
    p.add_argument("--split", help="also write train/val/test manifests split by speaker, e.g. 0.8,0.1,0.1")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    _shared(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--val-manifest")
    _train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="measure VOT with a trained model")
    _shared(p)
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predictions against manual annotations")
    _shared(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--manifest", required=True, help="gold manifest")
    p.add_argument("--taus", default=",".join(str(t) for t in DEFAULT_TAUS))
    p.add_argument("--unseen", help="comma-separated corpus ids to report as unseen")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("crossval", help="leave-one-corpus-out evaluation")
    _shared(p)
    p.add_argument("--manifest", required=True, help="manifest covering all corpora")
    p.add_argument("--split", default="0.8,0.1,0.1", help="train/val/test speaker fractions within each corpus")
    _train_flags(p)
    p.set_defaults(func=cmd_crossval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except VotError as e:
        kind = {1: "data error", 2: "config error", 3: "io error"}[e.exit_code]
        print(f"votseg: {kind}: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"votseg: io error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
