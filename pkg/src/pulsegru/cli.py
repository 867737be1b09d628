"""Command-line entry point: ``pulsegru <command> [flags]``.

Exit codes: 0 success, 2 usage or I/O error, 3 empty result, 4 numerical abort.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import checkpoint as ckpt_io
from .cost import count_params, estimate_flops
from .metrics import confusion, per_class_metrics, report_csv, report_text
from .model import ModelConfig
from .optim import NumericalAbort
from .pipeline import Dataset, prepare, select_channels
from .segio import SegmentFormatError, list_segment_files, read_segment
from .signals import ChannelConfig
from .synth import gen_cohort, write_cohort
from .training import SPLIT_MODES, Predictions, TrainConfig, cross_validate, fold_datasets, make_folds, train_fold

DATA_ENV = "PULSEGRU_DATA_DIR"
EXIT_OK, EXIT_USAGE, EXIT_EMPTY, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("pulsegru")


class CliError(Exception):
    def __init__(self, msg: str, code: int = EXIT_USAGE):
        super().__init__(msg)
        self.code = code


def _default_dir(sub: str) -> Path:
    return Path(os.environ.get(DATA_ENV, "data")) / sub


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as e:
        raise CliError(f"output directory {path} is not writable: {e}") from e
    return path


def _channel_config(args) -> ChannelConfig:
    if getattr(args, "d", None) is not None:
        return ChannelConfig.from_d(args.d)
    return ChannelConfig(args.channels)


def _manifest(args, **extra) -> dict:
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()
             if k != "func"}
    return {"tool": "pulsegru", "version": __version__, "command": args.command,
            "flags": flags, **extra}


# ---------------------------------------------------------------- datasets on disk

def save_tensors(path: Path, ds: Dataset) -> None:
    np.savez(path, x=ds.x, y=ds.y, subject_ids=ds.subject_ids.astype(str),
             segment_ids=ds.segment_ids.astype(str), channels=np.asarray(ds.channels))


def load_tensors(path: Path) -> Dataset:
    try:
        z = np.load(path, allow_pickle=False)
        return Dataset(z["x"].astype(np.float32), z["y"].astype(np.int64),
                       z["subject_ids"].astype(object), z["segment_ids"].astype(object),
                       tuple(str(c) for c in z["channels"]))
    except (OSError, KeyError, ValueError) as e:
        raise CliError(f"cannot read tensors {path}: {e}") from e


def _read_segments(root: Path):
    files = list_segment_files(root)
    segments, bad = [], []
    for f in files:
        try:
            segments.append(read_segment(f))
        except (SegmentFormatError, OSError) as e:
            bad.append({"segment_id": f.stem, "file": str(f), "reason": f"malformed: {e}"})
    return files, segments, bad


def _load_dataset(path: Path, config: ChannelConfig) -> Dataset:
    if not path.exists():
        raise CliError(f"no such input: {path}")
    if path.is_file() and path.suffix == ".npz":
        ds = load_tensors(path)
    else:
        _, segments, _ = _read_segments(path)
        ds = prepare(segments, ChannelConfig.FOUR).dataset
    if ds.channels == config.channels:
        return ds
    if ds.channels == ChannelConfig.FOUR.channels:
        return select_channels(ds, config)
    raise CliError(f"input has channels {ds.channels}; cannot provide {config.channels}")


def write_predictions(path: Path, p: Predictions) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["segment_id", "subject_id", "label", "pred", "test_fold",
                    "logit_nsr", "logit_af", "logit_pacpvc"])
        for i in range(len(p)):
            w.writerow([p.segment_ids[i], p.subject_ids[i], int(p.labels[i]), int(p.preds[i]),
                        int(p.test_fold[i]), *(repr(float(v)) for v in p.logits[i])])


def read_predictions(path: Path) -> tuple[np.ndarray, np.ndarray]:
    try:
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        labels = np.array([int(r["label"]) for r in rows], dtype=np.int64)
        preds = np.array([int(r["pred"]) for r in rows], dtype=np.int64)
    except (OSError, KeyError, ValueError) as e:
        raise CliError(f"cannot read predictions {path}: {e}") from e
    return labels, preds


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    out = _ensure_dir(Path(args.out) if args.out else _default_dir("synth"))
    try:
        cohort = gen_cohort(args.subjects, seed=args.seed,
                            segments_per_subject=args.segments_per_subject,
                            clean=args.clean, motion=args.motion)
    except ValueError as e:
        raise CliError(str(e)) from e
    path = write_cohort(cohort, out)
    print(path)
    return EXIT_OK


def cmd_preprocess(args) -> int:
    src = Path(args.input) if args.input else _default_dir("synth")
    if not src.exists():
        raise CliError(f"no such input: {src}")
    out = Path(args.out) if args.out else _default_dir("tensors.npz")
    _ensure_dir(out.parent)
    config = _channel_config(args)
    files, segments, bad = _read_segments(src)
    prep = prepare(segments, config)
    rejections = bad + [{"segment_id": r.segment_id, "reason": r.reason} for r in prep.rejected]
    base = out.with_suffix("")
    _write_json(base.with_name(base.name + ".rejections.json"), rejections)
    _write_json(base.with_name(base.name + ".manifest.json"), _manifest(
        args, inputs=len(files), written=len(prep.dataset), rejected=len(rejections),
        channels=list(config.channels)))
    print(f"{len(prep.dataset)} segments written, {len(rejections)} rejected")
    if len(prep.dataset) == 0:
        print("all segments rejected", file=sys.stderr)
        return EXIT_EMPTY
    save_tensors(out, prep.dataset)
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, max_epochs=args.max_epochs,
                       patience=args.patience, lr=args.lr, beta1=args.beta1, beta2=args.beta2,
                       eps=args.eps, dtype=args.dtype, seed=args.seed, split=args.split)


def _model_config(args, config: ChannelConfig) -> ModelConfig:
    return ModelConfig(d=config.d, gru_hidden=args.hidden)


def _progress(fold: int, rec: dict) -> None:
    log.info("fold %d epoch %d train %.4f val %.4f", fold, rec["epoch"], rec["train_loss"],
             rec["val_loss"])


def _run_record(run, ckpt_path: Path) -> dict:
    return {"fold": run.fold, "history": run.result.state.history,
            "stop_reason": run.result.stop_reason, "best_epoch": run.result.state.best_epoch,
            "best_val_loss": run.result.state.best_val_loss, "checkpoint": ckpt_path.name,
            "class_counts": run.counts}


def cmd_train(args) -> int:
    config = _channel_config(args)
    ds = _load_dataset(Path(args.data) if args.data else _default_dir("tensors.npz"), config)
    if len(ds) == 0:
        raise CliError("dataset is empty", EXIT_EMPTY)
    out = _ensure_dir(Path(args.out) if args.out else _default_dir("train"))
    tcfg = _train_config(args)
    mcfg = _model_config(args, config)
    plan = make_folds(ds.subject_counts(), seed=tcfg.seed)
    fold_ds = fold_datasets(ds, plan)[args.fold - 1]
    ckpt_path = out / f"fold{args.fold}.ckpt.npz"
    split, result, counts = train_fold(mcfg, fold_ds, tcfg, args.fold, ckpt_path,
                                       lambda rec: _progress(args.fold, rec))
    from .training import FoldRun, predict
    run = FoldRun(args.fold, split, result, predict(result.checkpoint.params,
                                                    fold_ds.take(split.test), args.fold), counts)
    _write_json(out / "manifest.json", _manifest(
        args, model=mcfg.to_json(), train=tcfg.to_json(), folds=plan.to_json(),
        runs=[_run_record(run, ckpt_path)]))
    print(ckpt_path)
    return EXIT_OK


def cmd_crossval(args) -> int:
    config = _channel_config(args)
    ds = _load_dataset(Path(args.data) if args.data else _default_dir("tensors.npz"), config)
    if len(ds) == 0:
        raise CliError("dataset is empty", EXIT_EMPTY)
    out = _ensure_dir(Path(args.out) if args.out else _default_dir("crossval"))
    tcfg = _train_config(args)
    mcfg = _model_config(args, config)
    res = cross_validate(mcfg, ds, tcfg, out_dir=out, progress=_progress)
    pred_path = out / "predictions.csv"
    write_predictions(pred_path, res.predictions)
    rep = per_class_metrics(confusion(res.predictions.preds, res.predictions.labels))
    (out / "metrics.csv").write_text(report_csv(rep))
    text = report_text(rep, "Subject-independent two-fold results")
    (out / "report.txt").write_text(text)
    _write_json(out / "manifest.json", _manifest(
        args, model=mcfg.to_json(), train=tcfg.to_json(), folds=res.plan.to_json(),
        runs=[_run_record(r, out / f"fold{r.fold}.ckpt.npz") for r in res.runs],
        predictions=pred_path.name))
    print(text, end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    path = Path(args.predictions)
    if not path.is_file():
        raise CliError(f"missing predictions file: {path}")
    labels, preds = read_predictions(path)
    rep = per_class_metrics(confusion(preds, labels))
    text = report_text(rep, "Subject-independent results")
    print(text, end="")
    out = Path(args.out) if args.out else path.parent
    _ensure_dir(out)
    (out / "metrics.csv").write_text(report_csv(rep))
    (out / "report.txt").write_text(text)
    return EXIT_OK


def cmd_model_info(args) -> int:
    configs = [ChannelConfig.from_d(args.d)] if args.d else list(ChannelConfig)
    rows = []
    for c in configs:
        mcfg = ModelConfig(d=c.d, L=args.length, gru_hidden=args.hidden)
        est = estimate_flops(mcfg)
        rows.append({"channels": c.value, "d": c.d, "params": count_params(mcfg),
                     "flops": est.total, "gru_share": est.gru_share})
    if args.json:
        print(json.dumps({"rows": rows, "methodology": est.methodology}, indent=1))
        return EXIT_OK
    print(f"{'channels':<8} {'d':>2} {'params':>10} {'GFLOPs':>8}")
    for r in rows:
        print(f"{r['channels']:<8} {r['d']:>2} {r['params']:>10,} {r['flops'] / 1e9:>8.3f}")
    print(f"FLOP counting: {est.methodology}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _add_channels(p, default="four"):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--channels", choices=[c.value for c in ChannelConfig], default=default)
    g.add_argument("--d", type=int, choices=(1, 2, 4))


def _add_training(p):
    p.add_argument("--data", help="tensors .npz from preprocess, or a segment directory")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--split", choices=SPLIT_MODES, default="segment",
                   help="within-fold train/val/test granularity")
    _add_channels(p)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pulsegru", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic cohort")
    p.add_argument("--subjects", type=int, default=24)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segments-per-subject", type=int, default=100)
    p.add_argument("--motion", type=float, default=0.5, help="max per-subject motion level")
    p.add_argument("--clean", action="store_true", help="no noise and no motion")
    p.add_argument("--out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="segments -> channel tensors")
    p.add_argument("--input")
    p.add_argument("--out")
    _add_channels(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train on one fold")
    _add_training(p)
    p.add_argument("--fold", type=int, choices=(1, 2), default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="two-fold subject-independent cross-validation")
    _add_training(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("eval", help="metrics table from a predictions file")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("model-info", help="parameter count and FLOP estimate")
    p.add_argument("--d", type=int, choices=(1, 2, 4))
    p.add_argument("--length", type=int, default=1500)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_model_info)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code
    except NumericalAbort as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ckpt_io.CheckpointError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
