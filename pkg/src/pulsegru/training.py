"""Fold construction, class rebalancing, and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint
from .model import ModelConfig, init_params, loss_and_grads, predict_class, predict_logits, softmax_xent
from .optim import Adam, NumericalAbort
from .pipeline import Dataset

log = logging.getLogger(__name__)

# RNG stream ids, one per purpose
_INIT, _SHUFFLE, _DROPOUT, _UPSAMPLE, _FOLDS, _SPLIT = range(6)


def stream(seed: int, purpose: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, *extra)))


# ---------------------------------------------------------------- folds and splits

@dataclass
class FoldPlan:
    fold1_subjects: list[str]
    fold2_subjects: list[str]
    class_counts: np.ndarray  # (2, 3) segments per fold and class

    def folds(self) -> tuple[list[str], list[str]]:
        return self.fold1_subjects, self.fold2_subjects

    def to_json(self) -> dict:
        return {"fold1": self.fold1_subjects, "fold2": self.fold2_subjects,
                "class_counts": self.class_counts.tolist()}


def make_folds(subject_counts: dict[str, np.ndarray], seed: int = 0) -> FoldPlan:
    """Greedy two-way split balancing subjects and segments per rhythm.

    Subjects are ordered by (dominant rhythm, descending segment count),
    ties broken by a seeded shuffle, and each goes to the fold holding fewer
    segments of its dominant rhythm (then fewer such subjects, then fewer
    segments overall, then fold 1).
    """
    counts = {s: np.asarray(c, dtype=np.int64) for s, c in subject_counts.items()}
    for cls in range(3):
        holders = [s for s, c in counts.items() if c[cls] > 0]
        if len(holders) == 1:
            raise ValueError(f"rhythm class {cls} occurs in only one subject ({holders[0]}); "
                             "cannot be split subject-exclusively")
    names = sorted(counts)
    rng = stream(seed, _FOLDS)
    names = [names[i] for i in rng.permutation(len(names))]
    names.sort(key=lambda s: (int(np.argmax(counts[s])), -int(counts[s].sum())))

    seg = np.zeros((2, 3), dtype=np.int64)
    subj = np.zeros((2, 3), dtype=np.int64)
    folds: tuple[list[str], list[str]] = ([], [])
    for s in names:
        c = counts[s]
        dom = int(np.argmax(c))
        k = min((0, 1), key=lambda f: (seg[f, dom], subj[f, dom], seg[f].sum(), f))
        folds[k].append(s)
        seg[k] += c
        subj[k, dom] += 1
    return FoldPlan(sorted(folds[0]), sorted(folds[1]), seg)


@dataclass
class SplitPlan:
    train: np.ndarray  # indices into the fold's dataset
    val: np.ndarray
    test: np.ndarray

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("train", "val", "test")}


SPLIT_MODES = ("segment", "subject")


def split_fold(ds: Dataset, seed: int = 0, fractions=(0.8, 0.1, 0.1),
               mode: str = "segment") -> SplitPlan:
    """Within-fold 80/10/10 split.

    ``mode="segment"``: each subject's segments are shuffled and cut in the
    given proportions, so the test part is subject-dependent (its subjects
    also train). ``mode="subject"``: whole subjects go to one part, taken in
    seeded order within each dominant rhythm and placed where the segment
    deficit against the target share is largest.
    """
    if mode not in SPLIT_MODES:
        raise ValueError(f"unknown split mode {mode!r}")
    rng = stream(seed, _SPLIT)
    parts: tuple[list, list, list] = ([], [], [])
    subjects = sorted(set(map(str, ds.subject_ids)))
    if mode == "segment":
        for sid in subjects:
            idx = np.flatnonzero(ds.subject_ids == sid)
            idx = idx[rng.permutation(idx.size)]
            n_train = int(round(fractions[0] * idx.size))
            n_val = int(round(fractions[1] * idx.size))
            parts[0].extend(idx[:n_train])
            parts[1].extend(idx[n_train:n_train + n_val])
            parts[2].extend(idx[n_train + n_val:])
    else:
        counts = ds.subject_counts()
        subjects = [subjects[i] for i in rng.permutation(len(subjects))]
        subjects.sort(key=lambda s: int(np.argmax(counts[s])))
        for cls in range(3):
            group = [s for s in subjects if int(np.argmax(counts[s])) == cls]
            total = sum(int(counts[s].sum()) for s in group)
            have = np.zeros(3)
            for s in group:
                k = int(np.argmax(np.asarray(fractions) * total - have))
                have[k] += counts[s].sum()
                parts[k].extend(np.flatnonzero(ds.subject_ids == s))
    return SplitPlan(*(np.sort(np.asarray(p, dtype=np.int64)) for p in parts))


def upsample_minority(labels: np.ndarray, seed: int = 0, classes: int = 3) -> np.ndarray:
    """Indices into ``labels`` with minority classes resampled up to the majority count.

    Originals come first, followed by same-class duplicates drawn with
    replacement.
    """
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=classes)
    if np.any(counts == 0):
        raise ValueError(f"cannot upsample: empty class in counts {counts.tolist()}")
    rng = stream(seed, _UPSAMPLE)
    target = counts.max()
    extra = [rng.choice(np.flatnonzero(labels == c), size=target - counts[c], replace=True)
             for c in range(classes) if counts[c] < target]
    return np.concatenate([np.arange(labels.size), *extra]).astype(np.int64)


# ---------------------------------------------------------------- training loop

@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 40
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dtype: str = "float32"
    seed: int = 0
    split: str = "segment"

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainState:
    epoch: int = 0
    best_val_loss: float = math.inf
    best_epoch: int = 0
    since_improvement: int = 0
    history: list[dict] = field(default_factory=list)

    def record(self, train_loss: float, val_loss: float) -> bool:
        """Log one finished epoch; True when validation loss strictly improved."""
        self.epoch += 1
        self.history.append({"epoch": self.epoch, "train_loss": train_loss, "val_loss": val_loss})
        if val_loss < self.best_val_loss:
            self.best_val_loss = val_loss
            self.best_epoch = self.epoch
            self.since_improvement = 0
            return True
        self.since_improvement += 1
        return False

    def stop_reason(self, max_epochs: int, patience: int) -> str | None:
        if self.since_improvement >= patience:
            return "early_stop"
        if self.epoch >= max_epochs:
            return "max_epochs"
        return None


def run_epochs(epoch_fn: Callable[[int], tuple[float, float]], max_epochs: int = 200,
               patience: int = 40, on_improve: Callable[[TrainState], None] | None = None,
               state: TrainState | None = None) -> tuple[TrainState, str]:
    """Drive ``epoch_fn(epoch) -> (train_loss, val_loss)`` until the stop rule fires."""
    state = state or TrainState()
    while True:
        train_loss, val_loss = epoch_fn(state.epoch + 1)
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise NumericalAbort(f"non-finite loss at epoch {state.epoch + 1}")
        if state.record(train_loss, val_loss) and on_improve is not None:
            on_improve(state)
        reason = state.stop_reason(max_epochs, patience)
        if reason:
            return state, reason


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled mini-batches; a trailing batch of one joins the previous batch."""
    order = rng.permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and out[-1].size == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def mean_xent(params, ds: Dataset, batch_size: int = 32) -> float:
    if len(ds) == 0:
        return math.nan
    logits = predict_logits(params, ds.x, batch_size)
    return softmax_xent(logits.astype(np.float64), ds.y)[0]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    state: TrainState
    stop_reason: str


class TrainingAborted(NumericalAbort):
    def __init__(self, msg: str, last_good: Checkpoint | None):
        super().__init__(msg)
        self.last_good = last_good


def train(cfg: ModelConfig, train_set: Dataset, val_set: Dataset, tcfg: TrainConfig = TrainConfig(),
          checkpoint_path: str | Path | None = None, progress: Callable[[dict], None] | None = None
          ) -> TrainResult:
    """Mini-batch Adam with min-validation-loss selection and early stopping.

    ``train_set`` and ``val_set`` are used as given (upsample beforehand).
    The best checkpoint is written to ``checkpoint_path`` on every strict
    improvement when a path is given.
    """
    dtype = np.dtype(tcfg.dtype)
    params = init_params(cfg, seed=int(stream(tcfg.seed, _INIT).integers(2**31)), dtype=dtype)
    opt = Adam(lr=tcfg.lr, beta1=tcfg.beta1, beta2=tcfg.beta2, eps=tcfg.eps)
    shuffle_rng = stream(tcfg.seed, _SHUFFLE)
    dropout_rng = stream(tcfg.seed, _DROPOUT)
    best: list[Checkpoint] = []

    def epoch_fn(epoch: int) -> tuple[float, float]:
        total, seen = 0.0, 0
        for idx in batches(len(train_set), tcfg.batch_size, shuffle_rng):
            loss, grads, _ = loss_and_grads(params, train_set.x[idx], train_set.y[idx], dropout_rng)
            if not math.isfinite(loss):
                raise NumericalAbort(f"non-finite training loss at epoch {epoch}")
            opt.step(params.weights, grads)
            total += loss * idx.size
            seen += idx.size
        val = mean_xent(params, val_set, tcfg.batch_size)
        rec = {"epoch": epoch, "train_loss": total / seen, "val_loss": val}
        log.info("epoch %d train %.4f val %.4f", epoch, rec["train_loss"], val)
        if progress:
            progress(rec)
        return rec["train_loss"], val

    def on_improve(state: TrainState) -> None:
        c = Checkpoint(params=params.copy(), epoch=state.epoch, best_val_loss=state.best_val_loss,
                       optimizer=Adam(**opt.hyper(), t=opt.t,
                                      m={k: v.copy() for k, v in opt.m.items()},
                                      v={k: v.copy() for k, v in opt.v.items()}),
                       extra={"train": tcfg.to_json()})
        best[:] = [c]
        if checkpoint_path is not None:
            ckpt_io.save(c, checkpoint_path)

    try:
        state, reason = run_epochs(epoch_fn, tcfg.max_epochs, tcfg.patience, on_improve)
    except NumericalAbort as e:
        raise TrainingAborted(str(e), best[0] if best else None) from e
    return TrainResult(best[0], state, reason)


# ---------------------------------------------------------------- two-fold cross-validation

@dataclass
class Predictions:
    segment_ids: np.ndarray
    subject_ids: np.ndarray
    labels: np.ndarray
    preds: np.ndarray
    logits: np.ndarray
    test_fold: np.ndarray  # fold whose segments were tested (1 or 2)

    @classmethod
    def concat(cls, parts: list["Predictions"]) -> "Predictions":
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("segment_ids", "subject_ids", "labels", "preds", "logits", "test_fold")))

    def __len__(self) -> int:
        return len(self.labels)


def predict(params, ds: Dataset, fold: int, batch_size: int = 32) -> Predictions:
    logits = predict_logits(params, ds.x, batch_size).astype(np.float64)
    return Predictions(ds.segment_ids, ds.subject_ids, ds.y, predict_class(logits), logits,
                       np.full(len(ds), fold))


@dataclass
class FoldRun:
    fold: int
    split: SplitPlan
    result: TrainResult
    subject_dependent: Predictions
    counts: dict


@dataclass
class CrossValResult:
    plan: FoldPlan
    runs: list[FoldRun]
    predictions: Predictions  # pooled subject-independent predictions

    @property
    def checkpoints(self) -> list[Checkpoint]:
        return [r.result.checkpoint for r in self.runs]


def fold_datasets(ds: Dataset, plan: FoldPlan) -> tuple[Dataset, Dataset]:
    out = []
    for subjects in plan.folds():
        mask = np.isin(ds.subject_ids.astype(str), subjects)
        out.append(ds.take(np.flatnonzero(mask)))
    return out[0], out[1]


def train_fold(cfg: ModelConfig, fold_ds: Dataset, tcfg: TrainConfig, fold: int,
               checkpoint_path=None, progress=None):
    """Split one fold, upsample train/val, train; returns (split, result, counts)."""
    split = split_fold(fold_ds, seed=tcfg.seed + fold, mode=tcfg.split)
    tr, va = fold_ds.take(split.train), fold_ds.take(split.val)
    tr = tr.take(upsample_minority(tr.y, seed=tcfg.seed * 10 + fold))
    va = va.take(upsample_minority(va.y, seed=tcfg.seed * 10 + fold + 5))
    counts = {"train": tr.class_counts().tolist(), "val": va.class_counts().tolist(),
              "test": fold_ds.take(split.test).class_counts().tolist()}
    sub = TrainConfig(**{**tcfg.to_json(), "seed": tcfg.seed * 100 + fold})
    result = train(cfg, tr, va, sub, checkpoint_path=checkpoint_path, progress=progress)
    return split, result, counts


def cross_validate(cfg: ModelConfig, ds: Dataset, tcfg: TrainConfig = TrainConfig(),
                   out_dir: str | Path | None = None, folds: tuple[int, ...] = (1, 2),
                   progress: Callable[[int, dict], None] | None = None) -> CrossValResult:
    """Train on each fold, test on every segment of the opposite fold."""
    plan = make_folds(ds.subject_counts(), seed=tcfg.seed)
    parts = fold_datasets(ds, plan)
    runs, pooled = [], []
    for fold in folds:
        own, other = parts[fold - 1], parts[2 - fold]
        overlap = set(own.subject_ids.astype(str)) & set(other.subject_ids.astype(str))
        assert not overlap, f"subjects in both folds: {sorted(overlap)}"
        path = None if out_dir is None else Path(out_dir) / f"fold{fold}.ckpt.npz"
        cb = None if progress is None else (lambda rec, f=fold: progress(f, rec))
        split, result, counts = train_fold(cfg, own, tcfg, fold, path, cb)
        params = result.checkpoint.params
        dep = predict(params, own.take(split.test), fold)
        runs.append(FoldRun(fold, split, result, dep, counts))
        pooled.append(predict(params, other, 3 - fold))
    return CrossValResult(plan, runs, Predictions.concat(pooled))
