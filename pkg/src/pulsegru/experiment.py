"""Synthetic-cohort cross-validation runs shared by scripts and acceptance checks."""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from .metrics import MetricsReport, confusion, per_class_metrics
from .model import ModelConfig
from .pipeline import Dataset, prepare, select_channels
from .signals import ChannelConfig
from .synth import gen_cohort
from .training import CrossValResult, TrainConfig, cross_validate


@dataclass(frozen=True)
class CohortConfig:
    n_subjects: int = 24
    segments_per_subject: int = 100
    seed: int = 1
    motion: float = 0.5


@dataclass
class ExperimentResult:
    channels: ChannelConfig
    cv: CrossValResult
    report: MetricsReport
    seconds: float

    def sensitivity(self) -> dict[str, float]:
        return {c.rhythm: float(c.sens) for c in self.report.classes}


def synthetic_dataset(cohort: CohortConfig = CohortConfig()) -> Dataset:
    """Four-channel tensors for a generated cohort; other channel sets are column subsets."""
    c = gen_cohort(cohort.n_subjects, seed=cohort.seed,
                   segments_per_subject=cohort.segments_per_subject, motion=cohort.motion)
    return prepare(c.segments, ChannelConfig.FOUR).dataset


def run_cv(ds4: Dataset, channels: ChannelConfig, tcfg: TrainConfig,
           out_dir: str | Path | None = None, progress=None, hidden: int = 128) -> ExperimentResult:
    t0 = time.perf_counter()
    ds = ds4 if channels is ChannelConfig.FOUR else select_channels(ds4, channels)
    cv = cross_validate(ModelConfig(d=channels.d, L=ds.x.shape[1], gru_hidden=hidden), ds, tcfg,
                        out_dir=out_dir, progress=progress)
    rep = per_class_metrics(confusion(cv.predictions.preds, cv.predictions.labels))
    return ExperimentResult(channels, cv, rep, time.perf_counter() - t0)
