"""Segments -> stacked network inputs, with a rejection log."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signals import ChannelConfig, Segment, SegmentRejected, assemble_channels


@dataclass
class Dataset:
    x: np.ndarray                 # (N, L, d) float32
    y: np.ndarray                 # (N,) int
    subject_ids: np.ndarray       # (N,) str
    segment_ids: np.ndarray       # (N,) str
    channels: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.x[idx], self.y[idx], self.subject_ids[idx],
                       self.segment_ids[idx], self.channels)

    def subject_counts(self) -> dict[str, np.ndarray]:
        """Per-subject segment counts by class."""
        out: dict[str, np.ndarray] = {}
        for sid, lab in zip(self.subject_ids, self.y):
            out.setdefault(str(sid), np.zeros(3, dtype=np.int64))[int(lab)] += 1
        return out

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=3)


@dataclass
class Rejection:
    segment_id: str
    reason: str


@dataclass
class Prepared:
    dataset: Dataset
    rejected: list[Rejection] = field(default_factory=list)


def prepare(segments: list[Segment], config: ChannelConfig = ChannelConfig.FOUR) -> Prepared:
    """Run filter -> HR -> assembly on every segment.

    Segments failing peak detection and segments with a flat PPG are left
    out and logged.
    """
    xs, ys, subj, segid, rejected = [], [], [], [], []
    for seg in segments:
        try:
            stack = assemble_channels(seg, config)
        except SegmentRejected as e:
            rejected.append(Rejection(seg.segment_id, str(e)))
            continue
        if stack.degenerate:
            rejected.append(Rejection(seg.segment_id, "degenerate (constant) PPG"))
            continue
        xs.append(stack.data.astype(np.float32))
        ys.append(int(seg.label))
        subj.append(seg.subject_id)
        segid.append(seg.segment_id)
    d = config.d
    x = np.stack(xs) if xs else np.zeros((0, 0, d), dtype=np.float32)
    ds = Dataset(x, np.asarray(ys, dtype=np.int64), np.asarray(subj, dtype=object),
                 np.asarray(segid, dtype=object), config.channels)
    return Prepared(ds, rejected)


def select_channels(ds: Dataset, config: ChannelConfig) -> Dataset:
    """Column subset of a four-channel dataset (avoids re-running HR extraction)."""
    src = ChannelConfig.FOUR.channels
    if ds.channels != src:
        raise ValueError("select_channels expects a four-channel dataset")
    cols = [src.index(c) for c in config.channels]
    return Dataset(np.ascontiguousarray(ds.x[:, :, cols]), ds.y, ds.subject_ids,
                   ds.segment_ids, config.channels)
