"""Signal preparation: bandpass filtering and channel normalization.

Turns a raw 30 s smartwatch segment (PPG + triaxial accelerometer at 50 Hz)
into the (L, d) matrix consumed by the network.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

FS = 50
SEGMENT_SECONDS = 30
SEGMENT_LENGTH = FS * SEGMENT_SECONDS  # 1500

BAND_HZ = (0.5, 20.0)
FILTER_ORDER = 6
ACC_RANGE = 20.0  # m/s^2


class Rhythm(enum.IntEnum):
    NSR = 0
    AF = 1
    PACPVC = 2

    @property
    def display(self) -> str:
        return {0: "NSR", 1: "AF", 2: "PAC/PVC"}[int(self)]


class SegmentRejected(ValueError):
    """Raised when a segment cannot be turned into model input."""


@dataclass
class Segment:
    subject_id: str
    label: Rhythm
    ppg: np.ndarray
    acc: np.ndarray  # (3, L)
    fs: int = FS
    segment_id: str = ""

    def __post_init__(self):
        self.label = Rhythm(int(self.label))
        self.ppg = np.asarray(self.ppg, dtype=np.float64)
        self.acc = np.asarray(self.acc, dtype=np.float64)
        if self.fs != FS:
            raise ValueError(f"sampling rate must be {FS} Hz, got {self.fs}")
        if self.ppg.shape != (SEGMENT_LENGTH,):
            raise ValueError(f"ppg must have shape ({SEGMENT_LENGTH},), got {self.ppg.shape}")
        if self.acc.shape != (3, SEGMENT_LENGTH):
            raise ValueError(f"acc must have shape (3, {SEGMENT_LENGTH}), got {self.acc.shape}")
        if not (np.all(np.isfinite(self.ppg)) and np.all(np.isfinite(self.acc))):
            raise ValueError("segment contains non-finite samples")
        if not self.segment_id:
            self.segment_id = self.subject_id


@dataclass(frozen=True)
class FilterSpec:
    """Second-order-section cascade; each row is (b0, b1, b2, a1, a2)."""

    sections: np.ndarray
    order: int = FILTER_ORDER
    band: tuple[float, float] = BAND_HZ
    fs: float = FS

    @property
    def sos(self) -> np.ndarray:
        # scipy layout: b0 b1 b2 a0 a1 a2
        s = self.sections
        return np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]])

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots([1.0, a1, a2]) for a1, a2 in self.sections[:, 3:]])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))


def design_bandpass(band: tuple[float, float] = BAND_HZ, fs: float = FS,
                    order: int = FILTER_ORDER) -> FilterSpec:
    """Butterworth bandpass as a cascade of ``order // 2`` biquads.

    The analog prototype has ``order // 2`` poles; the lowpass-to-bandpass
    transform doubles that. Band edges are pre-warped for the bilinear map.
    """
    if order % 2:
        raise ValueError("bandpass order must be even")
    sos = signal.butter(order // 2, band, btype="bandpass", fs=fs, output="sos")
    sections = np.column_stack([sos[:, :3] / sos[:, 3:4], sos[:, 4:] / sos[:, 3:4]])
    return FilterSpec(sections=sections, order=order, band=tuple(band), fs=fs)


def apply_filter(spec: FilterSpec, x: np.ndarray) -> np.ndarray:
    """Causal single pass through the cascade, zero initial state."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 1:
        raise ValueError("apply_filter expects a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.isfinite(x))[0])
        raise ValueError(f"non-finite input sample at index {bad}")
    return signal.sosfilt(spec.sos, x)


def normalize_unit(x: np.ndarray) -> tuple[np.ndarray, bool]:
    """Min/max scale to [0, 1].

    Returns ``(y, degenerate)``; a constant input gives zeros and
    ``degenerate=True``.
    """
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("normalize_unit got non-finite input")
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.zeros_like(x), True
    y = (x - lo) / (hi - lo)
    return np.clip(y, 0.0, 1.0), False


def acc_channel(acc: np.ndarray, full_scale: float = ACC_RANGE) -> np.ndarray:
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[0] != 3:
        raise ValueError(f"acc must be three equal-length axes, got shape {acc.shape}")
    mag = np.sqrt(np.sum(acc * acc, axis=0))
    return np.clip(mag / full_scale, 0.0, 1.0)


class ChannelConfig(enum.Enum):
    """Named input configurations; value is the channel count d."""

    PPG = "ppg"
    HR_ACC = "hr-acc"
    FOUR = "four"

    @property
    def d(self) -> int:
        return {"ppg": 1, "hr-acc": 2, "four": 4}[self.value]

    @property
    def channels(self) -> tuple[str, ...]:
        return {
            "ppg": ("ppg",),
            "hr-acc": ("hr_fixed", "acc"),
            "four": ("ppg", "hr_fixed", "hr_zoom", "acc"),
        }[self.value]

    @classmethod
    def from_d(cls, d: int) -> "ChannelConfig":
        for c in cls:
            if c.d == d:
                return c
        raise ValueError(f"no channel configuration with d={d}")


@dataclass
class ChannelStack:
    data: np.ndarray  # (L, d)
    channels: tuple[str, ...]
    label: Rhythm
    subject_id: str
    segment_id: str
    flags: dict[str, bool] = field(default_factory=dict)

    @property
    def degenerate(self) -> bool:
        """A flat PPG carries no rhythm information; such stacks are skipped."""
        return self.flags.get("ppg_degenerate", False)


_DEFAULT_FILTER: FilterSpec | None = None


def default_filter() -> FilterSpec:
    global _DEFAULT_FILTER
    if _DEFAULT_FILTER is None:
        _DEFAULT_FILTER = design_bandpass()
    return _DEFAULT_FILTER


def ppg_channel(ppg: np.ndarray, spec: FilterSpec | None = None) -> tuple[np.ndarray, np.ndarray, bool]:
    """Returns (filtered, normalized, degenerate).

    The first sample is subtracted before filtering. With zero DC gain this
    equals starting the filter at rest on that level, and it keeps the
    sensor offset from ringing through the first seconds of the segment.
    """
    ppg = np.asarray(ppg, dtype=np.float64)
    filtered = apply_filter(spec or default_filter(), ppg - ppg[0])
    norm, degenerate = normalize_unit(filtered)
    return filtered, norm, degenerate


def assemble_channels(segment: Segment, config: ChannelConfig = ChannelConfig.FOUR,
                      spec: FilterSpec | None = None) -> ChannelStack:
    """Build the (L, d) input matrix for one segment.

    Raises SegmentRejected when heart-rate extraction fails and HR channels
    are requested.
    """
    from . import heartrate  # heartrate imports this module

    filtered, ppg_norm, ppg_flat = ppg_channel(segment.ppg, spec)
    cols: dict[str, np.ndarray] = {"ppg": ppg_norm}
    flags = {"ppg_degenerate": ppg_flat}
    if {"hr_fixed", "hr_zoom"} & set(config.channels):
        hr = heartrate.hr_channels(filtered, segment.fs)
        cols["hr_fixed"] = hr.hr_fixed
        cols["hr_zoom"] = hr.hr_zoom
        flags["hr_degenerate"] = hr.zoom_degenerate
    if "acc" in config.channels:
        cols["acc"] = acc_channel(segment.acc)
    data = np.column_stack([cols[name] for name in config.channels])
    return ChannelStack(data=data, channels=config.channels, label=segment.label,
                        subject_id=segment.subject_id, segment_id=segment.segment_id,
                        flags=flags)
