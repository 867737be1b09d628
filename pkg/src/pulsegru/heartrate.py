"""Beat detection on filtered PPG and the derived heart-rate channels."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import FS, SEGMENT_LENGTH, SegmentRejected, normalize_unit

HR_MIN_BPM = 30.0
HR_MAX_BPM = 220.0
THRESHOLD_WINDOW_S = 5.0
THRESHOLD_PERCENTILE = 75.0
THRESHOLD_FRACTION = 0.5
MIN_PEAKS = 3


def refractory_samples(fs: float = FS) -> int:
    """Shortest allowed peak spacing: one beat at 220 BPM (14 samples at 50 Hz)."""
    return int(round(fs * 60.0 / HR_MAX_BPM))


@dataclass
class BeatSeries:
    peak_indices: np.ndarray
    hr_bpm: np.ndarray
    fs: float = FS

    @property
    def anchors(self) -> np.ndarray:
        """Sample position of each HR value: midpoint of its peak pair."""
        p = self.peak_indices.astype(np.float64)
        return 0.5 * (p[:-1] + p[1:])


@dataclass
class HrChannels:
    hr_interp: np.ndarray
    hr_fixed: np.ndarray
    hr_zoom: np.ndarray
    zoom_degenerate: bool
    beats: BeatSeries


def _adaptive_threshold(x: np.ndarray, idx: np.ndarray, fs: float) -> np.ndarray:
    """Half the 75th percentile of positive samples in a centred 5 s window, per index."""
    half = int(round(THRESHOLD_WINDOW_S * fs / 2))
    width = 2 * half + 1
    pos = np.where(x > 0, x, -np.inf)
    padded = np.concatenate([np.full(half, -np.inf), pos, np.full(half, -np.inf)])
    windows = np.sort(np.lib.stride_tricks.sliding_window_view(padded, width)[idx], axis=1)
    k = np.sum(windows > -np.inf, axis=1)  # positives sit in the last k slots
    # linear-interpolated percentile over the k positive values
    q = (width - k) + (k - 1) * (THRESHOLD_PERCENTILE / 100.0)
    lo = np.floor(q).astype(np.int64)
    frac = q - lo
    rows = np.arange(len(idx))
    hi = np.minimum(lo + 1, width - 1)
    with np.errstate(invalid="ignore"):
        val = windows[rows, np.clip(lo, 0, width - 1)] * (1 - frac) + windows[rows, hi] * frac
        val = np.where(frac == 0, windows[rows, np.clip(lo, 0, width - 1)], val)
    return np.where(k > 0, THRESHOLD_FRACTION * val, np.inf)


def detect_peaks(ppg_filtered: np.ndarray, fs: float = FS) -> np.ndarray:
    """Systolic peak indices via an adaptive-threshold local-maximum rule.

    A candidate is a local maximum (strictly above its left neighbour, not
    below its right one) exceeding half the 75th percentile of the positive
    samples in a centred 5 s window. Candidates closer than the 220 BPM
    refractory spacing are resolved in favour of the larger amplitude, the
    earlier index on ties.
    """
    x = np.asarray(ppg_filtered, dtype=np.float64)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise SegmentRejected("peak detection needs a finite 1-D signal")
    if x.size < 3:
        raise SegmentRejected("signal too short for peak detection")
    mid = x[1:-1]
    cand = np.flatnonzero((mid > x[:-2]) & (mid >= x[2:])) + 1
    if cand.size:
        cand = cand[x[cand] > _adaptive_threshold(x, cand, fs)]

    gap = refractory_samples(fs)
    # amplitude descending, index ascending on ties
    order = np.lexsort((cand, -x[cand]))
    taken = np.zeros(x.size, dtype=bool)
    kept = []
    for i in cand[order]:
        lo, hi = max(0, i - gap + 1), min(x.size, i + gap)
        if not taken[lo:hi].any():
            taken[i] = True
            kept.append(i)
    peaks = np.sort(np.asarray(kept, dtype=np.int64))
    if peaks.size < MIN_PEAKS:
        raise SegmentRejected(f"only {peaks.size} peaks detected (need {MIN_PEAKS})")
    return peaks


def beats_to_hr(peaks: np.ndarray, fs: float = FS) -> BeatSeries:
    peaks = np.asarray(peaks)
    if peaks.ndim != 1 or peaks.size < MIN_PEAKS:
        raise SegmentRejected(f"need at least {MIN_PEAKS} peaks, got {peaks.size}")
    ibi = np.diff(peaks) / fs
    if np.any(ibi <= 0):
        raise SegmentRejected("peak indices must be strictly increasing")
    return BeatSeries(peak_indices=peaks.astype(np.int64), hr_bpm=60.0 / ibi, fs=fs)


def interpolate_hr(beats: BeatSeries, length: int = SEGMENT_LENGTH) -> np.ndarray:
    """Linear interpolation onto the sample grid, edge values held."""
    # np.interp holds the end values outside the anchor range
    return np.interp(np.arange(length, dtype=np.float64), beats.anchors, beats.hr_bpm)


def hr_fixed(hr: np.ndarray) -> np.ndarray:
    hr = np.asarray(hr, dtype=np.float64)
    return np.clip((hr - HR_MIN_BPM) / (HR_MAX_BPM - HR_MIN_BPM), 0.0, 1.0)


def hr_zoom(hr: np.ndarray) -> tuple[np.ndarray, bool]:
    """Per-segment min/max scaling; constant HR is valid and yields zeros."""
    return normalize_unit(hr)


def hr_channels(ppg_filtered: np.ndarray, fs: float = FS,
                length: int = SEGMENT_LENGTH) -> HrChannels:
    beats = beats_to_hr(detect_peaks(ppg_filtered, fs), fs)
    interp = interpolate_hr(beats, length)
    zoom, flat = hr_zoom(interp)
    return HrChannels(hr_interp=interp, hr_fixed=hr_fixed(interp), hr_zoom=zoom,
                      zoom_degenerate=flat, beats=beats)
