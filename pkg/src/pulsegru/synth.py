"""Synthetic rhythm cohort used as a ground-truth oracle for the pipeline.

Not a physiological simulator: beat trains are drawn from simple
per-rhythm interval models and rendered to PPG with a fixed two-bump
pulse template, so class structure is unambiguous and every beat time is
known.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal

from .signals import FS, SEGMENT_LENGTH, SEGMENT_SECONDS, Rhythm, Segment

# generator constants, recorded in every manifest
PREMATURE_FACTOR = 0.6
COMPENSATORY_FACTOR = 1.4
PREMATURE_AMPLITUDE = 0.6
PULSE_WIDTH_S = 0.07
DICROTIC_DELAY_S = 0.22
DICROTIC_WIDTH_S = 0.09
DICROTIC_AMPLITUDE = 0.25
WANDER_HZ = 0.2
WANDER_AMPLITUDE = 0.10
SNR_DB = 20.0
MIN_IBI_S = 0.3
MAX_IBI_S = 2.0
MAX_BURST_S = 5.0
GRAVITY = 9.81
DEFAULT_CLASS_SHARES = (0.68, 0.21, 0.11)

RNG_NAME = "numpy PCG64 via SeedSequence(entropy=seed, spawn_key=(subject, segment))"


@dataclass(frozen=True)
class RhythmProfile:
    rhythm: Rhythm
    base_hr: float
    hr_jitter_cv: float
    premature_rate: float = 0.0
    rvr_flag: bool = False
    motion_level: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rhythm", Rhythm(int(self.rhythm)))
        if not 40.0 <= self.base_hr <= 180.0:
            raise ValueError(f"base_hr {self.base_hr} outside [40, 180] BPM")
        if not 0.0 <= self.motion_level <= 1.0:
            raise ValueError("motion_level must lie in [0, 1]")
        if self.rhythm is Rhythm.NSR and self.hr_jitter_cv > 0.05:
            raise ValueError("NSR profiles need hr_jitter_cv <= 0.05")
        if self.rhythm is Rhythm.AF and self.hr_jitter_cv < 0.15:
            raise ValueError("AF profiles need hr_jitter_cv >= 0.15")
        if self.rhythm is Rhythm.PACPVC and not 0.05 <= self.premature_rate <= 0.3:
            raise ValueError("PAC/PVC premature_rate must lie in [0.05, 0.3]")
        if self.rvr_flag and (self.rhythm is not Rhythm.AF or self.base_hr <= 100):
            raise ValueError("rvr_flag requires an AF profile above 100 BPM")

    def to_json(self) -> dict:
        d = asdict(self)
        d["rhythm"] = int(self.rhythm)
        return d


@dataclass
class BeatTrain:
    times: np.ndarray       # seconds
    premature: np.ndarray   # bool per beat

    @property
    def ibi(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def hr_bpm(self) -> np.ndarray:
        """Ground-truth per-pair heart rate."""
        return 60.0 / self.ibi


@dataclass
class SyntheticSubject:
    subject_id: str
    profile: RhythmProfile
    n_segments: int
    seed: int


@dataclass
class Cohort:
    segments: list[Segment]
    beats: list[BeatTrain]
    subjects: list[SyntheticSubject]
    seed: int
    clean: bool
    bursts: list[tuple[int, int] | None] = field(default_factory=list)

    def manifest(self) -> dict:
        return {
            "generator": "pulsegru.synth",
            "rng": RNG_NAME,
            "seed": self.seed,
            "clean": self.clean,
            "constants": {
                "premature_factor": PREMATURE_FACTOR,
                "compensatory_factor": COMPENSATORY_FACTOR,
                "premature_amplitude": PREMATURE_AMPLITUDE,
                "pulse_width_s": PULSE_WIDTH_S,
                "dicrotic_delay_s": DICROTIC_DELAY_S,
                "dicrotic_width_s": DICROTIC_WIDTH_S,
                "dicrotic_amplitude": DICROTIC_AMPLITUDE,
                "wander_hz": WANDER_HZ,
                "wander_amplitude": WANDER_AMPLITUDE,
                "snr_db": SNR_DB,
                "ibi_range_s": [MIN_IBI_S, MAX_IBI_S],
                "max_burst_s": MAX_BURST_S,
            },
            "subjects": [
                {"subject_id": s.subject_id, "seed": s.seed, "n_segments": s.n_segments,
                 "profile": s.profile.to_json()}
                for s in self.subjects
            ],
            "segments": [
                {"segment_id": seg.segment_id, "subject_id": seg.subject_id,
                 "label": int(seg.label), "beat_times": bt.times.tolist(),
                 "premature": np.flatnonzero(bt.premature).tolist(),
                 "burst": list(b) if b else None}
                for seg, bt, b in zip(self.segments, self.beats, self.bursts)
            ],
        }


def _rng(seed, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))


def _as_rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_beat_train(profile: RhythmProfile, duration: float = SEGMENT_SECONDS,
                   seed=0) -> BeatTrain:
    rng = _as_rng(seed)
    mean_ibi = 60.0 / profile.base_hr
    n = int(duration / mean_ibi) + 8  # enough intervals to overrun the window

    if profile.rhythm is Rhythm.AF:
        s2 = np.log1p(profile.hr_jitter_cv ** 2)
        ibi = rng.lognormal(np.log(mean_ibi) - s2 / 2, np.sqrt(s2), size=n)
    else:
        ibi = rng.normal(mean_ibi, profile.hr_jitter_cv * mean_ibi, size=n)
    ibi = np.clip(ibi, MIN_IBI_S, MAX_IBI_S)
    premature = np.zeros(n + 1, dtype=bool)

    if profile.rhythm is Rhythm.PACPVC:
        hits = rng.random(n) < profile.premature_rate
        start = rng.uniform(0.0, mean_ibi)
        # events must not collide and must land inside the window
        last_ok = int((duration - start) / mean_ibi) - 2
        if not hits[1:last_ok].any():
            hits[rng.integers(1, max(2, last_ok))] = True
        k = 1
        while k < n - 1:
            if hits[k]:
                ibi[k - 1] = PREMATURE_FACTOR * mean_ibi
                ibi[k] = COMPENSATORY_FACTOR * mean_ibi
                premature[k] = True
                k += 2
            else:
                k += 1
    else:
        start = rng.uniform(0.0, mean_ibi)

    times = start + np.concatenate([[0.0], np.cumsum(ibi)])
    keep = times < duration
    return BeatTrain(times=times[keep], premature=premature[keep])


def _pulses(beats: BeatTrain, t: np.ndarray) -> np.ndarray:
    out = np.zeros_like(t)
    reach = int(1.0 * FS)  # both bumps are negligible beyond 1 s from the beat
    for tb, prem in zip(beats.times, beats.premature):
        c = int(round(tb * FS))
        lo, hi = max(0, c - reach), min(t.size, c + reach)
        dt = t[lo:hi] - tb
        bump = np.exp(-0.5 * (dt / PULSE_WIDTH_S) ** 2)
        bump += DICROTIC_AMPLITUDE * np.exp(-0.5 * ((dt - DICROTIC_DELAY_S) / DICROTIC_WIDTH_S) ** 2)
        out[lo:hi] += (PREMATURE_AMPLITUDE if prem else 1.0) * bump
    return out


@lru_cache(maxsize=4)
def _noise_sos(band: tuple[float, float]) -> np.ndarray:
    return signal.butter(2, band, btype="bandpass", fs=FS, output="sos")


def _band_noise(rng: np.random.Generator, n: int, band=(1.0, 4.0)) -> np.ndarray:
    sos = _noise_sos(tuple(band))
    x = signal.sosfilt(sos, rng.standard_normal(n + 200))[200:]
    return x / (np.std(x) + 1e-12)


def burst_window(motion_level: float, rng: np.random.Generator) -> tuple[int, int] | None:
    if motion_level <= 0:
        return None
    dur = int(round(max(0.5, MAX_BURST_S * motion_level) * FS))
    dur = min(dur, int(MAX_BURST_S * FS))
    start = int(rng.integers(0, SEGMENT_LENGTH - dur + 1))
    return start, start + dur


def render_acc(motion_level: float, seed=0,
               window: tuple[int, int] | None = None) -> tuple[np.ndarray, tuple[int, int] | None]:
    """Triaxial accelerometer: gravity in a random orientation plus noise.

    With ``motion_level > 0`` a band-limited burst of at most 5 s is added;
    the window is returned so the PPG can be corrupted in the same span.
    """
    rng = _as_rng(seed)
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    acc = GRAVITY * u[:, None] + 0.05 * rng.standard_normal((3, SEGMENT_LENGTH))
    if window is None:
        window = burst_window(motion_level, rng)
    if window is not None:
        a, b = window
        taper = np.hanning(b - a)
        for k in range(3):
            acc[k, a:b] += 6.0 * motion_level * taper * _band_noise(rng, b - a)
    return acc, window


def render_ppg(beats: BeatTrain, seed=0, *, noise: bool = True, gain: float = 1.0,
               motion: tuple[tuple[int, int], float] | None = None) -> np.ndarray:
    """Sum of pulse templates plus baseline wander, white noise, motion."""
    rng = _as_rng(seed)
    t = np.arange(SEGMENT_LENGTH) / FS
    pulsatile = _pulses(beats, t)
    x = pulsatile + WANDER_AMPLITUDE * np.sin(2 * np.pi * WANDER_HZ * t + rng.uniform(0, 2 * np.pi))
    if noise:
        ac = pulsatile - pulsatile.mean()
        sigma = np.sqrt(np.mean(ac ** 2)) * 10 ** (-SNR_DB / 20)
        x = x + sigma * rng.standard_normal(SEGMENT_LENGTH)
    if motion is not None:
        (a, b), level = motion
        x[a:b] += 0.8 * level * np.hanning(b - a) * _band_noise(rng, b - a)
    # keep the optical signal strictly positive
    x = x + 0.5 + max(0.0, -x.min())
    return gain * x


def make_segment(profile: RhythmProfile, subject_id: str, segment_id: str, seed,
                 *, clean: bool = False, gain: float = 1.0):
    """One segment plus its ground-truth beat train and burst window."""
    rng = _as_rng(seed)
    beats = gen_beat_train(profile, seed=rng)
    level = 0.0 if clean else profile.motion_level
    has_burst = level > 0 and rng.random() < level
    acc, window = render_acc(level if has_burst else 0.0, seed=rng)
    ppg = render_ppg(beats, seed=rng, noise=not clean, gain=gain,
                     motion=(window, level) if window else None)
    # quantize to the f32 storage precision so files and memory agree
    ppg = ppg.astype(np.float32).astype(np.float64)
    acc = acc.astype(np.float32).astype(np.float64)
    seg = Segment(subject_id=subject_id, label=profile.rhythm, ppg=ppg, acc=acc,
                  segment_id=segment_id)
    return seg, beats, window


def sample_profile(rhythm: Rhythm, rng: np.random.Generator, motion: float = 0.5) -> RhythmProfile:
    """Random per-subject profile.

    Base rates overlap across rhythms so that the label is carried by the
    beat pattern rather than by the heart-rate level.
    """
    motion_level = float(rng.uniform(0.0, motion)) if motion > 0 else 0.0
    if rhythm is Rhythm.NSR:
        return RhythmProfile(rhythm, base_hr=float(rng.uniform(60, 100)),
                             hr_jitter_cv=float(rng.uniform(0.01, 0.04)),
                             motion_level=motion_level)
    if rhythm is Rhythm.AF:
        base = float(rng.uniform(60, 110))
        return RhythmProfile(rhythm, base_hr=base, hr_jitter_cv=float(rng.uniform(0.2, 0.3)),
                             rvr_flag=base > 100, motion_level=motion_level)
    return RhythmProfile(rhythm, base_hr=float(rng.uniform(60, 100)),
                         hr_jitter_cv=float(rng.uniform(0.01, 0.04)),
                         premature_rate=float(rng.uniform(0.15, 0.3)),
                         motion_level=motion_level)


def gen_cohort(n_subjects: int = 24, class_shares=DEFAULT_CLASS_SHARES, seed: int = 0, *,
               segments_per_subject: int = 100, clean: bool = False,
               motion: float = 0.5) -> Cohort:
    """Deterministic cohort of single-rhythm subjects.

    Subjects are split evenly across the three rhythms (remainder to NSR);
    per-subject segment counts are scaled so the per-class segment shares
    approximate ``class_shares``.
    """
    per_class = [n_subjects // 3] * 3
    per_class[0] += n_subjects - sum(per_class)
    if min(per_class) < 2:
        raise ValueError(f"need at least 2 subjects per rhythm class, got {per_class} "
                         f"from n_subjects={n_subjects}")
    shares = np.asarray(class_shares, dtype=np.float64)
    shares = shares / shares.sum()
    total = n_subjects * segments_per_subject

    rng = _rng(seed)
    subjects: list[SyntheticSubject] = []
    for cls, count in zip(Rhythm, per_class):
        mean_count = shares[int(cls)] * total / count
        for _ in range(count):
            idx = len(subjects)
            n_seg = max(1, int(round(mean_count * rng.uniform(0.8, 1.2))))
            profile = sample_profile(cls, rng, motion=0.0 if clean else motion)
            subjects.append(SyntheticSubject(f"S{idx + 1:02d}", profile, n_seg, seed=idx))

    segments, beats, bursts = [], [], []
    for si, subj in enumerate(subjects):
        gain = float(_rng(seed, si).uniform(50.0, 150.0))  # arbitrary sensor units
        for k in range(subj.n_segments):
            seg, bt, win = make_segment(subj.profile, subj.subject_id,
                                        f"{subj.subject_id}_{k:04d}", _rng(seed, si, k),
                                        clean=clean, gain=gain)
            segments.append(seg)
            beats.append(bt)
            bursts.append(win)
    return Cohort(segments=segments, beats=beats, subjects=subjects, seed=seed,
                  clean=clean, bursts=bursts)


def write_cohort(cohort: Cohort, out_dir: str | Path) -> Path:
    """Write one ``.pwseg`` per segment plus ``manifest.json``; returns the manifest path."""
    from .segio import write_pwseg

    out = Path(out_dir)
    seg_dir = out / "segments"
    seg_dir.mkdir(parents=True, exist_ok=True)
    for seg in cohort.segments:
        write_pwseg(seg, seg_dir / f"{seg.segment_id}.pwseg")
    path = out / "manifest.json"
    path.write_text(json.dumps(cohort.manifest(), indent=1, sort_keys=True))
    return path
