"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The lines are printed in the terminal summary (see conftest.py). Criteria 5
and 6 train full-size networks on a 24-subject cohort and take roughly 25
minutes each on one CPU core; deselect them with ``-m "not slow"``.
"""
import math
import os
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import brute_force_metrics, match_beats, pairs_from_confusion, transfer_magnitude
from pulsegru import checkpoint as ckpt_io
from pulsegru.cost import count_params
from pulsegru.experiment import CohortConfig, run_cv, synthetic_dataset
from pulsegru.heartrate import detect_peaks
from pulsegru.metrics import confusion, per_class_metrics, report_csv, report_text
from pulsegru.model import ModelConfig, init_params, loss_and_grads
from pulsegru.signals import ChannelConfig, design_bandpass, ppg_channel
from pulsegru.synth import gen_cohort
from pulsegru.training import TrainConfig, run_epochs

# Training budget for the synthetic cross-validation runs (criteria 5 and 6).
# The full 200-epoch / 40-patience protocol does not fit the 30-minute limit
# on a single CPU core, so a shorter schedule is used; override via env vars.
CV_EPOCHS = int(os.environ.get("PULSEGRU_CV_EPOCHS", 7))
CV_PATIENCE = int(os.environ.get("PULSEGRU_CV_PATIENCE", 3))
CV_SEED = 1


def record(n: int, ok: bool, text: str) -> None:
    ACCEPTANCE_LINES.append(f"[{n}] {'PASS' if ok else 'FAIL'}  {text}")
    assert ok, text


# ---------------------------------------------------------------- 1

def test_c1_parameter_deltas():
    t = time.perf_counter()
    c = {d: count_params(ModelConfig(d=d)) for d in (1, 2, 4)}
    dt = time.perf_counter() - t
    d41, d21 = c[4] - c[1], c[2] - c[1]
    record(1, d41 == 9_528 and d21 == 3_136 and dt < 1,
           f"parameter deltas d4-d1={d41:,} (want 9,528), d2-d1={d21:,} (want 3,136), {dt:.3f} s")


# ---------------------------------------------------------------- 2

def test_c2_gradient_check():
    t = time.perf_counter()
    cfg = ModelConfig(d=2, L=16, gru_hidden=8)
    p = init_params(cfg, 1, np.float64)
    r = np.random.default_rng(5)
    for k in p.weights:
        if "b" in k.split(".")[-1] or k.endswith("beta"):
            p.weights[k] = r.normal(0, 0.1, p.weights[k].shape)
    x = np.random.default_rng(2).random((3, 16, 2))
    y = np.array([0, 1, 2])
    loss = lambda: loss_and_grads(p.copy(), x, y, np.random.default_rng(9))[0]
    _, g, _ = loss_and_grads(p.copy(), x, y, np.random.default_rng(9))
    worst, h = 0.0, 1e-6
    for k, v in p.weights.items():
        num = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            old = v[i]
            v[i] = old + h
            up = loss()
            v[i] = old - h
            num[i] = (up - loss()) / (2 * h)
            v[i] = old
        worst = max(worst, float(np.max(np.abs(num - g[k])) / max(np.max(np.abs(num)), 1e-12)))
    dt = time.perf_counter() - t
    record(2, worst < 1e-4 and dt < 30,
           f"end-to-end gradient check max rel. error {worst:.2e} (< 1e-4), {dt:.1f} s (< 30 s)")


# ---------------------------------------------------------------- 3

def test_c3_filter():
    t = time.perf_counter()
    spec = design_bandpass()
    dc, nyq = transfer_magnitude(spec.sections, [0.0, 25.0])
    h5, h10 = transfer_magnitude(spec.sections, [5.0, 10.0])
    pole_max = float(np.max(np.abs(spec.poles())))
    dt = time.perf_counter() - t
    ok = dc < 1e-10 and nyq < 1e-10 and all(0.95 <= v <= 1.001 for v in (h5, h10)) and pole_max < 1
    record(3, ok and dt < 1, f"filter |H| DC {dc:.1e}, Nyquist {nyq:.1e}, 5 Hz {h5:.5f}, "
                             f"10 Hz {h10:.5f}, max |pole| {pole_max:.4f}, {dt:.3f} s")


# ---------------------------------------------------------------- 4

def test_c4_hr_oracle():
    t = time.perf_counter()
    c = gen_cohort(24, seed=3, clean=True, segments_per_subject=50)
    errs = []
    for seg, bt in zip(c.segments, c.beats):
        det, true = match_beats(detect_peaks(ppg_channel(seg.ppg)[0]), bt.times)
        errs.append(np.abs(det - true))
    mae = float(np.mean(np.concatenate(errs)))
    dt = time.perf_counter() - t
    n = len(c.segments)
    record(4, mae < 2 and n >= 1000 and dt < 60,
           f"noise-free HR MAE {mae:.3f} BPM over {n} segments (< 2 BPM, >= 1000), {dt:.1f} s (< 60 s)")


# ---------------------------------------------------------------- 5 and 6

@pytest.fixture(scope="module")
def cohort4():
    t = time.perf_counter()
    ds = synthetic_dataset(CohortConfig(n_subjects=24, segments_per_subject=100, seed=CV_SEED))
    return ds, time.perf_counter() - t


@pytest.fixture(scope="module")
def cv4(cohort4):
    ds, prep_s = cohort4
    tcfg = TrainConfig(max_epochs=CV_EPOCHS, patience=CV_PATIENCE, seed=CV_SEED)
    res = run_cv(ds, ChannelConfig.FOUR, tcfg)
    return res, prep_s


@pytest.fixture(scope="module")
def cv1(cohort4):
    ds, _ = cohort4
    tcfg = TrainConfig(max_epochs=CV_EPOCHS, patience=CV_PATIENCE, seed=CV_SEED)
    return run_cv(ds, ChannelConfig.PPG, tcfg)


@pytest.mark.slow
def test_c5_end_to_end_learning(cv4, cohort4):
    res, prep_s = cv4
    s = res.sensitivity()
    total = res.seconds + prep_s
    ok = s["AF"] >= 0.90 and s["PAC/PVC"] >= 0.80 and s["NSR"] >= 0.85 and total <= 1800
    record(5, ok, f"d=4 subject-independent sensitivity NSR {s['NSR']:.3f} (>= 0.85), "
                  f"AF {s['AF']:.3f} (>= 0.90), PAC/PVC {s['PAC/PVC']:.3f} (>= 0.80) on "
                  f"{len(cohort4[0])} segments, {total / 60:.1f} min (<= 30), "
                  f"{CV_EPOCHS} epochs max / patience {CV_PATIENCE}")


@pytest.mark.slow
def test_c6_channel_ablation(cv4, cv1):
    s4 = cv4[0].sensitivity()["PAC/PVC"]
    s1 = cv1.sensitivity()["PAC/PVC"]
    record(6, s4 >= s1, f"PAC/PVC sensitivity d=4 {s4:.3f} >= d=1 {s1:.3f}")


# ---------------------------------------------------------------- 7

def test_c7_metrics_oracle():
    r = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        cm = r.integers(0, 15, size=(3, 3)) * (r.random((3, 3)) > 0.15)
        got = [c.values() for c in per_class_metrics(cm, exact=True).classes]
        want = brute_force_metrics(*pairs_from_confusion(cm))
        mismatches += got != want
        assert all(isinstance(v, Fraction) for row in got for v in row)
    record(7, mismatches == 0, f"metrics equal brute-force pair counting on 1000 random matrices "
                               f"({mismatches} mismatches)")


# ---------------------------------------------------------------- 8

def test_c8_determinism(tmp_path):
    # full pipeline: cohort generation, preprocessing, two-fold training, reports
    cohort = CohortConfig(n_subjects=6, segments_per_subject=30, seed=4)
    tcfg = TrainConfig(max_epochs=2, patience=40, seed=7)
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        res = run_cv(synthetic_dataset(cohort), ChannelConfig.FOUR, tcfg, out_dir=d, hidden=8)
        p = res.cv.predictions
        outs.append({
            "ckpt": [(d / f"fold{f}.ckpt.npz").read_bytes() for f in (1, 2)],
            "pred": (p.segment_ids.tolist(), p.preds.tobytes(), p.logits.tobytes()),
            "report": report_text(res.report) + report_csv(res.report),
        })
    same = {k: outs[0][k] == outs[1][k] for k in outs[0]}
    record(8, all(same.values()), "two seeded cross-validation runs bit-identical: " +
           ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in same.items()))


# ---------------------------------------------------------------- 9

def test_c9_protocol():
    def scripted(vals):
        it = iter(vals)
        return lambda epoch: (1.0, next(it))

    s1, r1 = run_epochs(scripted([1.0] + [1.0] * 40 + [0.0]), 200, 40)
    early = (s1.epoch, s1.best_epoch, r1) == (41, 1, "early_stop")

    s2, r2 = run_epochs(scripted([1.0] + [1.2] * 39 + [0.9] + [1.2] * 40), 200, 40)
    reset = (s2.best_epoch, s2.epoch, r2) == (41, 81, "early_stop")

    r = np.random.default_rng(0)
    noisy = list(1 + 0.3 * r.standard_normal(250).cumsum() / 20 + 0.05 * r.random(250))
    saved = []
    s3, r3 = run_epochs(scripted(noisy), 200, 10**6, on_improve=lambda st: saved.append(st.epoch))
    cap = s3.epoch == 200 and r3 == "max_epochs"
    minimum = saved[-1] == 1 + int(np.argmin(noisy[:200]))

    # the same rule inside the real loop: the returned checkpoint holds the run minimum
    from pulsegru.pipeline import Dataset
    from pulsegru.training import train
    x = (r.random((60, 8, 1)) + np.repeat([0, 1, 2], 20)[:, None, None]).astype(np.float32)
    ds = Dataset(x, np.repeat([0, 1, 2], 20), np.array(["S"] * 60, dtype=object),
                 np.array([str(i) for i in range(60)], dtype=object), ("ppg",))
    res = train(ModelConfig(d=1, L=8, gru_hidden=4), ds, ds, TrainConfig(max_epochs=12, lr=1e-2))
    best = res.checkpoint.best_val_loss == min(h["val_loss"] for h in res.state.history)

    ok = early and reset and cap and minimum and best
    record(9, ok, f"early stop at 40 flat epochs {early}, counter reset {reset}, epoch cap 200 {cap}, "
                  f"min-val selection {minimum and best}")
