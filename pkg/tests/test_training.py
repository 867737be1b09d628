import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pulsegru.model import ModelConfig
from pulsegru.optim import NumericalAbort
from pulsegru.pipeline import Dataset
from pulsegru.training import (SplitPlan, TrainConfig, TrainingAborted, batches, cross_validate,
                               make_folds, run_epochs, split_fold, train, upsample_minority)


def counts_of(**subjects):
    return {k: np.array(v) for k, v in subjects.items()}


def balanced(plan, tol=0.10):
    a, b = plan.class_counts
    return np.all(np.abs(a - b) <= tol * np.minimum(a, b))


def test_folds_equal_af_subjects():
    plan = make_folds(counts_of(A=[0, 10, 0], B=[0, 10, 0], C=[0, 10, 0], D=[0, 10, 0],
                                N1=[10, 0, 0], N2=[10, 0, 0], P1=[0, 0, 5], P2=[0, 0, 5]))
    f1, f2 = plan.folds()
    assert len([s for s in f1 if s in "ABCD"]) == 2
    assert not set(f1) & set(f2) and set(f1) | set(f2) == {"A", "B", "C", "D", "N1", "N2", "P1", "P2"}


def test_table1_fold_counts_are_balanced():
    # printed per-fold segment counts (NSR, AF, PAC/PVC)
    table = np.array([[39_356, 12_265, 6_697], [39_363, 12_290, 6_342]])
    a, b = table
    assert np.all(np.abs(a - b) <= 0.10 * np.minimum(a, b))


@settings(deadline=None, max_examples=40)
@given(st.integers(0, 10**6))
def test_folds_deterministic_and_balanced(seed):
    r = np.random.default_rng(seed)
    subj = {}
    for cls, n in ((0, 8), (1, 4), (2, 4)):
        for i in range(n):
            c = np.zeros(3, dtype=int)
            c[cls] = r.integers(60, 100)
            subj[f"{cls}_{i}"] = c
    p1, p2 = make_folds(subj, seed), make_folds(subj, seed)
    assert p1.folds() == p2.folds()
    assert balanced(p1, tol=0.5)
    assert not set(p1.fold1_subjects) & set(p1.fold2_subjects)


def test_default_cohort_folds_within_ten_percent():
    from pulsegru.synth import gen_cohort
    c = gen_cohort(24, seed=1)
    subj = {}
    for s in c.segments:
        subj.setdefault(s.subject_id, np.zeros(3, int))[int(s.label)] += 1
    assert balanced(make_folds(subj, seed=1))


def test_folds_single_subject_class_rejected():
    with pytest.raises(ValueError):
        make_folds(counts_of(A=[5, 0, 0], B=[5, 0, 0], C=[0, 5, 0], D=[0, 5, 0], E=[0, 0, 5]))


def tiny_dataset(n_subjects=6, per=20, L=8, d=1, seed=0):
    r = np.random.default_rng(seed)
    ys, sids = [], []
    for s in range(n_subjects):
        ys += [s % 3] * per
        sids += [f"S{s}"] * per
    y = np.array(ys)
    x = (r.random((len(y), L, d)) + y[:, None, None]).astype(np.float32)
    return Dataset(x, y, np.array(sids, dtype=object), np.array([f"g{i}" for i in range(len(y))], dtype=object),
                   ("ppg",))


def test_split_segment_mode():
    ds = tiny_dataset()
    sp = split_fold(ds, seed=3)
    allidx = np.concatenate([sp.train, sp.val, sp.test])
    assert np.array_equal(np.sort(allidx), np.arange(len(ds)))
    for sid in set(ds.subject_ids):
        n = [np.sum(ds.subject_ids[part] == sid) for part in (sp.train, sp.val, sp.test)]
        assert n == [16, 2, 2]


def test_split_subject_mode_is_exclusive():
    ds = tiny_dataset(n_subjects=12)
    sp = split_fold(ds, seed=1, mode="subject")
    parts = [set(ds.subject_ids[p]) for p in (sp.train, sp.val, sp.test)]
    assert not (parts[0] & parts[1] or parts[0] & parts[2] or parts[1] & parts[2])
    assert sum(len(p) for p in (sp.train, sp.val, sp.test)) == len(ds)


@pytest.mark.parametrize("counts, want", [((100, 40, 20), (100, 100, 100)), ((50, 50, 50), (50, 50, 50))])
def test_upsample_examples(counts, want):
    labels = np.repeat([0, 1, 2], counts)
    idx = upsample_minority(labels, seed=0)
    assert tuple(np.bincount(labels[idx])) == want
    assert np.array_equal(idx[:labels.size], np.arange(labels.size))


@given(st.lists(st.integers(1, 40), min_size=3, max_size=3), st.integers(0, 1000))
def test_upsample_same_class_refs(counts, seed):
    labels = np.random.default_rng(seed).permutation(np.repeat([0, 1, 2], counts))
    idx = upsample_minority(labels, seed)
    assert len(set(np.bincount(labels[idx]))) == 1
    assert np.all((idx >= 0) & (idx < labels.size))


def test_upsample_empty_class():
    with pytest.raises(ValueError):
        upsample_minority(np.array([0, 0, 1]))


def test_batches_keeps_partial_and_folds_singleton():
    r = np.random.default_rng(0)
    sizes = [b.size for b in batches(70, 32, r)]
    assert sizes == [32, 32, 6]
    assert [b.size for b in batches(65, 32, r)] == [32, 33]
    assert np.array_equal(np.sort(np.concatenate(batches(65, 32, r))), np.arange(65))


def scripted(losses):
    it = iter(losses)
    return lambda epoch: (1.0, next(it))


def test_early_stop_after_40_flat():
    state, reason = run_epochs(scripted([1.0] + [1.0] * 40 + [0.1]), 200, 40)
    assert (state.epoch, state.best_epoch, reason) == (41, 1, "early_stop")


def test_counter_resets_on_improvement():
    losses = [1.0] + [1.5] * 39 + [0.9] + [2.0] * 40
    state, reason = run_epochs(scripted(losses), 200, 40)
    assert state.best_epoch == 41 and state.epoch == 81 and reason == "early_stop"


def test_epoch_cap():
    state, reason = run_epochs(scripted(np.linspace(1, 0, 300)), 200, 40)
    assert state.epoch == 200 and reason == "max_epochs"


def test_nonfinite_loss_aborts():
    with pytest.raises(NumericalAbort):
        run_epochs(scripted([1.0, math.nan]), 200, 40)


def tiny_model():
    return ModelConfig(d=1, L=8, gru_hidden=4)


def test_train_learns_and_selects_min():
    ds = tiny_dataset(per=30)
    tr, va = ds.take(np.arange(0, len(ds), 2)), ds.take(np.arange(1, len(ds), 2))
    res = train(tiny_model(), tr, va, TrainConfig(batch_size=16, max_epochs=15, patience=40, lr=1e-2))
    hist = res.state.history
    assert hist[-1]["train_loss"] < hist[0]["train_loss"]
    assert res.checkpoint.best_val_loss < math.log(3)
    assert res.checkpoint.best_val_loss == min(h["val_loss"] for h in hist)
    assert res.checkpoint.epoch == res.state.best_epoch


def test_train_abort_keeps_last_good(monkeypatch):
    import pulsegru.training as T
    ds = tiny_dataset()
    calls = {"n": 0}
    real = T.mean_xent

    def flaky(params, d, bs=32):
        calls["n"] += 1
        return real(params, d, bs) if calls["n"] < 3 else math.inf

    monkeypatch.setattr(T, "mean_xent", flaky)
    with pytest.raises(TrainingAborted) as e:
        train(tiny_model(), ds, ds, TrainConfig(max_epochs=10))
    assert e.value.last_good is not None and e.value.last_good.epoch in (1, 2)


def test_cross_validate_contract(tmp_path):
    ds = tiny_dataset(n_subjects=12, per=10)
    res = cross_validate(tiny_model(), ds, TrainConfig(max_epochs=2, batch_size=16), out_dir=tmp_path)
    assert (tmp_path / "fold1.ckpt.npz").exists() and (tmp_path / "fold2.ckpt.npz").exists()
    p = res.predictions
    assert sorted(p.segment_ids) == sorted(ds.segment_ids)  # every segment tested once
    f1 = set(res.plan.fold1_subjects)
    for sid, tf in zip(p.subject_ids, p.test_fold):
        assert (sid in f1) == (tf == 1)
    # test proportions are the raw ones: no upsampling on test data
    assert np.array_equal(np.bincount(p.labels, minlength=3), ds.class_counts())
    for run in res.runs:
        assert len(set(run.counts["train"])) == 1 and len(set(run.counts["val"])) == 1
