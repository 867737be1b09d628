import numpy as np
import pytest

from pulsegru import checkpoint as C
from pulsegru.model import ModelConfig, init_params
from pulsegru.optim import Adam


def make(cfg=ModelConfig(d=2, L=30, gru_hidden=4)):
    p = init_params(cfg, 5)
    opt = Adam()
    opt.step(p.weights, {k: np.ones_like(v) for k, v in p.weights.items()})
    return C.Checkpoint(p, epoch=3, best_val_loss=0.25, optimizer=opt, extra={"note": "x"})


def test_roundtrip(tmp_path):
    ck = make()
    path = C.save(ck, tmp_path / "a.npz")
    back = C.load(path, expected=ck.config)
    assert back.epoch == 3 and back.best_val_loss == 0.25 and back.extra == {"note": "x"}
    for k in ck.params.weights:
        assert np.array_equal(back.params.weights[k], ck.params.weights[k])
        assert np.array_equal(back.optimizer.m[k], ck.optimizer.m[k])
    assert back.optimizer.t == 1
    assert back.params.buffers.keys() == ck.params.buffers.keys()


def test_bytes_are_deterministic():
    assert C.to_bytes(make()) == C.to_bytes(make())


def test_stored_little_endian_f32():
    z = np.load(__import__("io").BytesIO(C.to_bytes(make())))
    assert all(z[k].dtype == np.dtype("<f4") for k in z.files if k != "__meta__")


def test_config_mismatch_rejected():
    with pytest.raises(C.CheckpointError):
        C.from_bytes(C.to_bytes(make()), expected=ModelConfig(d=4, L=30, gru_hidden=4))


def test_shape_mismatch_rejected():
    ck = make()
    ck.params.weights["dense.W"] = np.zeros((3, 5), dtype=np.float32)
    with pytest.raises(C.CheckpointError):
        C.from_bytes(C.to_bytes(ck))


def test_garbage_rejected():
    with pytest.raises(C.CheckpointError):
        C.from_bytes(b"not a checkpoint")
