"""End-to-end gradient check against central finite differences (float64)."""
import argparse
import time

import numpy as np

from pulsegru.model import ModelConfig, init_params, loss_and_grads


def worst_error(cfg: ModelConfig, seed=1, batch=3, h=1e-6) -> float:
    p = init_params(cfg, seed, np.float64)
    x = np.random.default_rng(seed + 1).random((batch, cfg.L, cfg.d))
    y = np.arange(batch) % 3
    loss = lambda: loss_and_grads(p.copy(), x, y, np.random.default_rng(9))[0]
    _, g, _ = loss_and_grads(p.copy(), x, y, np.random.default_rng(9))
    worst = 0.0
    for k, v in p.weights.items():
        num = np.zeros_like(v)
        for i in np.ndindex(v.shape):
            old = v[i]
            v[i] = old + h
            up = loss()
            v[i] = old - h
            num[i] = (up - loss()) / (2 * h)
            v[i] = old
        err = np.max(np.abs(num - g[k])) / max(np.max(np.abs(num)), 1e-12)
        print(f"{k:<14} {err:.2e}")
        worst = max(worst, err)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--L", type=int, default=16)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--hidden", type=int, default=8)
    a = ap.parse_args()
    t = time.perf_counter()
    w = worst_error(ModelConfig(d=a.d, L=a.L, gru_hidden=a.hidden))
    print(f"worst relative error {w:.2e} ({time.perf_counter() - t:.1f} s)")
