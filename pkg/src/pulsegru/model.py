"""1D-Bi-GRU classifier in plain numpy with hand-written backpropagation.

Layer stack (per segment of L samples, d channels)::

    conv1d  (d -> 4d, kernel 5, stride 1, zero padding 2)
    bi-GRU  (128 units per direction, outputs concatenated -> 256)
    batch norm over the 256 features
    dropout 0.2
    dense   (256 -> 3) applied at every timestep
    mean over time -> segment logits

Layer functions work time-major: activations are (L, B, C), and a 2-D
(L, C) input is treated as a batch of one. ``forward`` takes the
batch-major (B, L, d) stack and transposes once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signals import SEGMENT_LENGTH

N_CLASSES = 3


@dataclass(frozen=True)
class ModelConfig:
    d: int = 4
    L: int = SEGMENT_LENGTH
    gru_hidden: int = 128
    kernel: int = 5
    stride: int = 1
    padding: int = 2
    dropout_rate: float = 0.2
    classes: int = N_CLASSES
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.d < 1 or self.gru_hidden < 1 or self.L < 1:
            raise ValueError("d, L and gru_hidden must be positive")
        if self.stride != 1 or 2 * self.padding != self.kernel - 1:
            raise ValueError("only stride 1 with 'same' padding is supported")

    @property
    def conv_filters(self) -> int:
        return 4 * self.d

    @property
    def features(self) -> int:
        return 2 * self.gru_hidden

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    F, H, C = cfg.conv_filters, cfg.gru_hidden, cfg.features
    shapes = {"conv.W": (F, cfg.d, cfg.kernel), "conv.b": (F,)}
    for dr in ("fwd", "bwd"):
        shapes |= {f"gru.{dr}.W": (3 * H, F), f"gru.{dr}.U": (3 * H, H),
                   f"gru.{dr}.b_ih": (3 * H,), f"gru.{dr}.b_hh": (3 * H,)}
    shapes |= {"bn.gamma": (C,), "bn.beta": (C,),
               "dense.W": (cfg.classes, C), "dense.b": (cfg.classes,)}
    return shapes


def buffer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {"bn.running_mean": (cfg.features,), "bn.running_var": (cfg.features,)}


@dataclass
class ModelParams:
    config: ModelConfig
    weights: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def dtype(self):
        return self.weights["conv.W"].dtype

    def n_learnable(self) -> int:
        return int(sum(a.size for a in self.weights.values()))

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.weights.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(self.config,
                           {k: v.astype(dtype) for k, v in self.weights.items()},
                           {k: v.astype(dtype) for k, v in self.buffers.items()})

    def check(self) -> None:
        for table, shapes in ((self.weights, param_shapes(self.config)),
                              (self.buffers, buffer_shapes(self.config))):
            if set(table) != set(shapes):
                raise ValueError(f"parameter names {sorted(table)} do not match config")
            for k, shp in shapes.items():
                if table[k].shape != shp:
                    raise ValueError(f"{k}: shape {table[k].shape}, config expects {shp}")


def init_params(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    w = {}
    for name, shp in param_shapes(cfg).items():
        if name == "bn.gamma":
            w[name] = np.ones(shp)
        elif len(shp) == 1:
            w[name] = np.zeros(shp)
        else:
            fan_in = int(np.prod(shp[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            w[name] = rng.uniform(-bound, bound, size=shp)
    buf = {"bn.running_mean": np.zeros(cfg.features), "bn.running_var": np.ones(cfg.features)}
    return ModelParams(cfg, w, buf).astype(dtype)


def _check_shape(x: np.ndarray, ndim: int, last: int, what: str) -> None:
    if x.ndim != ndim or x.shape[-1] != last:
        raise ValueError(f"{what}: expected {ndim}-D input with last axis {last}, got {x.shape}")


def _as_batch(x: np.ndarray):
    """(L, C) -> (L, 1, C); returns (array, was_2d)."""
    if x.ndim == 2:
        return x[:, None, :], True
    return x, False


# ---------------------------------------------------------------- conv1d

def conv1d_forward(x, W, b, padding: int = 2):
    """Same-length cross-correlation along time. x (L, B, d), W (F, d, K) -> (L, B, F)."""
    F, d, K = W.shape
    x, flat = _as_batch(np.asarray(x))
    _check_shape(x, 3, d, "conv1d")
    L, B, _ = x.shape
    xp = np.pad(x, ((padding, padding), (0, 0), (0, 0)))
    # cols[t, b, c, k] = xp[t + k, b, c]
    cols = np.lib.stride_tricks.sliding_window_view(xp, K, axis=0)[:L]
    cols = np.ascontiguousarray(cols).reshape(L * B, d * K)
    y = (cols @ W.reshape(F, d * K).T + b).reshape(L, B, F)
    return (y[:, 0] if flat else y), (cols, W, padding, flat)


def conv1d_backward(dy, cache):
    """Returns (dx, dW, db)."""
    cols, W, padding, flat = cache
    F, d, K = W.shape
    dy, _ = _as_batch(dy)
    L, B, _ = dy.shape
    g = dy.reshape(L * B, F)
    dW = (g.T @ cols).reshape(F, d, K)
    db = g.sum(axis=0)
    dcols = (g @ W.reshape(F, d * K)).reshape(L, B, d, K)
    dxp = np.zeros((L + 2 * padding, B, d), dtype=dy.dtype)
    for k in range(K):
        dxp[k:k + L] += dcols[..., k]
    dx = dxp[padding:padding + L]
    return (dx[:, 0] if flat else dx), dW, db


# ---------------------------------------------------------------- bi-GRU

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _scan_forward(xs, UT, bhn, hs, rz, ns, hn):
    """Run both directions in lock-step; arrays are direction-major (2, L, B, .).

    ``xs`` already holds W x + b_ih with b_hh added on the r and z gates.
    """
    _, L, B, H3 = xs.shape
    H = H3 // 3
    hp = np.empty((2, B, H3), dtype=xs.dtype)
    for s in range(L):
        h = hs[:, s]
        np.matmul(h, UT, out=hp)
        g = rz[:, s]
        np.add(xs[:, s, :, :2 * H], hp[..., :2 * H], out=g)
        # sigmoid(g) = 0.5 tanh(g / 2) + 0.5
        g *= 0.5
        np.tanh(g, out=g)
        g *= 0.5
        g += 0.5
        m = hn[:, s]
        np.add(hp[..., 2 * H:], bhn, out=m)
        n = ns[:, s]
        np.multiply(g[..., :H], m, out=n)
        n += xs[:, s, :, 2 * H:]
        np.tanh(n, out=n)
        # h' = n + z * (h - n)
        out = hs[:, s + 1]
        np.subtract(h, n, out=out)
        out *= g[..., H:]
        out += n


def _scan_backward(dys, U, hs, rz, ns, hn, dhp, dn_in):
    """Fills dhp (grad of U h + b_hh) and dn_in (grad of W_n x + b_in) per step."""
    D, L, B, H = ns.shape
    dt = ns.dtype
    dh = np.zeros((D, B, H), dtype=dt)
    t1 = np.empty((D, B, H), dtype=dt)
    t2 = np.empty((D, B, H), dtype=dt)
    back = np.empty((D, B, H), dtype=dt)
    for s in range(L - 1, -1, -1):
        dh += dys[:, s]
        r = rz[:, s, :, :H]
        z = rz[:, s, :, H:]
        n = ns[:, s]
        d = dhp[:, s]
        dn = dn_in[:, s]
        np.subtract(1.0, z, out=t2)
        np.multiply(dh, t2, out=dn)
        np.multiply(n, n, out=t1)
        np.subtract(1.0, t1, out=t1)
        dn *= t1
        np.subtract(1.0, r, out=t1)
        t1 *= r
        t1 *= hn[:, s]
        np.multiply(dn, t1, out=d[..., :H])
        np.subtract(hs[:, s], n, out=t1)
        t1 *= dh
        t2 *= z
        np.multiply(t1, t2, out=d[..., H:2 * H])
        np.multiply(dn, r, out=d[..., 2 * H:])
        dh *= z
        np.matmul(d, U, out=back)
        dh += back


def bigru_forward(x, fwd: dict, bwd: dict):
    """Bidirectional GRU over time-major input (L, B, C), zero initial state.

    Each direction (gate order r, z, n)::

        r = sigmoid(W_r x + b_ir + U_r h + b_hr)
        z = sigmoid(W_z x + b_iz + U_z h + b_hz)
        n = tanh(W_n x + b_in + r * (U_n h + b_hn))
        h' = (1 - z) * n + z * h

    Output is [h_fwd(t), h_bwd(t)] per timestep, shape (L, B, 2H).
    """
    H = fwd["U"].shape[1]
    x, flat = _as_batch(np.asarray(x))
    _check_shape(x, 3, fwd["W"].shape[1], "bigru")
    L, B, C = x.shape
    dt = x.dtype
    # direction 1 walks time backwards: its step s reads time L-1-s
    xr = np.ascontiguousarray(x[::-1])
    xs = np.empty((2, L, B, 3 * H), dtype=dt)
    for k, (p, inp) in enumerate(((fwd, x), (bwd, xr))):
        np.matmul(inp.reshape(L * B, C), p["W"].T, out=xs[k].reshape(L * B, 3 * H))
        bias = p["b_ih"].copy()
        bias[:2 * H] += p["b_hh"][:2 * H]
        xs[k] += bias
    UT = np.ascontiguousarray(np.stack([fwd["U"].T, bwd["U"].T]))  # (2, H, 3H)
    bhn = np.stack([fwd["b_hh"][2 * H:], bwd["b_hh"][2 * H:]])[:, None]  # (2, 1, H)

    hs = np.empty((2, L + 1, B, H), dtype=dt)
    hs[:, 0] = 0.0
    rz = np.empty((2, L, B, 2 * H), dtype=dt)
    ns = np.empty((2, L, B, H), dtype=dt)
    hn = np.empty((2, L, B, H), dtype=dt)
    _scan_forward(xs, UT, bhn, hs, rz, ns, hn)
    del xs
    y = np.concatenate([hs[0, 1:], hs[1, :0:-1]], axis=-1)
    cache = (x, xr, fwd, bwd, hs, rz, ns, hn, flat)
    return (y[:, 0] if flat else y), cache


def bigru_backward(dy, cache):
    """Returns (dx, grads_fwd, grads_bwd); grads keyed W, U, b_ih, b_hh."""
    x, xr, fwd, bwd, hs, rz, ns, hn, flat = cache
    _, L, B, H = ns.shape
    dt = ns.dtype
    dy, _ = _as_batch(dy)
    dys = np.empty((2, L, B, H), dtype=dt)
    dys[0] = dy[..., :H]
    dys[1] = dy[::-1, :, H:]
    Us = np.ascontiguousarray(np.stack([fwd["U"], bwd["U"]]))  # (2, 3H, H)

    dhp = np.empty((2, L, B, 3 * H), dtype=dt)
    dn_in = np.empty((2, L, B, H), dtype=dt)
    _scan_backward(dys, Us, hs, rz, ns, hn, dhp, dn_in)

    C = x.shape[-1]
    grads = []
    dx = np.empty((2, L, B, C), dtype=dt)
    for k, (p, inp) in enumerate(((fwd, x), (bwd, xr))):
        # input-side grads equal dhp on r and z, dn_in on n (both in scan order)
        dhk = dhp[k].reshape(L * B, 3 * H)
        drz = dhk[:, :2 * H]
        dnk = dn_in[k].reshape(L * B, H)
        xf = inp.reshape(L * B, C)
        grads.append({
            "U": dhk.T @ hs[k, :-1].reshape(L * B, H),
            "b_hh": dhk.sum(axis=0),
            "W": np.concatenate([drz.T @ xf, dnk.T @ xf]),
            "b_ih": np.concatenate([drz.sum(axis=0), dnk.sum(axis=0)]),
        })
        dxk = drz @ p["W"][:2 * H] + dnk @ p["W"][2 * H:]
        dx[k] = dxk.reshape(L, B, C)
    out = dx[0] + dx[1, ::-1]
    return (out[:, 0] if flat else out), grads[0], grads[1]


# ---------------------------------------------------------------- batch norm

def batchnorm_forward(x, gamma, beta, running_mean, running_var, *, training: bool,
                      eps: float = 1e-5, momentum: float = 0.1):
    """Per-feature normalization over every (time, batch) position.

    Training mode normalizes with batch statistics and updates the running
    buffers in place (unbiased variance, exponential average); inference
    mode uses the running buffers.
    """
    x = np.asarray(x)
    _check_shape(x, x.ndim, gamma.shape[0], "batchnorm")
    C = x.shape[-1]
    flat = x.reshape(-1, C)
    if training:
        n = flat.shape[0]
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (n / max(n - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = flat - mean.astype(x.dtype)
    xhat *= inv
    y = xhat * gamma
    y += beta
    return y.reshape(x.shape), (xhat, inv, gamma, x.shape)


def batchnorm_backward(dy, cache):
    """Training-mode backward. Returns (dx, dgamma, dbeta)."""
    xhat, inv, gamma, shape = cache
    g = dy.reshape(-1, xhat.shape[1])
    dbeta = g.sum(axis=0)
    dgamma = (g * xhat).sum(axis=0)
    n = g.shape[0]
    # dx = inv * gamma * (g - mean(g) - xhat * mean(g * xhat))
    dx = g - dbeta / n
    dx -= xhat * (dgamma / n)
    dx *= inv * gamma
    return dx.reshape(shape), dgamma, dbeta


# ---------------------------------------------------------------- dropout

def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float64):
    """Inverted-dropout mask: 0 with probability ``rate``, else 1/(1-rate)."""
    keep = rng.random(shape, dtype=np.float32) >= np.float32(rate)
    return keep.astype(dtype) * dtype(1.0 / (1.0 - rate))


def dropout(x, rate: float = 0.2, *, training: bool, rng: np.random.Generator | None = None):
    """Returns (output, mask); the mask is None in inference mode."""
    if not training or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    mask = dropout_mask(x.shape, rate, rng, x.dtype.type)
    return x * mask, mask


# ---------------------------------------------------------------- dense / pooling / loss

def dense_forward(x, W, b):
    """Per-timestep affine map shared across time: (..., C) -> (..., classes)."""
    x = np.asarray(x)
    _check_shape(x, x.ndim, W.shape[1], "dense")
    return x @ W.T + b, x


def dense_backward(dy, cache, W):
    x = cache
    g = dy.reshape(-1, dy.shape[-1])
    dW = g.T @ x.reshape(-1, x.shape[-1])
    db = g.sum(axis=0)
    return dy @ W, dW, db


def segment_logits(per_step, axis: int = 0):
    """Mean over the time axis (axis 0 for time-major arrays)."""
    return np.asarray(per_step).mean(axis=axis)


def predict_class(logits) -> np.ndarray:
    # argmax returns the first maximal index: lowest class wins ties
    return np.argmax(logits, axis=-1)


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits, label):
    """Cross-entropy for one logit vector, or the mean over a batch.

    Returns (loss, grad_logits); the batch gradient includes the 1/B factor.
    """
    logits = np.asarray(logits)
    single = logits.ndim == 1
    lg = logits[None] if single else logits
    lab = np.atleast_1d(np.asarray(label))
    z = lg - lg.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1))
    idx = np.arange(len(lab))
    losses = logsum - z[idx, lab]
    grad = softmax(lg)
    grad[idx, lab] -= 1.0
    if single:
        return float(losses[0]), grad[0]
    return float(losses.mean()), grad / len(lab)


# ---------------------------------------------------------------- full network

def _gru_dir(w: dict, dr: str) -> dict:
    return {k: w[f"gru.{dr}.{k}"] for k in ("W", "U", "b_ih", "b_hh")}


@dataclass
class ForwardCache:
    conv: tuple
    gru: tuple
    bn: tuple
    mask: np.ndarray | None
    dense_in: np.ndarray


def forward(params: ModelParams, x: np.ndarray, *, training: bool = False,
            rng: np.random.Generator | None = None):
    """Per-timestep class scores, time-major (L, B, 3), plus the cache.

    ``x`` is batch-major (B, L, d) or a single (L, d) segment. Training mode
    uses batch statistics (updating the running buffers) and samples a
    dropout mask from ``rng``; the cache is None in inference mode.
    """
    cfg = params.config
    w = params.weights
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != cfg.d:
        raise ValueError(f"input must be (B, L, {cfg.d}), got {x.shape}")
    h = np.ascontiguousarray(x.transpose(1, 0, 2))
    h, c_conv = conv1d_forward(h, w["conv.W"], w["conv.b"], cfg.padding)
    h, c_gru = bigru_forward(h, _gru_dir(w, "fwd"), _gru_dir(w, "bwd"))
    h, c_bn = batchnorm_forward(h, w["bn.gamma"], w["bn.beta"],
                                params.buffers["bn.running_mean"],
                                params.buffers["bn.running_var"],
                                training=training, eps=cfg.bn_eps, momentum=cfg.bn_momentum)
    h, mask = dropout(h, cfg.dropout_rate, training=training, rng=rng)
    out, c_dense = dense_forward(h, w["dense.W"], w["dense.b"])
    if not training:
        return out, None
    return out, ForwardCache(c_conv, c_gru, c_bn, mask, c_dense)


def backward(params: ModelParams, cache: ForwardCache, d_out: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of every learnable array from d loss / d per-step scores (L, B, 3)."""
    w = params.weights
    g: dict[str, np.ndarray] = {}
    dh, g["dense.W"], g["dense.b"] = dense_backward(d_out, cache.dense_in, w["dense.W"])
    if cache.mask is not None:
        dh *= cache.mask
    dh, g["bn.gamma"], g["bn.beta"] = batchnorm_backward(dh, cache.bn)
    dh, gf, gb = bigru_backward(dh, cache.gru)
    for dr, gd in (("fwd", gf), ("bwd", gb)):
        for k, v in gd.items():
            g[f"gru.{dr}.{k}"] = v
    _, g["conv.W"], g["conv.b"] = conv1d_backward(dh, cache.conv)
    return g


def loss_and_grads(params: ModelParams, x: np.ndarray, labels, rng: np.random.Generator):
    """One training-mode pass over a batch: (mean loss, grads, segment logits)."""
    out, cache = forward(params, x, training=True, rng=rng)
    logits = segment_logits(out)
    loss, dlogits = softmax_xent(logits, np.asarray(labels))
    L = out.shape[0]
    d_out = np.broadcast_to((dlogits / L).astype(out.dtype), out.shape)
    return loss, backward(params, cache, d_out), logits


def predict_logits(params: ModelParams, x: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Inference-mode segment logits for a stack of inputs (N, L, d)."""
    x = np.asarray(x)
    outs = [segment_logits(forward(params, x[i:i + batch_size])[0])
            for i in range(0, len(x), batch_size)]
    return np.concatenate(outs) if outs else np.zeros((0, params.config.classes))
