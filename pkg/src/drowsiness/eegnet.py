"""EEGNet regression network in plain numpy.

Layer stack for an input epoch of C channels x T samples::

    16 x Conv1D(C, 1)   -> BatchNorm -> reshape 1x16xT -> Dropout
    4  x Conv2D(2, 32)  -> BatchNorm -> MaxPool(2, 4)  -> Dropout
    4  x Conv2D(8, 4)   -> BatchNorm -> MaxPool(2, 4)  -> Dropout
    Dense -> 1 (linear)

Both 2-D convolutions are "same"-padded and computed as blocked
block-Toeplitz matrix products.  Trainable parameters: 16C + T + 841 when 16 divides T.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import TrainConfig
from .errors import ConfigError, DataError, DivergenceError

MAGIC = b"EEGNETR\x00"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class EegNetConfig:
    in_channels: int
    in_time: int
    conv1_filters: int = 16
    conv2_filters: int = 4
    conv2_kernel: tuple[int, int] = (2, 32)
    conv3_filters: int = 4
    conv3_kernel: tuple[int, int] = (8, 4)
    pool: tuple[int, int] = (2, 4)
    dropout_p: float = 0.25
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    seed: int = 0
    dtype: str = "float64"
    training: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        for name in ("conv2_kernel", "conv3_kernel", "pool"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))
        if self.in_channels < 1 or self.in_time < 1:
            raise ConfigError(f"invalid input dims C={self.in_channels}, T={self.in_time}")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError("dropout_p must be in [0, 1)")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be 'float64' or 'float32', got {self.dtype!r}")
        h, w = self.pooled_size
        if h < 1 or w < 1:
            raise ConfigError(
                f"T={self.in_time} too short for two {self.pool} poolings")

    @property
    def np_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    @property
    def pooled_size(self) -> tuple[int, int]:
        ph, pw = self.pool
        return (self.conv1_filters // ph) // ph, (self.in_time // pw) // pw

    @property
    def dense_in(self) -> int:
        h, w = self.pooled_size
        return self.conv3_filters * h * w

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EegNetConfig":
        d = dict(d)
        d["training"] = TrainConfig(**d.get("training", {}))
        return cls(**d)


def param_shapes(cfg: EegNetConfig) -> dict[str, tuple[int, ...]]:
    f1, f2, f3 = cfg.conv1_filters, cfg.conv2_filters, cfg.conv3_filters
    return {
        "conv1.weight": (f1, cfg.in_channels),
        "conv1.bias": (f1,),
        "bn1.gamma": (f1,),
        "bn1.beta": (f1,),
        "conv2.weight": (f2, 1) + cfg.conv2_kernel,
        "conv2.bias": (f2,),
        "bn2.gamma": (f2,),
        "bn2.beta": (f2,),
        "conv3.weight": (f3, f2) + cfg.conv3_kernel,
        "conv3.bias": (f3,),
        "bn3.gamma": (f3,),
        "bn3.beta": (f3,),
        "dense.weight": (cfg.dense_in,),
        "dense.bias": (1,),
    }


def buffer_shapes(cfg: EegNetConfig) -> dict[str, tuple[int, ...]]:
    out = {}
    for name, n in (("bn1", cfg.conv1_filters), ("bn2", cfg.conv2_filters),
                    ("bn3", cfg.conv3_filters)):
        out[f"{name}.running_mean"] = (n,)
        out[f"{name}.running_var"] = (n,)
    return out


class EegNetModel:
    """Parameters, batch-norm running statistics and configuration."""

    def __init__(self, config: EegNetConfig, params: dict[str, np.ndarray],
                 buffers: dict[str, np.ndarray]):
        self.config = config
        self.params = params
        self.buffers = buffers

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "EegNetModel":
        return EegNetModel(self.config, {k: v.copy() for k, v in self.params.items()},
                           {k: v.copy() for k, v in self.buffers.items()})

    def predict(self, X, batch_size: int = 256) -> np.ndarray:
        return predict(self, X, batch_size)


def build(cfg: EegNetConfig) -> EegNetModel:
    """Initialise a model: uniform(+-1/sqrt(fan_in)) weights, zero biases, unit BN scale."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xE1]))
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    buffers = {name: (np.ones(s) if name.endswith("var") else np.zeros(s))
               for name, s in buffer_shapes(cfg).items()}
    dt = cfg.np_dtype
    return EegNetModel(cfg, {k: v.astype(dt) for k, v in params.items()},
                       {k: v.astype(dt) for k, v in buffers.items()})


# ---------------------------------------------------------------------------
# layers


@functools.lru_cache(maxsize=64)
def _tap_selector(kh: int, kw: int, lh: int, lw: int) -> np.ndarray:
    """0/1 matrix placing the kh*kw kernel taps into one banded block matrix.

    Row ``i*kw + j`` marks the entries ``(h+i, w+j, h, w)`` of an
    (lh+kh-1) x (lw+kw-1) x lh x lw block.
    """
    ah, aw = lh + kh - 1, lw + kw - 1
    sel = np.zeros((kh * kw, ah, aw, lh, lw))
    h, w = np.meshgrid(np.arange(lh), np.arange(lw), indexing="ij")
    for i in range(kh):
        for j in range(kw):
            sel[i * kw + j, h + i, w + j, h, w] = 1.0
    sel.flags.writeable = False
    return sel.reshape(kh * kw, ah * aw * lh * lw)


def _block_cost(shape, kshape, lh, lw):
    B, Ci, H, W = shape
    Co, _, kh, kw = kshape
    rows = B * -(-H // lh) * -(-W // lw)
    k, n = Ci * (lh + kh - 1) * (lw + kw - 1), Co * lh * lw
    # GEMM flops at ~15 GFLOP/s plus operand traffic at ~0.6 G elements/s
    return 2 * rows * k * n / 15e9 + rows * (k + 2 * n) / 0.6e9


@functools.lru_cache(maxsize=64)
def _block_size(shape, kshape) -> tuple[int, int]:
    H, W = shape[2], shape[3]
    hs = sorted({v for v in (1, 2, 4, 8, 16) if v < H} | {H})
    ws = sorted({v for v in (1, 2, 4, 8, 16, 32, 64) if v < W} | ({W} if W <= 128 else set()))
    return min(((lh, lw) for lh in hs for lw in ws),
               key=lambda b: _block_cost(shape, kshape, *b))


def _correlate(x, K, pad_top, pad_left):
    """Zero-padded cross-correlation with a (B, Ci, H, W) -> (B, Co, H, W) output.

    The output is tiled into lh x lw blocks; each block is one row of a GEMM
    against a banded block-Toeplitz matrix built from the kernel.
    """
    B, Ci, H, W = x.shape
    Co, _, kh, kw = K.shape
    lh, lw = _block_size(x.shape, K.shape)
    nh, nw = -(-H // lh), -(-W // lw)
    ah, aw = lh + kh - 1, lw + kw - 1
    xp = np.zeros((B, Ci, nh * lh + kh - 1, nw * lw + kw - 1), dtype=x.dtype)
    xp[:, :, pad_top:pad_top + H, pad_left:pad_left + W] = x
    win = np.lib.stride_tricks.sliding_window_view(xp, (ah, aw), axis=(2, 3))[:, :, ::lh, ::lw]
    Xc = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * nh * nw, Ci * ah * aw)
    sel = _tap_selector(kh, kw, lh, lw).astype(x.dtype, copy=False)
    M = (K.reshape(Co * Ci, kh * kw) @ sel).reshape(Co, Ci * ah * aw, lh * lw)
    M = M.transpose(1, 0, 2).reshape(Ci * ah * aw, Co * lh * lw)
    Y = (Xc @ M).reshape(B, nh, nw, Co, lh, lw).transpose(0, 3, 1, 4, 2, 5)
    y = Y.reshape(B, Co, nh * lh, nw * lw)[:, :, :H, :W]
    return y, Xc, (lh, lw)


def _conv_same_forward(x, K, b):
    """'Same'-padded cross-correlation of (B, Ci, H, W) with (Co, Ci, kh, kw).

    Height is zero-padded by (kh-1)//2 on top, width by (kw-1)//2 on the
    left; the remainder goes bottom/right.
    """
    kh, kw = K.shape[2:]
    y, Xc, blk = _correlate(x, K, (kh - 1) // 2, (kw - 1) // 2)
    y = y + b[None, :, None, None]
    return y, (Xc, K, blk, x.shape)


def _conv_same_backward(g, cache):
    Xc, K, (lh, lw), xshape = cache
    B, Ci, H, W = xshape
    Co, _, kh, kw = K.shape
    nh, nw = -(-H // lh), -(-W // lw)
    ah, aw = lh + kh - 1, lw + kw - 1
    gp = np.zeros((B, Co, nh * lh, nw * lw), dtype=g.dtype)
    gp[:, :, :H, :W] = g
    G = gp.reshape(B, Co, nh, lh, nw, lw).transpose(0, 2, 4, 1, 3, 5).reshape(
        B * nh * nw, Co * lh * lw)
    dM = (Xc.T @ G).reshape(Ci * ah * aw, Co, lh * lw).transpose(1, 0, 2)
    sel = _tap_selector(kh, kw, lh, lw).astype(g.dtype, copy=False)
    dK = (dM.reshape(Co * Ci, -1) @ sel.T).reshape(K.shape)
    # the input gradient is a correlation with the flipped, transposed kernel
    Kf = np.ascontiguousarray(K[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    dx, _, _ = _correlate(np.ascontiguousarray(g), Kf, kh - 1 - (kh - 1) // 2,
                          kw - 1 - (kw - 1) // 2)
    return np.ascontiguousarray(dx), dK, g.sum(axis=(0, 2, 3))


def _bn_forward(x, gamma, beta, rmean, rvar, train, eps):
    B, C = x.shape[:2]
    shape = (1, C) + (1,) * (x.ndim - 2)
    x3 = x.reshape(B, C, -1)
    count = B * x3.shape[2]
    if train:
        mean = np.einsum("bcl->c", x3) / count
        xc = x - mean.reshape(shape)
        xc3 = xc.reshape(B, C, -1)
        var = np.einsum("bcl,bcl->c", xc3, xc3) / count
    else:
        mean, var = rmean, rvar
        xc = x - mean.reshape(shape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc
    xhat *= inv.reshape(shape)
    y = xhat * gamma.reshape(shape)
    y += beta.reshape(shape)
    return y, (xhat, inv, gamma, count), (mean, var, count)


def _bn_backward(g, cache):
    xhat, inv, gamma, count = cache
    B, C = g.shape[:2]
    shape = (1, C) + (1,) * (g.ndim - 2)
    g3 = g.reshape(B, C, -1)
    dbeta = np.einsum("bcl->c", g3)
    dgamma = np.einsum("bcl,bcl->c", g3, xhat.reshape(B, C, -1))
    # dx = gamma*inv/N * (N*g - sum(g) - xhat*sum(g*xhat))
    dx = xhat * (-dgamma / count).reshape(shape)
    dx += g
    dx -= (dbeta / count).reshape(shape)
    dx *= (gamma * inv).reshape(shape)
    return dx, dgamma, dbeta


def _pool_forward(x, ph, pw):
    B, C, H, W = x.shape
    H2, W2 = H // ph, W // pw
    blocks = x[:, :, :H2 * ph, :W2 * pw].reshape(B, C, H2, ph, W2, pw)
    y = blocks.max(axis=(3, 5))
    return y, (x, y, ph, pw)


def _pool_backward(g, cache):
    x, y, ph, pw = cache
    B, C, H, W = x.shape
    H2, W2 = y.shape[2], y.shape[3]
    blocks = x[:, :, :H2 * ph, :W2 * pw].reshape(B, C, H2, ph, W2, pw)
    hit = blocks == y[:, :, :, None, :, None]
    if np.count_nonzero(hit) != y.size:
        # ties: route the gradient to the first maximum of each window only
        flat = hit.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, H2, W2, ph * pw)
        first = flat.argmax(axis=-1)
        flat = np.zeros_like(flat)
        np.put_along_axis(flat, first[..., None], True, axis=-1)
        hit = flat.reshape(B, C, H2, W2, ph, pw).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros(x.shape, dtype=g.dtype)
    dx[:, :, :H2 * ph, :W2 * pw] = (hit * g[:, :, :, None, :, None]).reshape(
        B, C, H2 * ph, W2 * pw)
    return dx


def _dropout_rng(seed: int, step: int) -> np.random.Generator:
    key = int(np.random.SeedSequence(seed).generate_state(1, np.uint64)[0])
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, int(step), 0]))


def _dropout_mask(rng, shape, p, dtype=np.float64):
    if p == 0:
        return None
    keep = rng.random(shape, dtype=dtype) >= p
    return keep * np.asarray(1.0 / (1.0 - p), dtype=dtype)


# ---------------------------------------------------------------------------
# forward / backward


def _forward(model: EegNetModel, x: np.ndarray, train: bool,
             dropout_rng: np.random.Generator | None = None, trace: list | None = None):
    cfg, P, S = model.config, model.params, model.buffers
    dt = cfg.np_dtype
    x = np.asarray(x, dtype=dt)
    if x.ndim != 3 or x.shape[1:] != (cfg.in_channels, cfg.in_time):
        raise DataError(
            f"batch shape {x.shape} does not match C={cfg.in_channels}, T={cfg.in_time}")
    B = x.shape[0]
    eps = cfg.bn_eps
    caches = {}
    stats = {}
    p = cfg.dropout_p if train else 0.0

    def note(name, a):
        if trace is not None:
            trace.append((name, a.shape[1:]))

    note("input", x)
    z = np.einsum("fc,bct->bft", P["conv1.weight"], x) + P["conv1.bias"][None, :, None]
    z = z[:, :, None, :]  # 16 x 1 x T
    note("conv1", z)
    z, caches["bn1"], stats["bn1"] = _bn_forward(
        z, P["bn1.gamma"], P["bn1.beta"], S["bn1.running_mean"], S["bn1.running_var"], train, eps)
    note("bn1", z)
    z = z.reshape(B, 1, cfg.conv1_filters, cfg.in_time)
    note("reshape", z)
    m1 = _dropout_mask(dropout_rng, z.shape, p, dt) if train else None
    if m1 is not None:
        z = z * m1
    note("dropout1", z)

    z, caches["conv2"] = _conv_same_forward(z, P["conv2.weight"], P["conv2.bias"])
    note("conv2", z)
    z, caches["bn2"], stats["bn2"] = _bn_forward(
        z, P["bn2.gamma"], P["bn2.beta"], S["bn2.running_mean"], S["bn2.running_var"], train, eps)
    note("bn2", z)
    z, caches["pool2"] = _pool_forward(z, *cfg.pool)
    note("pool2", z)
    m2 = _dropout_mask(dropout_rng, z.shape, p, dt) if train else None
    if m2 is not None:
        z = z * m2
    note("dropout2", z)

    z, caches["conv3"] = _conv_same_forward(z, P["conv3.weight"], P["conv3.bias"])
    note("conv3", z)
    z, caches["bn3"], stats["bn3"] = _bn_forward(
        z, P["bn3.gamma"], P["bn3.beta"], S["bn3.running_mean"], S["bn3.running_var"], train, eps)
    note("bn3", z)
    z, caches["pool3"] = _pool_forward(z, *cfg.pool)
    note("pool3", z)
    m3 = _dropout_mask(dropout_rng, z.shape, p, dt) if train else None
    if m3 is not None:
        z = z * m3
    note("dropout3", z)

    flat = z.reshape(B, -1)
    out = flat @ P["dense.weight"] + P["dense.bias"][0]
    note("dense", out[:, None])
    caches.update(x=x, masks=(m1, m2, m3), flat=flat, pool3_shape=z.shape)
    return out, caches, stats


def _backward(model: EegNetModel, caches, dout: np.ndarray) -> dict[str, np.ndarray]:
    cfg, P = model.config, model.params
    B = dout.shape[0]
    m1, m2, m3 = caches["masks"]
    g = {}
    g["dense.weight"] = caches["flat"].T @ dout
    g["dense.bias"] = np.array([dout.sum()])
    dz = np.outer(dout, P["dense.weight"]).reshape(caches["pool3_shape"])
    if m3 is not None:
        dz = dz * m3
    dz = _pool_backward(dz, caches["pool3"])
    dz, g["bn3.gamma"], g["bn3.beta"] = _bn_backward(dz, caches["bn3"])
    dz, g["conv3.weight"], g["conv3.bias"] = _conv_same_backward(dz, caches["conv3"])
    if m2 is not None:
        dz = dz * m2
    dz = _pool_backward(dz, caches["pool2"])
    dz, g["bn2.gamma"], g["bn2.beta"] = _bn_backward(dz, caches["bn2"])
    dz, g["conv2.weight"], g["conv2.bias"] = _conv_same_backward(dz, caches["conv2"])
    if m1 is not None:
        dz = dz * m1
    dz = dz.reshape(B, cfg.conv1_filters, 1, cfg.in_time)
    dz, g["bn1.gamma"], g["bn1.beta"] = _bn_backward(dz, caches["bn1"])
    dz = dz[:, :, 0, :]
    g["conv1.weight"] = np.einsum("bft,bct->fc", dz, caches["x"])
    g["conv1.bias"] = dz.sum(axis=(0, 2))
    return {k: g[k] for k in P}


def forward(model: EegNetModel, x: np.ndarray, mode: str = "eval",
            dropout_seed: int | None = None) -> np.ndarray:
    """Predictions for a batch of shape (b, C, T).

    ``mode="eval"`` uses running batch-norm statistics and no dropout;
    ``mode="train"`` uses batch statistics and (when ``dropout_seed`` is
    given) a reproducible dropout mask.  Running statistics are not updated.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    rng = _dropout_rng(dropout_seed, 0) if dropout_seed is not None else None
    out, _, _ = _forward(model, x, train=(mode == "train"), dropout_rng=rng)
    return out


def shape_ledger(model: EegNetModel, batch: int = 2) -> list[tuple[str, tuple[int, ...]]]:
    """Per-sample output shape of every stage for an eval pass on zeros."""
    trace: list = []
    cfg = model.config
    _forward(model, np.zeros((batch, cfg.in_channels, cfg.in_time)), train=False, trace=trace)
    return trace


def loss_and_grad(model: EegNetModel, x, y, dropout_seed: int | None = None):
    """Train-mode MSE loss and its gradient for every parameter.

    Pure: neither parameters nor running statistics change.  With
    ``dropout_seed=None`` dropout is disabled (useful for gradient checks).
    """
    y = np.asarray(y, dtype=np.float64)
    rng = _dropout_rng(dropout_seed, 0) if dropout_seed is not None else None
    out, caches, _ = _forward(model, x, train=True, dropout_rng=rng)
    r = out - y.astype(model.config.np_dtype)
    loss = float(np.mean(r ** 2))
    grads = _backward(model, caches, 2.0 * r / r.size)
    return loss, grads


# ---------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def from_config(cls, tc: TrainConfig) -> "AdamState":
        return cls(lr=tc.learning_rate, beta1=tc.beta1, beta2=tc.beta2, eps=tc.adam_eps)


def train_step(model: EegNetModel, x, y, opt: AdamState) -> float:
    """One Adam step on a mini-batch; updates ``model`` and ``opt`` in place.

    Returns the batch MSE before the update.  Dropout masks depend only on
    the model seed and the optimiser step count.
    """
    y = np.asarray(y, dtype=np.float64)
    if np.any(y < 0) or np.any(y > 1):
        raise DataError("targets must lie in [0, 1]")
    cfg = model.config
    rng = _dropout_rng(cfg.seed, opt.step + 1)
    out, caches, stats = _forward(model, x, train=True, dropout_rng=rng)
    r = out - y.astype(cfg.np_dtype)
    loss = float(np.mean(r ** 2))
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss at step {opt.step}")
    grads = _backward(model, caches, 2.0 * r / r.size)

    opt.step += 1
    t = opt.step
    c1 = 1 - opt.beta1 ** t
    c2 = 1 - opt.beta2 ** t
    for name, p in model.params.items():
        gr = grads[name]
        m = opt.m.get(name)
        if m is None:
            m = opt.m[name] = np.zeros_like(p)
            opt.v[name] = np.zeros_like(p)
        v = opt.v[name]
        m *= opt.beta1
        m += (1 - opt.beta1) * gr
        v *= opt.beta2
        v += (1 - opt.beta2) * gr * gr
        if opt.lr != 0:
            p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)

    mom = cfg.bn_momentum
    for name, (mean, var, count) in stats.items():
        unbiased = var * count / max(count - 1, 1)
        rm, rv = model.buffers[f"{name}.running_mean"], model.buffers[f"{name}.running_var"]
        rm *= 1 - mom
        rm += mom * mean
        rv *= 1 - mom
        rv += mom * unbiased
    for name, p in model.params.items():
        if not np.all(np.isfinite(p)):
            raise DivergenceError(f"non-finite parameter {name} at step {opt.step}")
    return loss


@dataclass
class TrainReport:
    epoch_losses: list[float]
    wall_time_s: float
    steps: int
    val_loss: float | None = None


def fit(model: EegNetModel, X, y, cfg: TrainConfig | None = None,
        X_val=None, y_val=None) -> TrainReport:
    """Mini-batch Adam training with a seeded shuffle per epoch.

    ``X`` may be an array of shape (n, C, T) or any object supporting
    ``len()`` and integer-array indexing that returns such batches.  Batches
    of a single sample are skipped (batch statistics need two samples).
    """
    cfg = cfg or model.config.training
    y = np.asarray(y, dtype=np.float64)
    n = len(X)
    if n != y.size:
        raise DataError(f"{n} samples but {y.size} targets")
    if n < 2:
        raise DataError("need at least two training samples")
    bs = min(cfg.batch_size, n)
    opt = AdamState.from_config(cfg)
    t0 = time.perf_counter()
    losses = []
    for ep in range(cfg.epochs):
        order = np.random.default_rng(
            np.random.SeedSequence([model.config.seed, 0xF17, ep])).permutation(n)
        batches = [order[i:i + bs] for i in range(0, n, bs)]
        batches = [b for b in batches if b.size >= 2]
        if cfg.max_batches_per_epoch is not None:
            batches = batches[:cfg.max_batches_per_epoch]
        tot = 0.0
        for idx in batches:
            idx = np.sort(idx)
            tot += train_step(model, X[idx], y[idx], opt) * idx.size
        losses.append(tot / sum(b.size for b in batches))
    val = None
    if X_val is not None:
        val = float(np.mean((predict(model, X_val) - np.asarray(y_val)) ** 2))
    return TrainReport(losses, time.perf_counter() - t0, opt.step, val)


def predict(model: EegNetModel, X, batch_size: int = 256) -> np.ndarray:
    n = len(X)
    out = np.empty(n)
    for i in range(0, n, batch_size):
        idx = np.arange(i, min(n, i + batch_size))
        out[idx] = _forward(model, X[idx], train=False)[0]
    return out


# ---------------------------------------------------------------------------
# persistence


def _tensor_layout(cfg: EegNetConfig):
    return list(param_shapes(cfg).items()) + list(buffer_shapes(cfg).items())


def save_model(model: EegNetModel, path) -> None:
    """Magic, version, JSON config block, then little-endian tensors in declaration order.

    Tensors are stored in the model's dtype (float64 or float32).
    """
    cfg_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(cfg_blob)), cfg_blob]
    for name, shape in _tensor_layout(model.config):
        arr = model.params[name] if name in model.params else model.buffers[name]
        parts.append(np.ascontiguousarray(arr, dtype=model.config.np_dtype.newbyteorder("<")).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> EegNetModel:
    blob = Path(path).read_bytes()
    head = len(MAGIC) + 8
    if len(blob) < head or blob[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path} is not an EEGNet model file")
    version, cfg_len = struct.unpack("<II", blob[len(MAGIC):head])
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported model format version {version}")
    try:
        cfg = EegNetConfig.from_dict(json.loads(blob[head:head + cfg_len].decode("utf-8")))
    except (ValueError, TypeError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt model config block: {exc}") from exc
    layout = _tensor_layout(cfg)
    dt = cfg.np_dtype.newbyteorder("<")
    need = head + cfg_len + dt.itemsize * sum(int(np.prod(s)) for _, s in layout)
    if len(blob) != need:
        raise DataError(f"model file is {len(blob)} bytes, expected {need} (truncated or corrupt)")
    off = head + cfg_len
    params, buffers = {}, {}
    pnames = set(param_shapes(cfg))
    for name, shape in layout:
        size = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype=dt, count=size, offset=off).astype(cfg.np_dtype)
        off += dt.itemsize * size
        (params if name in pnames else buffers)[name] = arr.reshape(shape)
    return EegNetModel(cfg, params, buffers)


def param_count_formula(C: int, T: int) -> int:
    return 16 * C + T + 841


def layer_param_counts(model: EegNetModel) -> Sequence[tuple[str, int]]:
    groups = {}
    for name, p in model.params.items():
        layer = name.split(".")[0]
        groups[layer] = groups.get(layer, 0) + p.size
    return list(groups.items())
