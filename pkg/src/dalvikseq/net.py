"""Embedding -> LSTM -> pooling -> dropout -> dense(ReLU) -> dense(sigmoid).

Everything is float64 numpy. Parameters live in a plain ``dict`` keyed by
``PARAM_NAMES``; gradients and Adam moments use the same keys and shapes.

LSTM gate blocks are stored stacked on the first axis in the order
input, forget, cell, output (``lstm_W[k]`` is H x E, ``lstm_U[k]`` is H x H).
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import DalvikSeqError, UsageError

PAD_ID = 0

PARAM_NAMES = (
    "embedding",
    "lstm_W",
    "lstm_U",
    "lstm_b",
    "dense1_W",
    "dense1_b",
    "dense2_W",
    "dense2_b",
)

GATE_I, GATE_F, GATE_G, GATE_O = range(4)

# named RNG streams; each is an independent Philox key
STREAM_INIT = 0
STREAM_DROPOUT = 1
STREAM_SHUFFLE = 2
STREAM_SPLIT = 3
STREAM_SYNTH = 4

CHECKPOINT_MAGIC = b"DSQM"
CHECKPOINT_VERSION = 1


class IdOutOfRange(DalvikSeqError):
    pass


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one named stream of a run seed."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass
class ModelConfig:
    seq_len: int = 40
    vocab_size: int = 2
    embed_dim: int = 64
    hidden: int = 64
    dense_units: int = 64
    dropout: float = 0.2
    batch_size: int = 128
    learning_rate: float = 0.001000000474974513
    epochs: int = 5
    seed: int = 0
    pooling: str = "max"

    def __post_init__(self):
        for name in ("seq_len", "vocab_size", "embed_dim", "hidden", "dense_units", "batch_size"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0.0 <= self.dropout < 1.0:
            raise UsageError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.epochs < 0:
            raise UsageError("epochs must be >= 0")
        if self.pooling not in ("max", "mean"):
            raise UsageError(f"unknown pooling {self.pooling!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    V, E, H, D = config.vocab_size, config.embed_dim, config.hidden, config.dense_units
    return {
        "embedding": (V, E),
        "lstm_W": (4, H, E),
        "lstm_U": (4, H, H),
        "lstm_b": (4, H),
        "dense1_W": (H, D),
        "dense1_b": (D,),
        "dense2_W": (D, 1),
        "dense2_b": (1,),
    }


def glorot_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(config: ModelConfig, seed: int | None = None) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases, forget-gate bias 1.0."""
    rng = make_rng(config.seed if seed is None else seed, STREAM_INIT)
    shapes = param_shapes(config)
    V, E, H, D = config.vocab_size, config.embed_dim, config.hidden, config.dense_units

    def uniform(shape, fan_in, fan_out):
        s = glorot_bound(fan_in, fan_out)
        return rng.uniform(-s, s, size=shape)

    params = {
        "embedding": uniform((V, E), V, E),
        "lstm_W": np.stack([uniform((H, E), E, H) for _ in range(4)]),
        "lstm_U": np.stack([uniform((H, H), H, H) for _ in range(4)]),
        "lstm_b": np.zeros(shapes["lstm_b"]),
        "dense1_W": uniform((H, D), H, D),
        "dense1_b": np.zeros(D),
        "dense2_W": uniform((D, 1), D, 1),
        "dense2_b": np.zeros(1),
    }
    params["lstm_b"][GATE_F] = 1.0
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def sigmoid(z):
    # split form avoids overflow warnings for large |z|
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def lstm_step(params, x_t, h_prev, c_prev):
    """One LSTM cell update. Works on a single vector or a (B, .) batch."""
    H = params["lstm_U"].shape[1]
    W = params["lstm_W"].reshape(4 * H, -1)
    U = params["lstm_U"].reshape(4 * H, H)
    z = np.asarray(x_t) @ W.T + np.asarray(h_prev) @ U.T + params["lstm_b"].reshape(4 * H)
    z = np.asarray(z, dtype=np.float64)
    i = sigmoid(z[..., 0:H])
    f = sigmoid(z[..., H : 2 * H])
    g = np.tanh(z[..., 2 * H : 3 * H])
    o = sigmoid(z[..., 3 * H : 4 * H])
    c_t = f * c_prev + i * g
    h_t = o * np.tanh(c_t)
    return h_t, c_t


@dataclass
class ForwardCache:
    ids: np.ndarray
    lengths: np.ndarray
    x: np.ndarray
    hs: np.ndarray
    cs: np.ndarray
    gates: np.ndarray
    pool_idx: np.ndarray | None
    pooled: np.ndarray
    drop_mask: np.ndarray
    a1: np.ndarray
    r1: np.ndarray
    probs: np.ndarray
    pooling: str
    params: dict = field(repr=False)


def forward(params, ids, train_mode: bool = False, rng: np.random.Generator | None = None,
            dropout: float = 0.2, pooling: str = "max"):
    """Return ``(probs, cache)`` for a (B, L) batch of padded id rows.

    Pad ids may appear only as a row suffix. The recurrence stops after the
    longest real row in the batch; trailing all-pad steps cannot reach the
    output, so probabilities and gradients equal a full L-step run.
    """
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise UsageError("forward expects a nonempty (B, L) id array")
    V, E = params["embedding"].shape
    if ids.min() < 0 or ids.max() >= V:
        raise IdOutOfRange(f"token id outside [0, {V})")
    B = ids.shape[0]
    H = params["lstm_U"].shape[1]
    lengths = (ids != PAD_ID).sum(axis=1)
    T = int(lengths.max())

    x = params["embedding"][ids[:, :T]]  # (B, T, E)
    W = params["lstm_W"].reshape(4 * H, E)
    U = params["lstm_U"].reshape(4 * H, H)
    xw = x @ W.T + params["lstm_b"].reshape(4 * H)

    hs = np.zeros((T + 1, B, H))  # hs[0] is the initial state
    cs = np.zeros((T + 1, B, H))
    gates = np.empty((T, B, 4 * H))
    for t in range(T):
        z = xw[:, t] + hs[t] @ U.T
        act = gates[t]
        act[:, : 2 * H] = sigmoid(z[:, : 2 * H])
        act[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
        act[:, 3 * H :] = sigmoid(z[:, 3 * H :])
        cs[t + 1] = act[:, H : 2 * H] * cs[t] + act[:, :H] * act[:, 2 * H : 3 * H]
        hs[t + 1] = act[:, 3 * H :] * np.tanh(cs[t + 1])

    out = hs[1:]  # (T, B, H)
    valid = np.arange(T)[:, None] < lengths[None, :]  # (T, B)
    nonempty = lengths > 0
    pool_idx = None
    if pooling == "max":
        if T:
            masked = np.where(valid[:, :, None], out, -np.inf)
            pool_idx = masked.argmax(axis=0)  # (B, H)
            pooled = np.take_along_axis(out, pool_idx[None], axis=0)[0]
        else:
            pool_idx = np.zeros((B, H), dtype=np.int64)
            pooled = np.zeros((B, H))
        pooled = np.where(nonempty[:, None], pooled, 0.0)
    elif pooling == "mean":
        summed = (out * valid[:, :, None]).sum(axis=0)
        pooled = summed / np.maximum(lengths, 1)[:, None]
    else:
        raise UsageError(f"unknown pooling {pooling!r}")

    if train_mode and dropout > 0.0:
        if rng is None:
            raise UsageError("train_mode forward needs an rng for dropout")
        keep = rng.random((B, H)) >= dropout
        drop_mask = keep / (1.0 - dropout)
    else:
        drop_mask = np.ones((B, H))
    dropped = pooled * drop_mask

    a1 = dropped @ params["dense1_W"] + params["dense1_b"]
    r1 = np.maximum(a1, 0.0)
    logits = (r1 @ params["dense2_W"])[:, 0] + params["dense2_b"][0]
    probs = sigmoid(logits)
    cache = ForwardCache(ids, lengths, x, hs, cs, gates, pool_idx, pooled, drop_mask,
                         a1, r1, probs, pooling, params)
    return probs, cache


PROB_CLAMP = 1e-7


def bce_loss(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward(cache: ForwardCache, labels) -> dict[str, np.ndarray]:
    """Gradients of ``bce_loss(cache.probs, labels)`` for every parameter."""
    params = cache.params
    y = np.asarray(labels, dtype=np.float64)
    p = cache.probs
    B = p.shape[0]
    H = params["lstm_U"].shape[1]
    E = params["embedding"].shape[1]
    grads = zeros_like_params(params)

    # clamped region has zero slope
    inside = (p > PROB_CLAMP) & (p < 1.0 - PROB_CLAMP)
    dlogit = np.where(inside, (p - y) / B, 0.0)

    grads["dense2_W"] = cache.r1.T @ dlogit[:, None]
    grads["dense2_b"] = np.array([dlogit.sum()])
    da1 = (dlogit[:, None] @ params["dense2_W"].T) * (cache.a1 > 0)
    dropped = cache.pooled * cache.drop_mask
    grads["dense1_W"] = dropped.T @ da1
    grads["dense1_b"] = da1.sum(axis=0)
    dpooled = (da1 @ params["dense1_W"].T) * cache.drop_mask

    T = cache.hs.shape[0] - 1
    if T == 0:
        return grads
    lengths = cache.lengths
    dh_out = np.zeros((T, B, H))
    if cache.pooling == "max":
        dpooled = np.where((lengths > 0)[:, None], dpooled, 0.0)
        b_idx, h_idx = np.meshgrid(np.arange(B), np.arange(H), indexing="ij")
        np.add.at(dh_out, (cache.pool_idx, b_idx, h_idx), dpooled)
    else:
        valid = np.arange(T)[:, None] < lengths[None, :]
        dh_out = valid[:, :, None] * (dpooled / np.maximum(lengths, 1)[:, None])[None]

    U = params["lstm_U"].reshape(4 * H, H)
    dz_all = np.empty((T, B, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        act = cache.gates[t]
        i, f, g, o = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        tc = np.tanh(cache.cs[t + 1])
        dh = dh_out[t] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H : 2 * H] = dc * cache.cs[t] * f * (1.0 - f)
        dz[:, 2 * H : 3 * H] = dc * i * (1.0 - g * g)
        dz[:, 3 * H :] = dh * tc * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ U

    h_prev = cache.hs[:-1]  # (T, B, H)
    dz_flat = dz_all.reshape(-1, 4 * H)
    grads["lstm_U"] = (dz_flat.T @ h_prev.reshape(-1, H)).reshape(4, H, H)
    x_tb = cache.x.transpose(1, 0, 2).reshape(-1, E)
    grads["lstm_W"] = (dz_flat.T @ x_tb).reshape(4, H, E)
    grads["lstm_b"] = dz_flat.sum(axis=0).reshape(4, H)
    W = params["lstm_W"].reshape(4 * H, E)
    dx = (dz_all @ W).transpose(1, 0, 2)  # (B, T, E)
    np.add.at(grads["embedding"], cache.ids[:, :T], dx)
    return grads


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw) -> "AdamState":
        return cls(zeros_like_params(params), zeros_like_params(params), **kw)


def adam_update(params, grads, state: AdamState, lr: float):
    """One bias-corrected Adam step. Inputs are left untouched."""
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_params, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_params, AdamState(new_m, new_v, t, b1, b2, state.eps)


def predict_proba(params, ids, batch_size: int = 512, pooling: str = "max") -> np.ndarray:
    ids = np.asarray(ids)
    out = [forward(params, ids[s : s + batch_size], pooling=pooling)[0]
           for s in range(0, len(ids), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def save_checkpoint(path, config: ModelConfig, params: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<B", CHECKPOINT_VERSION))
    cfg = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    buf.write(struct.pack("<I", len(PARAM_NAMES)))
    for name in PARAM_NAMES:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode("ascii")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise UsageError(f"{path}: not a model checkpoint")
    version = data[4]
    if version != CHECKPOINT_VERSION:
        raise UsageError(f"{path}: unsupported checkpoint version {version}")
    pos = 5
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    config = ModelConfig.from_dict(json.loads(data[pos : pos + n].decode("utf-8")))
    pos += n
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos : pos + nlen].decode("ascii")
        pos += nlen
        ndim = data[pos]
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape, dtype=np.int64)) * 8
        params[name] = np.frombuffer(data[pos : pos + size], dtype="<f8").reshape(shape).astype(np.float64)
        pos += size
    return config, params
