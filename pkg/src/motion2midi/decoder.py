"""Autoregressive transformer decoder over performance-event tokens.

Each block runs masked self-attention with learned relative-position
embeddings, cross-attention from tokens to pose features, and a ReLU
feed-forward layer; every sub-layer is followed by a residual add and layer
norm.  There are no absolute position encodings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .midi import vocab
from .numerics import Tensor


class SequenceLengthError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    num_blocks: int = 2
    d_model: int = 128
    num_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 1024
    max_relative_distance: int | None = None
    pose_channels: int = 64
    vocab_size: int = vocab.VOCAB_SIZE
    attention: str = "relative"  # or "vanilla"

    def __post_init__(self):
        if self.d_model % self.num_heads:
            raise ValueError(f"d_model {self.d_model} is not divisible by {self.num_heads} heads")
        if min(self.num_blocks, self.d_model, self.num_heads, self.d_ff, self.max_seq_len) < 1:
            raise ValueError("decoder sizes must be positive")
        if self.attention not in ("relative", "vanilla"):
            raise ValueError(f"unknown attention kind {self.attention!r}")
        if self.max_relative_distance is not None and self.max_relative_distance < 1:
            raise ValueError("max_relative_distance must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.num_heads

    @property
    def relative_span(self) -> int:
        return self.max_relative_distance or self.max_seq_len

    @classmethod
    def full_scale(cls) -> "DecoderConfig":
        return cls(num_blocks=6, d_model=512, num_heads=8, d_ff=1024, pose_channels=512)


def init_decoder_params(config: DecoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d, f, c = config.d_model, config.d_ff, config.pose_channels

    def dense(fan_in, *shape, std=None):
        scale = std if std is not None else 1.0 / math.sqrt(fan_in)
        return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)

    def const(value, *shape):
        return Tensor(np.full(shape, float(value)), requires_grad=True)

    params = {"embed": dense(1, config.vocab_size, d)}
    for b in range(config.num_blocks):
        p = f"block{b}."
        for name in ("wq", "wk", "wv", "wo"):
            params[p + "self." + name] = dense(d, d, d)
        if config.attention == "relative":
            params[p + "self.rel"] = dense(config.head_dim, config.num_heads,
                                           2 * config.relative_span - 1, config.head_dim)
        params[p + "cross.wm"] = dense(d, d, d)
        params[p + "cross.wp"] = dense(c, c, d)
        params[p + "cross.wv"] = dense(c, c, d)
        params[p + "cross.wo"] = dense(d, d, d)
        params[p + "ff.w1"] = dense(d, d, f)
        params[p + "ff.b1"] = const(0, f)
        params[p + "ff.w2"] = dense(f, f, d)
        params[p + "ff.b2"] = const(0, d)
        for ln in ("ln1", "ln2", "ln3"):
            params[p + ln + ".gamma"] = const(1, d)
            params[p + ln + ".beta"] = const(0, d)
    # small output weights keep the untrained distribution close to uniform
    params["out.w"] = dense(d, d, config.vocab_size, std=0.02)
    params["out.b"] = const(0, config.vocab_size)
    return params


# ---------------------------------------------------------------- attention kernels

def causal_mask(length: int) -> np.ndarray:
    """True where query i may attend to key j, i.e. j <= i."""
    return np.tril(np.ones((length, length), dtype=bool))


def _attend(logits: Tensor, v, mask) -> Tensor:
    if mask is not None:
        logits = nx.masked_fill(logits, ~np.asarray(mask, dtype=bool), -np.inf)
    return nx.matmul(nx.softmax(logits, axis=-1), v)


def scaled_attention(q, k, v, mask=None) -> Tensor:
    """softmax(q k^T / sqrt(d_k)) v over the last two axes; ``mask`` is True where allowed."""
    q = nx.as_tensor(q)
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = nx.matmul(q, nx.swapaxes(k, -1, -2)) * scale
    return _attend(logits, v, mask)


def _distance_rows(length: int, table_size: int) -> np.ndarray:
    """Table rows for distances -(length-1) .. length-1, clipped to the table edge."""
    span = (table_size + 1) // 2
    dist = np.arange(-(length - 1), length)
    return np.clip(dist, -(span - 1), span - 1) + span - 1


def relative_logits_naive(q, table) -> Tensor:
    """Reference: out[..., i, j] = q_i . table[h, clip(j - i)] by explicit gather."""
    length = q.shape[-2]
    span = (table.shape[-2] + 1) // 2
    dist = np.arange(length)[None, :] - np.arange(length)[:, None]
    rows = np.clip(dist, -(span - 1), span - 1) + span - 1
    emb = nx.getitem(table, (slice(None), rows))  # (H, T, T, D)
    return nx.sum_(nx.mul(nx.reshape(q, q.shape[:-1] + (1, q.shape[-1])), emb), axis=-1)


def relative_logits_skew(q, table) -> Tensor:
    """Same values as :func:`relative_logits_naive` without a T x T x D tensor.

    ``q @ E^T`` gives a (T, 2T-1) matrix indexed by distance; reading its
    flattened buffer with row pitch 2T-2 from offset T-1 lines every query up
    with its own distances.
    """
    length = q.shape[-2]
    emb = nx.getitem(table, (slice(None), _distance_rows(length, table.shape[-2])))
    s = nx.matmul(q, nx.swapaxes(emb, -1, -2))  # (..., T, 2T-1)
    if length == 1:
        return s
    lead = s.shape[:-2]
    flat = nx.reshape(s, lead + (length * (2 * length - 1),))
    start = length - 1
    window = nx.getitem(flat, (Ellipsis, slice(start, start + length * (2 * length - 2))))
    grid = nx.reshape(window, lead + (length, 2 * length - 2))
    return nx.getitem(grid, (Ellipsis, slice(0, length)))


def relative_attention(q, k, v, table, mask=None, method: str = "skew") -> Tensor:
    """softmax((q k^T + q E_rel^T) / sqrt(d_k)) v with ``table`` of shape (H, 2R-1, d_k)."""
    q, table = nx.as_tensor(q), nx.as_tensor(table)
    rel = relative_logits_skew(q, table) if method == "skew" else relative_logits_naive(q, table)
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = (nx.matmul(q, nx.swapaxes(k, -1, -2)) + rel) * scale
    return _attend(logits, v, mask)


# ---------------------------------------------------------------- sub-layers

def _split_heads(x: Tensor, heads: int) -> Tensor:
    b, t, d = x.shape
    return nx.transpose(nx.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, t, dk = x.shape
    return nx.reshape(nx.transpose(x, (0, 2, 1, 3)), (b, t, h * dk))


def self_attention(x: Tensor, params: dict, prefix: str, config: DecoderConfig) -> Tensor:
    h = config.num_heads
    q = _split_heads(nx.linear(x, params[prefix + "wq"]), h)
    k = _split_heads(nx.linear(x, params[prefix + "wk"]), h)
    v = _split_heads(nx.linear(x, params[prefix + "wv"]), h)
    mask = causal_mask(x.shape[1])
    if config.attention == "relative":
        out = relative_attention(q, k, v, params[prefix + "rel"], mask)
    else:
        out = scaled_attention(q, k, v, mask)
    return nx.linear(_merge_heads(out), params[prefix + "wo"])


def cross_attention(m, pose, params: dict, prefix: str, num_heads: int) -> Tensor:
    """Token states (B, T_m, d) attend over all pose frames (B, T_v, C_v); no mask."""
    m = m if isinstance(m, Tensor) else Tensor(m)
    pose = pose if isinstance(pose, Tensor) else Tensor(pose)
    q = _split_heads(nx.linear(m, params[prefix + "wm"]), num_heads)
    k = _split_heads(nx.linear(pose, params[prefix + "wp"]), num_heads)
    v = _split_heads(nx.linear(pose, params[prefix + "wv"]), num_heads)
    return nx.linear(_merge_heads(scaled_attention(q, k, v)), params[prefix + "wo"])


def feed_forward(x: Tensor, params: dict, prefix: str) -> Tensor:
    hidden = nx.relu(nx.linear(x, params[prefix + "w1"], params[prefix + "b1"]))
    return nx.linear(hidden, params[prefix + "w2"], params[prefix + "b2"])


def _add_norm(x: Tensor, y: Tensor, params: dict, prefix: str) -> Tensor:
    return nx.layer_norm(x + y, params[prefix + ".gamma"], params[prefix + ".beta"])


def decoder_forward(tokens, pose, params: dict, config: DecoderConfig) -> Tensor:
    """Logits (B, T_m, L); position t scores the token at t + 1.

    ``tokens`` is (B, T_m) or (T_m,) integer indices, ``pose`` is
    (B, T_v, C_v) or (T_v, C_v).  Unbatched inputs give unbatched logits.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    pose = pose if isinstance(pose, Tensor) else Tensor(pose)
    squeeze = tokens.ndim == 1
    if squeeze:
        tokens = tokens[None]
    if pose.ndim == 2:
        pose = nx.reshape(pose, (1,) + pose.shape)
    if tokens.shape[1] > config.max_seq_len:
        raise SequenceLengthError(f"sequence of {tokens.shape[1]} tokens exceeds max_seq_len {config.max_seq_len}")
    if tokens.shape[1] < 1:
        raise SequenceLengthError("empty token sequence")
    if pose.shape[0] != tokens.shape[0]:
        raise nx.DimensionError(f"pose batch {pose.shape[0]} != token batch {tokens.shape[0]}")

    x = nx.embedding_lookup(params["embed"], tokens)
    for b in range(config.num_blocks):
        p = f"block{b}."
        x = _add_norm(x, self_attention(x, params, p + "self.", config), params, p + "ln1")
        x = _add_norm(x, cross_attention(x, pose, params, p + "cross.", config.num_heads), params, p + "ln2")
        x = _add_norm(x, feed_forward(x, params, p + "ff."), params, p + "ln3")
    logits = nx.linear(x, params["out.w"], params["out.b"])
    return nx.reshape(logits, logits.shape[1:]) if squeeze else logits
