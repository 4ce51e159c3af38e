"""Spatial-temporal graph convolution encoder over keypoint clips.

Each layer mixes features across joints with the row-normalised adjacency,
projects channels, convolves along time per joint and adds a residual.  The
stack ends with pooling over joints, giving one feature vector per
(downsampled) frame.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .numerics import BatchNormState, Tensor


class ClipLengthError(ValueError):
    pass


@dataclass(frozen=True)
class StgcnConfig:
    channels: tuple[int, ...] = (16, 32, 32, 64)
    strides: tuple[int, ...] = (2, 2, 1, 1)
    kernel: int = 9
    pool: str = "mean"
    in_channels: int = 2

    def __post_init__(self):
        if len(self.channels) < 1 or len(self.channels) != len(self.strides):
            raise ValueError("channels and strides need one entry per layer")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError("temporal kernel must be a positive odd number")
        if self.pool not in ("mean", "max"):
            raise ValueError(f"unknown pooling {self.pool!r}")

    @property
    def num_layers(self) -> int:
        return len(self.channels)

    @property
    def out_channels(self) -> int:
        return self.channels[-1]

    @property
    def downsample(self) -> int:
        return int(np.prod(self.strides))

    def output_frames(self, frames: int) -> int:
        for s in self.strides:
            frames = -(-frames // s)
        return frames

    @classmethod
    def full_scale(cls) -> "StgcnConfig":
        return cls(channels=(64, 64, 64, 64, 128, 128, 128, 256, 256, 512),
                   strides=(1, 1, 1, 1, 2, 1, 1, 2, 1, 1))


def init_encoder_params(config: StgcnConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    params = {
        "bn.gamma": Tensor(np.ones(config.in_channels), requires_grad=True),
        "bn.beta": Tensor(np.zeros(config.in_channels), requires_grad=True),
    }
    c_in = config.in_channels
    for i, c_out in enumerate(config.channels):
        k = config.kernel
        params[f"layer{i}.w_spatial"] = Tensor(rng.standard_normal((c_in, c_out)) / np.sqrt(c_in), True)
        params[f"layer{i}.w_temporal"] = Tensor(
            rng.standard_normal((k, c_out, c_out)) / np.sqrt(k * c_out), True)
        params[f"layer{i}.b_temporal"] = Tensor(np.zeros(c_out), True)
        if c_in != c_out:
            params[f"layer{i}.w_residual"] = Tensor(rng.standard_normal((c_in, c_out)) / np.sqrt(c_in), True)
        c_in = c_out
    return params


def stgcn_layer(x, adjacency, params: dict[str, Tensor], index: int, stride: int = 1) -> Tensor:
    """``relu(tconv(A X W_S) + b + residual(X))`` for X of shape (B, T, V, C_in)."""
    x = nx.Tensor(x) if not isinstance(x, Tensor) else x
    a = Tensor(adjacency)
    if a.shape != (x.shape[2], x.shape[2]):
        raise nx.DimensionError(f"adjacency {a.shape} does not match {x.shape[2]} nodes")
    w_s = params[f"layer{index}.w_spatial"]
    if w_s.shape[0] <= w_s.shape[1]:
        y = nx.linear(nx.matmul(a, x), w_s)
    else:
        y = nx.matmul(a, nx.linear(x, w_s))
    y = nx.temporal_conv1d(y, params[f"layer{index}.w_temporal"], stride) + params[f"layer{index}.b_temporal"]
    res = x[:, ::stride] if stride > 1 else x
    proj = params.get(f"layer{index}.w_residual")
    if proj is not None:
        res = nx.linear(res, proj)
    return nx.relu(y + res)


def encode(coords, adjacency, params: dict[str, Tensor], bn: BatchNormState,
           config: StgcnConfig, training: bool = False) -> Tensor:
    """(B, T, V, 2) normalised coordinates -> pose features (B, T_v, C_v)."""
    x = coords if isinstance(coords, Tensor) else Tensor(coords)
    if x.ndim == 3:
        x = x.reshape((1,) + x.shape)
    if x.shape[1] < config.downsample:
        raise ClipLengthError(f"clip of {x.shape[1]} frames is shorter than the downsample factor {config.downsample}")
    h = nx.batch_norm_1d(x, params["bn.gamma"], params["bn.beta"], bn, training)
    for i, stride in enumerate(config.strides):
        h = stgcn_layer(h, adjacency, params, i, stride)
    if config.pool == "mean":
        return nx.mean(h, axis=2)
    return _max_over_nodes(h)


def _max_over_nodes(h: Tensor) -> Tensor:
    idx = np.argmax(h.data, axis=2)
    b, t, _, c = h.shape
    bi, ti, ci = np.meshgrid(np.arange(b), np.arange(t), np.arange(c), indexing="ij")
    return nx.getitem(h, (bi, ti, idx, ci))
