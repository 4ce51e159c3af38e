"""Teacher-forced training of the pose encoder and token decoder, plus checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import numerics as nx
from .dataset import Batch, PairedSample, ToyInstrumentSpec, collate, generate_sample, make_splits
from .decoder import DecoderConfig, decoder_forward, init_decoder_params
from .encoder import StgcnConfig, encode, init_encoder_params
from .midi import BOS, PAD, VOCAB_SIZE
from .numerics import AdamState, BatchNormState, LrSchedule, Tape, Tensor, TrainingDivergenceError, make_rng
from .pose import AffineRanges, KeypointClip, apply_affine, build_adjacency, default_layout, sample_affine

CHECKPOINT_MAGIC = "motion2midi-checkpoint"
CHECKPOINT_VERSION = 1

# stream keys for make_rng(seed, key, ...)
_INIT_STREAM = 1
_EPOCH_STREAM = 2
_AUGMENT_STREAM = 3


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    encoder: StgcnConfig = StgcnConfig()
    decoder: DecoderConfig = DecoderConfig()
    spec: ToyInstrumentSpec = ToyInstrumentSpec()
    affine: AffineRanges = AffineRanges()
    schedule: LrSchedule = LrSchedule()
    batch_size: int = 8
    steps: int = 3000
    eval_interval: int = 500
    seed: int = 0
    clip_norm: float = 1.0
    augment: bool = True
    zero_hands: bool = False
    n_train: int = 512
    n_val: int = 64
    data_seed: int = 1_000_000

    def __post_init__(self):
        if min(self.batch_size, self.steps, self.eval_interval, self.n_train) < 1:
            raise ValueError("batch_size, steps, eval_interval and n_train must be positive")
        if self.eval_interval > self.steps:
            raise ValueError(f"eval_interval {self.eval_interval} exceeds steps {self.steps}")
        if self.batch_size > self.n_train:
            raise ValueError("batch_size exceeds the training set")
        if self.decoder.pose_channels != self.encoder.out_channels:
            raise ValueError(f"decoder pose_channels {self.decoder.pose_channels} != "
                             f"encoder output channels {self.encoder.out_channels}")

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        raw = json.loads(text)

        def build(kind, values):
            # JSON turns tuples into lists
            return kind(**{k: tuple(v) if isinstance(v, list) else v for k, v in values.items()})

        return cls(
            encoder=build(StgcnConfig, raw.pop("encoder")),
            decoder=build(DecoderConfig, raw.pop("decoder")),
            spec=build(ToyInstrumentSpec, raw.pop("spec")),
            affine=build(AffineRanges, raw.pop("affine")),
            schedule=build(LrSchedule, raw.pop("schedule")),
            **raw,
        )

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()


# ---------------------------------------------------------------- model

@dataclass
class Model:
    encoder_config: StgcnConfig
    decoder_config: DecoderConfig
    encoder_params: dict[str, Tensor]
    decoder_params: dict[str, Tensor]
    bn: BatchNormState
    adjacency: np.ndarray = field(default_factory=lambda: build_adjacency(default_layout()))
    hand_nodes: tuple[int, ...] = field(default_factory=lambda: tuple(default_layout().hand_nodes()))

    @classmethod
    def create(cls, encoder_config: StgcnConfig, decoder_config: DecoderConfig, seed: int) -> "Model":
        rng = make_rng(seed, _INIT_STREAM)
        enc = init_encoder_params(encoder_config, rng)
        dec = init_decoder_params(decoder_config, rng)
        return cls(encoder_config, decoder_config, enc, dec, BatchNormState(encoder_config.in_channels))

    def parameters(self) -> dict[str, Tensor]:
        named = {"enc." + k: v for k, v in self.encoder_params.items()}
        named.update({"dec." + k: v for k, v in self.decoder_params.items()})
        return named

    def encode(self, coords: np.ndarray, training: bool = False, zero_hands: bool = False) -> Tensor:
        if zero_hands:
            coords = np.array(coords, copy=True)
            coords[..., list(self.hand_nodes), :] = 0.0
        return encode(coords, self.adjacency, self.encoder_params, self.bn, self.encoder_config, training)

    def logits(self, coords: np.ndarray, tokens: np.ndarray, training: bool = False,
               zero_hands: bool = False) -> Tensor:
        pose = self.encode(coords, training, zero_hands)
        return decoder_forward(tokens, pose, self.decoder_params, self.decoder_config)


def batch_loss(model: Model, batch: Batch, training: bool = False, zero_hands: bool = False) -> Tensor:
    logits = model.logits(batch.coords, batch.inputs(), training, zero_hands)
    return nx.cross_entropy_loss(logits, batch.targets(), batch.target_mask())


# ---------------------------------------------------------------- optimisation

@dataclass
class TrainState:
    config: TrainConfig
    model: Model
    opt: AdamState
    step: int = 0

    @classmethod
    def fresh(cls, config: TrainConfig) -> "TrainState":
        return cls(config, Model.create(config.encoder, config.decoder, config.seed), AdamState())


def train_step(state: TrainState, batch: Batch) -> tuple[float, float]:
    """One update at step ``state.step + 1``; returns (loss, pre-clip gradient norm)."""
    step = state.step + 1
    params = state.model.parameters()
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = batch_loss(state.model, batch, training=True, zero_hands=state.config.zero_hands)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDivergenceError(f"non-finite loss {value}", step)
        tape.backward(loss)
    grads = {name: p.grad for name, p in params.items() if p.grad is not None}
    grads, norm = nx.clip_by_global_norm(grads, state.config.clip_norm)
    try:
        nx.adam_step(params, grads, state.opt, nx.lr_at(step, state.config.schedule))
    except TrainingDivergenceError as exc:
        raise TrainingDivergenceError(str(exc), step) from None
    for p in params.values():
        p.grad = None
    state.step = step
    return value, norm


class TrainingData:
    """Normalised training clips plus the deterministic batch order."""

    def __init__(self, config: TrainConfig, samples: Sequence[PairedSample] | None = None):
        self.config = config
        if samples is None:
            seeds, _ = make_splits(config.n_train, config.n_val, config.data_seed)
            samples = [generate_sample(s, config.spec) for s in seeds]
        self.samples = list(samples)
        self.coords = [s.model_input() for s in self.samples]
        self.per_epoch = len(self.samples) // config.batch_size

    def order(self, epoch: int) -> np.ndarray:
        return make_rng(self.config.seed, _EPOCH_STREAM, epoch).permutation(len(self.samples))

    def batch(self, step: int) -> Batch:
        """Batch consumed by 1-based ``step``; partial tail batches are skipped."""
        epoch, slot = divmod(step - 1, self.per_epoch)
        idx = self.order(epoch)[slot * self.config.batch_size:(slot + 1) * self.config.batch_size]
        coords = [self.coords[i] for i in idx]
        if self.config.augment:
            rng = make_rng(self.config.seed, _AUGMENT_STREAM, step)
            coords = [_augment(c, sample_affine(rng, self.config.affine)) for c in coords]
        return collate([self.samples[i] for i in idx], coords)


def _augment(coords: np.ndarray, params) -> np.ndarray:
    clip = KeypointClip(coords, np.ones(coords.shape[:2]))
    return apply_affine(clip, params).coords


def validation_samples(config: TrainConfig) -> list[PairedSample]:
    _, seeds = make_splits(config.n_train, config.n_val, config.data_seed)
    return [generate_sample(s, config.spec) for s in seeds]


def train(config: TrainConfig, state: TrainState | None = None, until: int | None = None,
          data: TrainingData | None = None, val: Sequence[PairedSample] | None = None,
          log: Callable[[dict], None] | None = None,
          on_checkpoint: Callable[[TrainState], None] | None = None) -> TrainState:
    """Run (or resume) training up to step ``until`` (default ``config.steps``)."""
    state = state or TrainState.fresh(config)
    if state.config.config_hash() != config.config_hash():
        raise CheckpointError("resumed state was trained with a different configuration")
    data = data or TrainingData(config)
    until = config.steps if until is None else until
    while state.step < until:
        loss, norm = train_step(state, data.batch(state.step + 1))
        record = {"step": state.step, "lr": nx.lr_at(state.step, config.schedule),
                  "loss": loss, "grad_norm": norm}
        if val is not None and state.step % config.eval_interval == 0:
            record["val_nll"] = evaluate_nll(state.model, val)
        if log:
            log(record)
        if on_checkpoint and state.step % config.eval_interval == 0:
            on_checkpoint(state)
    return state


# ---------------------------------------------------------------- evaluation

def evaluate_nll(model: Model, samples: Sequence[PairedSample], batch_size: int = 16,
                 zero_hands: bool = False, coords: Sequence[np.ndarray] | None = None) -> float:
    """Teacher-forced mean NLL per target token (nats) over non-PAD targets.

    ``coords`` overrides the clips paired with ``samples`` (used for the
    shuffled-pairing control).
    """
    if not samples:
        raise ValueError("no samples to evaluate")
    inputs = list(coords) if coords is not None else [s.model_input() for s in samples]
    total, count = 0.0, 0
    for i in range(0, len(samples), batch_size):
        batch = collate(samples[i:i + batch_size], inputs[i:i + batch_size])
        n = int(batch.target_mask().sum())
        total += float(batch_loss(model, batch, zero_hands=zero_hands).data) * n
        count += n
    return total / count


def unigram_nll(train_samples: Iterable[PairedSample], val_samples: Iterable[PairedSample]) -> float:
    """NLL of validation targets under add-one smoothed training token frequencies."""
    counts = np.ones(VOCAB_SIZE)
    for s in train_samples:
        np.add.at(counts, np.asarray(s.tokens[1:]), 1)
    counts[[BOS, PAD]] = 0.0
    live = counts > 0
    logp = np.full(VOCAB_SIZE, -np.inf)
    logp[live] = np.log(counts[live] / counts.sum())
    targets = np.concatenate([np.asarray(s.tokens[1:]) for s in val_samples])
    return float(-logp[targets].mean())


# ---------------------------------------------------------------- checkpoints

def _state_arrays(state: TrainState) -> list[tuple[str, np.ndarray]]:
    arrays = [("param/" + k, p.data) for k, p in sorted(state.model.parameters().items())]
    arrays += [("adam.m/" + k, v) for k, v in sorted(state.opt.m.items())]
    arrays += [("adam.v/" + k, v) for k, v in sorted(state.opt.v.items())]
    arrays += [("bn.running_mean", state.model.bn.running_mean), ("bn.running_var", state.model.bn.running_var)]
    return arrays


def checkpoint_bytes(state: TrainState) -> bytes:
    """Text manifest, ``end`` line, then raw little-endian float64 buffers in manifest order."""
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
             f"config_hash {state.config.config_hash()}",
             f"step {state.step}",
             f"rng seed={state.config.seed} step={state.step}",
             f"adam_t {state.opt.t}",
             f"config {state.config.to_json()}"]
    payload = bytearray()
    for name, arr in _state_arrays(state):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        shape = ",".join(map(str, arr.shape)) or "scalar"
        lines.append(f"tensor {name} {shape} {len(payload)} {len(raw)}")
        payload += raw
    lines.append(f"payload_sha256 {hashlib.sha256(payload).hexdigest()}")
    lines.append("end")
    return ("\n".join(lines) + "\n").encode() + bytes(payload)


def atomic_write(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def save_checkpoint(path: str | os.PathLike, state: TrainState) -> None:
    atomic_write(path, checkpoint_bytes(state))


def parse_checkpoint(data: bytes, expected_hash: str | None = None) -> TrainState:
    marker = data.find(b"\nend\n")
    if marker < 0:
        raise CheckpointError("manifest terminator not found (truncated or not a checkpoint)")
    try:
        header = data[:marker].decode("utf-8").split("\n")
    except UnicodeDecodeError:
        raise CheckpointError("manifest is not valid UTF-8") from None
    payload = data[marker + len(b"\nend\n"):]
    if not header or header[0].split(" ")[0] != CHECKPOINT_MAGIC:
        raise CheckpointError("not a motion2midi checkpoint")
    version = header[0].split(" ")[-1]
    if version != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"checkpoint format version {version} != supported {CHECKPOINT_VERSION}")

    fields: dict[str, str] = {}
    tensors: list[tuple[str, tuple[int, ...], int, int]] = []
    for line in header[1:]:
        key, _, rest = line.partition(" ")
        if key == "tensor":
            name, shape, offset, nbytes = rest.split(" ")
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split(","))
            tensors.append((name, dims, int(offset), int(nbytes)))
        else:
            fields[key] = rest
    for key in ("config_hash", "step", "adam_t", "config", "payload_sha256"):
        if key not in fields:
            raise CheckpointError(f"manifest lacks {key}")
    expected_size = sum(t[3] for t in tensors)
    if len(payload) != expected_size:
        raise CheckpointError(f"payload holds {len(payload)} bytes, manifest declares {expected_size}")
    if hashlib.sha256(payload).hexdigest() != fields["payload_sha256"]:
        raise CheckpointError("payload checksum mismatch")
    if expected_hash is not None and fields["config_hash"] != expected_hash:
        raise CheckpointError(f"config hash {fields['config_hash'][:12]} does not match expected {expected_hash[:12]}")

    config = TrainConfig.from_json(fields["config"])
    if config.config_hash() != fields["config_hash"]:
        raise CheckpointError("embedded config does not match its hash")
    arrays = {}
    for name, dims, offset, nbytes in tensors:
        arrays[name] = np.frombuffer(payload, dtype="<f8", count=nbytes // 8, offset=offset).reshape(dims).copy()

    state = TrainState.fresh(config)
    for name, p in state.model.parameters().items():
        key = "param/" + name
        if key not in arrays or arrays[key].shape != p.shape:
            raise CheckpointError(f"checkpoint lacks parameter {name} with shape {p.shape}")
        p.data = arrays[key]
    state.opt.t = int(fields["adam_t"])
    for name in state.model.parameters():
        if "adam.m/" + name in arrays:
            state.opt.m[name] = arrays["adam.m/" + name]
            state.opt.v[name] = arrays["adam.v/" + name]
    state.model.bn.running_mean = arrays["bn.running_mean"]
    state.model.bn.running_var = arrays["bn.running_var"]
    state.step = int(fields["step"])
    return state


def load_checkpoint(path: str | os.PathLike, expected_hash: str | None = None) -> TrainState:
    return parse_checkpoint(Path(path).read_bytes(), expected_hash)
