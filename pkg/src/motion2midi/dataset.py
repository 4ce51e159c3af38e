"""Synthetic paired (keypoint clip, token sequence) data from a toy keyboard.

The player's fingertip slides along a horizontal keyboard axis, so its x
position names the pitch, and presses down by a fixed depth for the length of
each note.  Everything else is a rest pose with a little smoothed jitter.
Notes, motion and jitter are all drawn from one seeded stream, so a seed fully
determines a sample, and :func:`oracle_decode` recovers the notes from the
motion by rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .midi import PAD, NoteEvent, tokenize
from .numerics import make_rng
from .pose import KeypointClip, SkeletonLayout, default_layout, normalize_clip

# stream key so dataset draws never collide with training-step streams
_SAMPLE_STREAM = 0x5A3D

_BODY_REST = {
    "Nose": (640, 200), "Neck": (640, 260), "RShoulder": (580, 262), "RElbow": (550, 340),
    "RWrist": (520, 410), "LShoulder": (700, 262), "LElbow": (730, 340), "LWrist": (760, 410),
    "MidHip": (640, 420), "RHip": (610, 420), "RKnee": (605, 520), "RAnkle": (600, 620),
    "LHip": (670, 420), "LKnee": (675, 520), "LAnkle": (680, 620), "REye": (628, 190),
    "LEye": (652, 190), "REar": (615, 195), "LEar": (665, 195), "LBigToe": (695, 640),
    "LSmallToe": (705, 635), "LHeel": (675, 630), "RBigToe": (585, 640), "RSmallToe": (575, 635),
    "RHeel": (605, 630),
}
_FINGERS = ("Thumb", "Index", "Middle", "Ring", "Pinky")


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ToyInstrumentSpec:
    pitch_range: tuple[int, int] = (48, 72)
    notes_per_clip: tuple[int, int] = (4, 16)
    clip_seconds: float = 6.0
    fps: float = 30.0
    note_seconds: tuple[float, float] = (0.2, 1.0)
    grid_seconds: float = 0.1
    velocity_range: tuple[int, int] = (48, 111)
    hand: str = "R"
    finger: str = "Index"
    keyboard_left: float = 420.0
    key_width: float = 8.0
    dip_depth: float = 12.0
    ramp_seconds: float = 0.04
    noise_px: float = 0.5

    def __post_init__(self):
        lo, hi = self.pitch_range
        if not 21 <= lo <= hi <= 108:
            raise ValueError(f"pitch range {self.pitch_range} outside the piano")
        if self.hand not in ("L", "R") or self.finger not in _FINGERS:
            raise ValueError(f"unknown hand/finger {self.hand}/{self.finger}")
        if self.notes_per_clip[0] < 1 or self.notes_per_clip[0] > self.notes_per_clip[1]:
            raise ValueError(f"bad notes_per_clip {self.notes_per_clip}")
        if self.ramp_seconds >= min(self.note_seconds[0], self.grid_seconds):
            raise ValueError("press ramps must be shorter than the shortest note and gap")

    @property
    def num_frames(self) -> int:
        return int(round(self.clip_seconds * self.fps))

    def grid_units(self, seconds: float) -> int:
        return int(round(seconds / self.grid_seconds))

    def key_x(self, pitch) -> np.ndarray:
        return self.keyboard_left + (np.asarray(pitch) - self.pitch_range[0]) * self.key_width

    def pitch_of_x(self, x: float) -> int:
        return int(round((x - self.keyboard_left) / self.key_width)) + self.pitch_range[0]


@dataclass
class PairedSample:
    seed: int
    notes: list[NoteEvent]
    tokens: list[int]
    clip: KeypointClip

    def model_input(self) -> np.ndarray:
        return normalize_clip(self.clip).coords


@dataclass
class Batch:
    coords: np.ndarray  # B x T x V x 2, normalised
    tokens: np.ndarray  # B x L, PAD-filled
    loss_mask: np.ndarray  # B x L, true where tokens[b, t] is a prediction target
    seeds: list[int] = field(default_factory=list)

    @property
    def size(self) -> int:
        return self.tokens.shape[0]

    def inputs(self) -> np.ndarray:
        return self.tokens[:, :-1]

    def targets(self) -> np.ndarray:
        return self.tokens[:, 1:]

    def target_mask(self) -> np.ndarray:
        return self.loss_mask[:, 1:]


# ---------------------------------------------------------------- geometry

def _hand_template(mirror: float) -> np.ndarray:
    """21 points relative to the wrist; fingers hang downwards (+y)."""
    pts = [(0.0, 0.0)]
    for f in range(5):
        base = (f - 2) * 7.0 * mirror
        for j in range(1, 5):
            pts.append((base + 0.6 * (f - 2) * j * mirror, 10.0 + 7.0 * j))
    return np.array(pts)


def rest_pose(layout: SkeletonLayout | None = None) -> np.ndarray:
    layout = layout or default_layout()
    coords = np.zeros((layout.num_nodes, 2))
    for name, xy in _BODY_REST.items():
        coords[layout.index(name)] = xy
    for side, mirror in (("R", 1.0), ("L", -1.0)):
        wrist = coords[layout.index(side + "Wrist")] + (0.0, 10.0)
        start = layout.index(side + "HandWrist")
        coords[start:start + 21] = wrist + _hand_template(mirror)
    return coords


def _finger_nodes(spec: ToyInstrumentSpec, layout: SkeletonLayout) -> list[int]:
    return [layout.index(f"{spec.hand}Hand{spec.finger}{j}") for j in range(1, 5)]


def fingertip_node(spec: ToyInstrumentSpec, layout: SkeletonLayout | None = None) -> int:
    return _finger_nodes(spec, layout or default_layout())[-1]


# ---------------------------------------------------------------- generation

def sample_notes(rng: np.random.Generator, spec: ToyInstrumentSpec) -> list[NoteEvent]:
    """Sequential notes on the time grid, ending at least one grid step before the clip does."""
    budget = spec.grid_units(spec.clip_seconds) - 1
    n = int(rng.integers(spec.notes_per_clip[0], spec.notes_per_clip[1] + 1))
    shortest, longest = spec.grid_units(spec.note_seconds[0]), spec.grid_units(spec.note_seconds[1])
    durations = rng.integers(shortest, longest + 1, size=n)
    if durations.sum() + n > budget:
        if n * (shortest + 1) > budget:
            raise ValueError("clip too short for the requested note count")
        while durations.sum() + n > budget:
            durations[int(np.argmax(durations))] -= 1
    slack = budget - int(durations.sum()) - n
    gaps = 1 + rng.multinomial(slack, np.full(n + 1, 1.0 / (n + 1)))[:n]
    pitches = rng.integers(spec.pitch_range[0], spec.pitch_range[1] + 1, size=n)
    velocity = int(rng.integers(spec.velocity_range[0], spec.velocity_range[1] + 1))

    notes = []
    t = 0
    for gap, dur, pitch in zip(gaps, durations, pitches):
        t += int(gap)
        on, off = t, t + int(dur)
        notes.append(NoteEvent(onset=round(on * spec.grid_seconds, 9), pitch=int(pitch),
                               offset=round(off * spec.grid_seconds, 9), velocity=velocity))
        t = off
    return notes


def _ramp(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def _smoothstep(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def press_envelope(times: np.ndarray, notes: Sequence[NoteEvent], ramp: float) -> np.ndarray:
    """0 when lifted, 1 when fully pressed; crosses 1/2 exactly at onsets and offsets."""
    env = np.zeros_like(times)
    for n in notes:
        down = _ramp((times - (n.onset - ramp / 2)) / ramp)
        up = _ramp(((n.offset + ramp / 2) - times) / ramp)
        env = np.maximum(env, np.minimum(down, up))
    return env


def fingertip_x(times: np.ndarray, notes: Sequence[NoteEvent], spec: ToyInstrumentSpec) -> np.ndarray:
    """Held over each key while pressed; slides between keys only while lifted."""
    if not notes:
        return np.full_like(times, float(spec.key_x(spec.pitch_range[0])))
    keys = spec.key_x([n.pitch for n in notes])
    x = np.full_like(times, keys[0])
    half = spec.ramp_seconds / 2
    for prev, nxt, a, b in zip(notes, notes[1:], keys, keys[1:]):
        start, end = prev.offset + half, nxt.onset - half
        x += (b - a) * _smoothstep((times - start) / (end - start))
    return x


def render_motion(notes: Sequence[NoteEvent], spec: ToyInstrumentSpec, rng: np.random.Generator,
                  layout: SkeletonLayout | None = None) -> KeypointClip:
    layout = layout or default_layout()
    frames = spec.num_frames
    times = np.arange(frames) / spec.fps
    rest = rest_pose(layout)
    coords = np.repeat(rest[None], frames, axis=0)

    finger = _finger_nodes(spec, layout)
    tip = finger[-1]
    hand_start = layout.index(spec.hand + "HandWrist")
    shift = fingertip_x(times, notes, spec) - rest[tip, 0]
    coords[:, hand_start:hand_start + 21, 0] += shift[:, None]
    env = press_envelope(times, notes, spec.ramp_seconds)
    for weight, node in zip((0.25, 0.5, 0.75, 1.0), finger):
        coords[:, node, 1] += weight * spec.dip_depth * env

    # temporally smoothed jitter on every node but the fingertip
    raw = rng.standard_normal((frames + 4, layout.num_nodes, 2)) * spec.noise_px
    jitter = np.lib.stride_tricks.sliding_window_view(raw, 5, axis=0).mean(axis=-1)
    jitter[:, tip] = 0.0
    coords += jitter
    return KeypointClip(coords, np.ones((frames, layout.num_nodes)), spec.fps)


def generate_sample(seed: int, spec: ToyInstrumentSpec = ToyInstrumentSpec(),
                    layout: SkeletonLayout | None = None) -> PairedSample:
    rng = make_rng(seed, _SAMPLE_STREAM)
    notes = sample_notes(rng, spec)
    clip = render_motion(notes, spec, rng, layout)
    return PairedSample(seed=seed, notes=notes, tokens=tokenize(notes), clip=clip)


def oracle_decode(clip: KeypointClip, spec: ToyInstrumentSpec = ToyInstrumentSpec(),
                  layout: SkeletonLayout | None = None, velocity: int = 64) -> list[NoteEvent]:
    """Recover notes by thresholding the fingertip dip at half depth.

    A note starts at the first frame past the threshold and ends at the first
    frame back under it; its pitch is read from the fingertip x at onset.
    """
    layout = layout or default_layout()
    tip = fingertip_node(spec, layout)
    rest_y = rest_pose(layout)[tip, 1]
    pressed = (clip.coords[:, tip, 1] - rest_y) > spec.dip_depth / 2
    notes = []
    frames = clip.num_frames
    f = 0
    while f < frames:
        if not pressed[f]:
            f += 1
            continue
        start = f
        while f < frames and pressed[f]:
            f += 1
        pitch = spec.pitch_of_x(clip.coords[start, tip, 0])
        notes.append(NoteEvent(onset=start / clip.fps, pitch=pitch, offset=f / clip.fps, velocity=velocity))
    return notes


# ---------------------------------------------------------------- splits and batches

def make_splits(n_train: int, n_val: int, base_seed: int, val_offset: int | None = None
                ) -> tuple[list[int], list[int]]:
    """Contiguous seed ranges; validation starts ``val_offset`` seeds after training."""
    if n_train < 0 or n_val < 0:
        raise SplitError("split sizes must be non-negative")
    offset = n_train if val_offset is None else val_offset
    train = list(range(base_seed, base_seed + n_train))
    val = list(range(base_seed + offset, base_seed + offset + n_val))
    if set(train) & set(val):
        raise SplitError(f"train seeds {train[0]}..{train[-1]} overlap validation seeds {val[0]}..{val[-1]}")
    return train, val


def collate(samples: Sequence[PairedSample], coords: Sequence[np.ndarray] | None = None) -> Batch:
    if not samples:
        raise ValueError("cannot collate an empty batch")
    width = max(len(s.tokens) for s in samples)
    tokens = np.full((len(samples), width), PAD, dtype=np.int64)
    for i, s in enumerate(samples):
        tokens[i, :len(s.tokens)] = s.tokens
    mask = tokens != PAD
    mask[:, 0] = False
    arrays = coords if coords is not None else [s.model_input() for s in samples]
    frames = {a.shape for a in arrays}
    if len(frames) != 1:
        raise ValueError(f"clips in a batch must share one shape, got {sorted(frames)}")
    return Batch(np.stack(arrays), tokens, mask, [s.seed for s in samples])


def batchify(samples: Sequence[PairedSample], batch_size: int) -> list[Batch]:
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    return [collate(samples[i:i + batch_size]) for i in range(0, len(samples), batch_size)]


def unbatch(batch: Batch) -> list[list[int]]:
    return [[int(t) for t in row if t != PAD] for row in batch.tokens]
