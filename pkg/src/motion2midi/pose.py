"""Skeleton layouts, keypoint JSON ingestion, adjacency and clip transforms."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BODY_POINTS = 25
HAND_POINTS = 21
DEFAULT_LAYOUT_FILE = "openpose_body25_hands.txt"


class LayoutError(ValueError):
    pass


class KeypointSchemaError(ValueError):
    pass


class DegenerateClipError(ValueError):
    pass


@dataclass(frozen=True)
class SkeletonLayout:
    names: tuple[str, ...]
    edges: tuple[tuple[int, int], ...]

    @property
    def num_nodes(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def hand_nodes(self) -> list[int]:
        return [i for i, n in enumerate(self.names) if n.startswith(("LHand", "RHand"))]


def parse_layout(text: str) -> SkeletonLayout:
    """Read ``node <name>`` / ``edge <a> <b>`` lines; ``#`` starts a comment."""
    names: list[str] = []
    pairs: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "node" and len(parts) == 2:
            names.append(parts[1])
        elif parts[0] == "edge" and len(parts) == 3:
            pairs.append((parts[1], parts[2]))
        else:
            raise LayoutError(f"line {lineno}: cannot parse {raw!r}")
    if len(set(names)) != len(names):
        raise LayoutError("duplicate node names")
    lookup = {n: i for i, n in enumerate(names)}
    edges = []
    for a, b in pairs:
        if a not in lookup or b not in lookup:
            raise LayoutError(f"edge {a}-{b} names an unknown node")
        edges.append((lookup[a], lookup[b]))
    return SkeletonLayout(tuple(names), tuple(edges))


def default_layout() -> SkeletonLayout:
    text = resources.files("motion2midi.data").joinpath(DEFAULT_LAYOUT_FILE).read_text()
    return parse_layout(text)


def build_adjacency(layout: SkeletonLayout) -> np.ndarray:
    """Binary adjacency plus self-loops, each row divided by its sum."""
    v = layout.num_nodes
    if v == 0:
        raise LayoutError("layout has no nodes")
    a = np.eye(v)
    for i, j in layout.edges:
        if not (0 <= i < v and 0 <= j < v):
            raise LayoutError(f"edge ({i}, {j}) outside [0, {v})")
        a[i, j] = a[j, i] = 1.0
    seen = {0}
    frontier = [0]
    while frontier:
        i = frontier.pop()
        for j in np.nonzero(a[i])[0]:
            if j not in seen:
                seen.add(int(j))
                frontier.append(int(j))
    if len(seen) != v:
        raise LayoutError(f"layout is disconnected: {v - len(seen)} nodes unreachable from node 0")
    return a / a.sum(axis=1, keepdims=True)


@dataclass
class KeypointClip:
    coords: np.ndarray  # T x V x 2
    confidence: np.ndarray  # T x V
    fps: float = 30.0

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.confidence = np.asarray(self.confidence, dtype=np.float64)
        t, v, c = self.coords.shape
        if t < 1 or c != 2 or self.confidence.shape != (t, v):
            raise KeypointSchemaError(
                f"bad clip shapes coords={self.coords.shape} confidence={self.confidence.shape}")

    @property
    def num_frames(self) -> int:
        return self.coords.shape[0]

    @property
    def num_nodes(self) -> int:
        return self.coords.shape[1]


# ---------------------------------------------------------------- keypoint JSON

_ARRAYS = (
    ("pose_keypoints_2d", BODY_POINTS),
    ("hand_left_keypoints_2d", HAND_POINTS),
    ("hand_right_keypoints_2d", HAND_POINTS),
)


def parse_keypoint_frame(doc: bytes | str, frame: int = 0) -> tuple[np.ndarray, np.ndarray] | None:
    """One per-frame document -> (67 x 2 coords, 67 confidences), or None if no person."""
    try:
        data = json.loads(doc)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise KeypointSchemaError(f"frame {frame}: invalid JSON ({exc})") from None
    people = data.get("people") if isinstance(data, dict) else None
    if not people:
        return None
    person = people[0]
    chunks = []
    for key, points in _ARRAYS:
        values = person.get(key)
        if values is None or len(values) != 3 * points:
            got = "missing" if values is None else len(values)
            raise KeypointSchemaError(f"frame {frame}: {key} must hold {3 * points} floats, got {got}")
        chunks.append(np.asarray(values, dtype=np.float64).reshape(points, 3))
    triples = np.concatenate(chunks)
    return triples[:, :2].copy(), np.clip(triples[:, 2], 0.0, 1.0)


def parse_keypoint_json(docs: Iterable[bytes | str], fps: float = 30.0) -> KeypointClip:
    """Concatenate per-frame documents; a frame without a person repeats the
    previous coordinates with zero confidence."""
    coords, conf = [], []
    nodes = BODY_POINTS + 2 * HAND_POINTS
    for i, doc in enumerate(docs):
        parsed = parse_keypoint_frame(doc, i)
        if parsed is None:
            prev = coords[-1] if coords else np.zeros((nodes, 2))
            coords.append(prev.copy())
            conf.append(np.zeros(nodes))
        else:
            coords.append(parsed[0])
            conf.append(parsed[1])
    if not coords:
        raise KeypointSchemaError("no frames")
    return KeypointClip(np.stack(coords), np.stack(conf), fps)


def load_keypoint_dir(path: str | Path, fps: float = 30.0) -> KeypointClip:
    files = sorted(Path(path).glob("*.json"))
    if not files:
        raise FileNotFoundError(f"no keypoint JSON files in {path}")
    return parse_keypoint_json((f.read_bytes() for f in files), fps)


def frame_to_json(coords: np.ndarray, confidence: np.ndarray) -> str:
    """Inverse of :func:`parse_keypoint_frame` for the 67-node layout."""
    triples = np.concatenate([coords, confidence[:, None]], axis=1)
    person = {}
    start = 0
    for key, points in _ARRAYS:
        person[key] = [float(x) for x in triples[start:start + points].reshape(-1)]
        start += points
    return json.dumps({"version": 1.3, "people": [person]}, separators=(",", ":"))


# ---------------------------------------------------------------- transforms

def normalize_clip(clip: KeypointClip) -> KeypointClip:
    """Centre confident keypoints on the origin and scale their RMS radius to 1."""
    live = clip.confidence > 0
    if not live.any():
        raise DegenerateClipError("every keypoint has zero confidence")
    pts = clip.coords[live]
    centre = pts.mean(axis=0)
    rms = math.sqrt(float(np.mean(np.sum((pts - centre) ** 2, axis=1))))
    if rms == 0.0:
        raise DegenerateClipError("confident keypoints are all at one location")
    return replace(clip, coords=(clip.coords - centre) / rms, confidence=clip.confidence.copy())


@dataclass(frozen=True)
class AffineRanges:
    rotation_deg: float = 10.0
    scale: tuple[float, float] = (0.9, 1.1)
    translation: float = 0.1


@dataclass(frozen=True)
class AffineParams:
    theta: float = 0.0
    scale: float = 1.0
    shift: tuple[float, float] = (0.0, 0.0)


def sample_affine(rng: np.random.Generator, ranges: AffineRanges = AffineRanges()) -> AffineParams:
    theta = math.radians(rng.uniform(-ranges.rotation_deg, ranges.rotation_deg))
    scale = rng.uniform(*ranges.scale)
    shift = rng.uniform(-ranges.translation, ranges.translation, size=2)
    return AffineParams(theta, float(scale), (float(shift[0]), float(shift[1])))


def apply_affine(clip: KeypointClip, params: AffineParams) -> KeypointClip:
    c, s = math.cos(params.theta), math.sin(params.theta)
    m = params.scale * np.array([[c, -s], [s, c]])
    coords = clip.coords @ m.T + np.asarray(params.shift)
    return replace(clip, coords=coords, confidence=clip.confidence.copy())


def random_affine(clip: KeypointClip, rng: np.random.Generator,
                  ranges: AffineRanges = AffineRanges()) -> KeypointClip:
    """One rotation/scale/translation drawn once and applied to every frame and node."""
    return apply_affine(clip, sample_affine(rng, ranges))


def zero_nodes(clip: KeypointClip, nodes: Sequence[int]) -> KeypointClip:
    coords = clip.coords.copy()
    coords[:, list(nodes)] = 0.0
    return replace(clip, coords=coords, confidence=clip.confidence.copy())
