import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from motion2midi import pose
from motion2midi.pose import (
    AffineParams, DegenerateClipError, KeypointClip, KeypointSchemaError, LayoutError,
    SkeletonLayout, apply_affine, build_adjacency, default_layout, frame_to_json,
    normalize_clip, parse_keypoint_json, parse_layout, random_affine,
)


def random_clip(seed: int, frames: int = 6, nodes: int = 67) -> KeypointClip:
    rng = np.random.default_rng(seed)
    coords = rng.uniform(0, 500, size=(frames, nodes, 2))
    conf = rng.uniform(0, 1, size=(frames, nodes))
    conf[rng.random((frames, nodes)) < 0.2] = 0.0
    conf[0, 0] = 0.7
    return KeypointClip(coords, conf)


def test_default_layout_shape_and_connectivity():
    layout = default_layout()
    assert layout.num_nodes == 67
    assert len(layout.hand_nodes()) == 42
    assert layout.index("RHandIndex4") == 54
    assert (layout.index("RWrist"), layout.index("RHandWrist")) in layout.edges
    a = build_adjacency(layout)
    assert a.shape == (67, 67)
    assert np.all(np.abs(a.sum(axis=1) - 1.0) <= 1e-12)
    assert np.all(a >= 0)
    pattern = np.eye(67, dtype=bool)
    for i, j in layout.edges:
        pattern[i, j] = pattern[j, i] = True
    assert np.array_equal(a > 0, pattern)


def test_path_graph_middle_row():
    a = build_adjacency(parse_layout("node a\nnode b\nnode c\nedge a b\nedge b c\n"))
    assert np.allclose(a[1], [1 / 3, 1 / 3, 1 / 3], atol=1e-15)
    assert np.allclose(a[0], [0.5, 0.5, 0.0], atol=1e-15)


def test_single_node_adjacency():
    assert build_adjacency(parse_layout("node only")).tolist() == [[1.0]]


def test_disconnected_layout_rejected():
    with pytest.raises(LayoutError, match="disconnected"):
        build_adjacency(parse_layout("node a\nnode b\nnode c\nedge a b"))
    with pytest.raises(LayoutError):
        parse_layout("node a\nedge a z")
    with pytest.raises(LayoutError):
        build_adjacency(SkeletonLayout(("a", "b"), ((0, 5),)))


# ---------------------------------------------------------------- keypoint JSON

def frame_doc(values=None, person=True):
    if not person:
        return json.dumps({"version": 1.3, "people": []})
    v = values if values is not None else [0.0] * 201
    return json.dumps({"people": [{
        "pose_keypoints_2d": v[:75],
        "hand_left_keypoints_2d": v[75:138],
        "hand_right_keypoints_2d": v[138:],
    }]})


def test_all_zero_frame():
    clip = parse_keypoint_json([frame_doc()])
    assert clip.coords.shape == (1, 67, 2)
    assert np.all(clip.coords == 0) and np.all(clip.confidence == 0)


def test_floats_map_to_67_pairs_in_order():
    vals = [float(i) for i in range(201)]
    clip = parse_keypoint_json([frame_doc(vals)])
    assert clip.coords.shape == (1, 67, 2)
    assert clip.coords[0, 0].tolist() == [0.0, 1.0]
    assert clip.coords[0, 25].tolist() == [75.0, 76.0]   # first left-hand point
    assert clip.coords[0, 66].tolist() == [198.0, 199.0]


def test_missing_person_holds_previous_frame():
    vals = list(np.linspace(1, 2, 201))
    clip = parse_keypoint_json([frame_doc(vals), frame_doc(person=False)])
    assert np.array_equal(clip.coords[1], clip.coords[0])
    assert np.all(clip.confidence[1] == 0)


def test_schema_error_names_frame():
    bad = json.dumps({"people": [{"pose_keypoints_2d": [0.0] * 74,
                                  "hand_left_keypoints_2d": [0.0] * 63,
                                  "hand_right_keypoints_2d": [0.0] * 63}]})
    with pytest.raises(KeypointSchemaError, match="frame 1"):
        parse_keypoint_json([frame_doc(), bad])


def test_frame_to_json_round_trip_and_dir_loader(tmp_path):
    clip = random_clip(3, frames=4)
    for t in range(4):
        (tmp_path / f"f{t:04d}_keypoints.json").write_text(frame_to_json(clip.coords[t], clip.confidence[t]))
    loaded = pose.load_keypoint_dir(tmp_path)
    assert np.array_equal(loaded.coords, clip.coords)
    assert np.array_equal(loaded.confidence, clip.confidence)
    again = pose.load_keypoint_dir(tmp_path)
    assert normalize_clip(loaded).coords.tobytes() == normalize_clip(again).coords.tobytes()


# ---------------------------------------------------------------- normalisation

@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_normalize_centres_scales_and_is_idempotent(seed):
    clip = random_clip(seed)
    out = normalize_clip(clip)
    live = clip.confidence > 0
    pts = out.coords[live]
    assert np.allclose(pts.mean(axis=0), 0.0, atol=1e-9)
    assert abs(math.sqrt(np.mean(np.sum(pts ** 2, axis=1))) - 1.0) <= 1e-9
    assert np.allclose(normalize_clip(out).coords, out.coords, atol=1e-9)


def test_normalize_fixed_point_and_degenerate():
    coords = np.array([[[1.0, 0.0], [-1.0, 0.0]]])
    clip = KeypointClip(coords, np.ones((1, 2)))
    assert np.allclose(normalize_clip(clip).coords, coords, atol=1e-12)
    with pytest.raises(DegenerateClipError):
        normalize_clip(KeypointClip(coords, np.zeros((1, 2))))


# ---------------------------------------------------------------- augmentation

def test_identity_affine_leaves_clip_unchanged():
    clip = random_clip(1)
    assert np.array_equal(apply_affine(clip, AffineParams()).coords, clip.coords)


def test_affine_scales_pairwise_distances():
    clip = random_clip(2)
    params = AffineParams(theta=0.1, scale=1.07, shift=(0.05, -0.02))
    out = apply_affine(clip, params)
    d0 = np.linalg.norm(clip.coords[:, :, None] - clip.coords[:, None], axis=-1)
    d1 = np.linalg.norm(out.coords[:, :, None] - out.coords[:, None], axis=-1)
    assert np.allclose(d1, 1.07 * d0, rtol=1e-12, atol=1e-9)


def test_random_affine_determinism_and_preservation():
    clip = random_clip(5)
    a = random_affine(clip, np.random.default_rng(11))
    b = random_affine(clip, np.random.default_rng(11))
    c = random_affine(clip, np.random.default_rng(12))
    assert np.array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, c.coords)
    assert a.coords.shape == clip.coords.shape
    assert np.array_equal(a.confidence, clip.confidence)
    p = pose.sample_affine(np.random.default_rng(0))
    assert abs(p.theta) <= math.radians(10) and 0.9 <= p.scale <= 1.1
    assert max(map(abs, p.shift)) <= 0.1
