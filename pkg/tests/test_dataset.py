import numpy as np
import pytest

from motion2midi.dataset import (
    SplitError, ToyInstrumentSpec, batchify, fingertip_node, fingertip_x, generate_sample,
    make_splits, oracle_decode, press_envelope, unbatch,
)
from motion2midi.midi import BOS, EOS, PAD, tokenize

SPEC = ToyInstrumentSpec()


def test_same_seed_bit_identical():
    a, b = generate_sample(42), generate_sample(42)
    assert a.notes == b.notes and a.tokens == b.tokens
    assert a.clip.coords.tobytes() == b.clip.coords.tobytes()
    assert generate_sample(43).clip.coords.tobytes() != a.clip.coords.tobytes()


def test_clip_is_six_seconds_at_30_fps():
    s = generate_sample(0)
    assert s.clip.coords.shape == (180, 67, 2)
    assert s.clip.fps == 30.0


def test_notes_respect_spec_and_tokens_match():
    for seed in range(300):
        s = generate_sample(seed)
        assert 4 <= len(s.notes) <= 16
        assert s.tokens == tokenize(s.notes)
        for n in s.notes:
            assert 48 <= n.pitch <= 72
            assert 0.2 - 1e-9 <= n.offset - n.onset <= 1.0 + 1e-9
            assert n.offset <= 5.9 + 1e-9
        for a, b in zip(s.notes, s.notes[1:]):
            assert b.onset - a.offset >= 0.1 - 1e-9


def test_oracle_recovers_notes_for_1000_seeds():
    frame = 1.0 / 30
    correct = total = 0
    for seed in range(1000):
        s = generate_sample(seed)
        decoded = oracle_decode(s.clip)
        assert len(decoded) == len(s.notes), seed
        for truth, got in zip(s.notes, decoded):
            total += 1
            correct += truth.pitch == got.pitch
            assert abs(truth.onset - got.onset) <= frame + 1e-9
            assert abs(truth.offset - got.offset) <= frame + 1e-9
    assert correct == total


def test_fingertip_trajectory_is_continuous():
    s = generate_sample(5)
    t = np.linspace(0, 6, 60001)
    x = fingertip_x(t, s.notes, SPEC)
    env = press_envelope(t, s.notes, SPEC.ramp_seconds)
    # bounded slope on a fine grid rules out jumps
    assert np.max(np.abs(np.diff(x))) < 1.0
    assert np.max(np.abs(np.diff(env))) <= 1e-4 / SPEC.ramp_seconds + 1e-12
    # x never moves while the key is down
    pressed = env > 0
    for n in s.notes:
        during = (t >= n.onset - 0.02) & (t <= n.offset + 0.02)
        assert np.ptp(x[during]) < 1e-9
    assert pressed.any()


def test_only_the_fingertip_is_noise_free():
    s = generate_sample(9)
    tip = fingertip_node(SPEC)
    assert tip == 54
    body = s.clip.coords[:, 0]
    assert np.std(body[:, 0]) > 0
    assert np.std(body[:, 0]) < 1.0


def test_splits_disjoint_and_overlap_rejected():
    train, val = make_splits(512, 64, base_seed=1000)
    assert len(train) == 512 and len(val) == 64
    assert not set(train) & set(val)
    with pytest.raises(SplitError):
        make_splits(10, 5, base_seed=0, val_offset=5)


def test_batch_padding_inverse_and_mask_accounting():
    samples = [generate_sample(s) for s in range(11)]
    batches = batchify(samples, 4)
    assert [b.size for b in batches] == [4, 4, 3]
    recovered = [seq for b in batches for seq in unbatch(b)]
    assert recovered == [s.tokens for s in samples]
    for b in batches:
        expected = sum(len(seq) - 1 for seq in unbatch(b))
        assert int(b.loss_mask.sum()) == expected
        assert not b.loss_mask[:, 0].any()
        assert np.array_equal(b.loss_mask[:, 1:], b.tokens[:, 1:] != PAD)
        assert np.all(b.tokens[:, 0] == BOS)
        assert b.coords.shape[1:] == (180, 67, 2)
        assert np.array_equal(b.targets()[b.target_mask()], b.tokens[:, 1:][b.tokens[:, 1:] != PAD])
    assert EOS in batches[0].tokens[0]


def test_spec_validation():
    with pytest.raises(ValueError):
        ToyInstrumentSpec(pitch_range=(10, 20))
    with pytest.raises(ValueError):
        ToyInstrumentSpec(finger="Toe")
