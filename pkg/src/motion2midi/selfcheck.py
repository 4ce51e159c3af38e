"""Fast oracle suites run by ``motion2midi selfcheck``.

Each check pits an implementation against an independent route (finite
differences, naive gathers, brute-force decoding, closed-form values) on
small random inputs drawn from the given seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import numerics as nx
from .dataset import ToyInstrumentSpec, generate_sample, oracle_decode, sample_notes
from .decoder import DecoderConfig, decoder_forward, init_decoder_params, relative_logits_naive, relative_logits_skew
from .evalmetrics import ndb_features, spectral_vector, synth
from .generator import GenConfig, beam_search, greedy_decode
from .midi import NoteEvent, VOCAB_SIZE, detokenize, index_of, read_smf, token_of, tokenize, transpose, write_smf
from .numerics import Tensor, lr_at, make_rng


@dataclass
class SuiteResult:
    name: str
    passed: int = 0
    failed: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return self.passed + len(self.failed)


def _grad_checks(rng) -> dict[str, Callable[[], bool]]:
    def param(*shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True)

    a, b = param(3, 4), param(4, 2)
    x, g, beta = param(2, 5), param(5), param(5)
    seq, w = param(1, 6, 3), param(3, 3, 2)
    return {
        "matmul": lambda: nx.check_gradients(nx.matmul, [a, b]) <= 1e-4,
        "softmax": lambda: nx.check_gradients(lambda t: nx.softmax(t, axis=-1), [x]) <= 1e-4,
        "layer_norm": lambda: nx.check_gradients(nx.layer_norm, [x, g, beta]) <= 1e-4,
        "temporal_conv1d": lambda: nx.check_gradients(nx.temporal_conv1d, [seq, w]) <= 1e-4,
    }


def _numerics(rng) -> dict[str, Callable[[], bool]]:
    checks = _grad_checks(rng)
    checks["schedule"] = lambda: (abs(lr_at(4000) - 7e-4) <= 1e-15 and abs(lr_at(2000) - 3.5e-4) <= 1e-15
                                  and abs(lr_at(16000) - 3.5e-4) <= 1e-15)
    sig = rng.standard_normal(64)
    checks["fft_vs_dft"] = lambda: np.abs(
        nx.fft(sig) - np.exp(-2j * np.pi * np.outer(np.arange(64), np.arange(64)) / 64) @ sig).max() <= 1e-9
    return checks


def _codec(rng) -> dict[str, Callable[[], bool]]:
    spec = ToyInstrumentSpec(pitch_range=(21, 108))

    def round_trip():
        for _ in range(100):
            notes = [NoteEvent(n.onset, n.pitch, n.offset, int(rng.integers(1, 128)))
                     for n in sample_notes(rng, spec)]
            back = detokenize(tokenize(notes))
            if len(back) != len(notes):
                return False
            for n, m in zip(sorted(notes, key=lambda e: (e.onset, e.pitch)), back):
                if (n.pitch != m.pitch or abs(n.onset - m.onset) > 0.005 or abs(n.offset - m.offset) > 0.005
                        or abs(n.velocity - m.velocity) > 3):
                    return False
        return True

    def smf():
        # distinct pitches so no two notes overlap on one key; 1 ms grid
        pitches = rng.choice(np.arange(21, 109), size=20, replace=False)
        notes = []
        for p in pitches:
            onset = int(rng.integers(0, 5000))
            notes.append(NoteEvent(onset / 1000, int(p), (onset + int(rng.integers(1, 900))) / 1000,
                                   int(rng.integers(1, 128))))
        key = lambda n: (n.onset, n.pitch)
        return sorted(read_smf(write_smf(notes)), key=key) == sorted(notes, key=key)

    return {
        "vocab_bijection": lambda: all(index_of(token_of(i)) == i for i in range(VOCAB_SIZE)),
        "round_trip": round_trip,
        "smf_round_trip": smf,
        "transpose_inverse": lambda: transpose(transpose(
            [NoteEvent(0.0, 60, 0.5, 64), NoteEvent(0.25, 71, 1.0, 90)], 5), -5)
            == [NoteEvent(0.0, 60, 0.5, 64), NoteEvent(0.25, 71, 1.0, 90)],
    }


def _attention(rng) -> dict[str, Callable[[], bool]]:
    def skew(length, heads):
        q = Tensor(rng.standard_normal((heads, length, 4)))
        table = Tensor(rng.standard_normal((heads, 2 * length - 1, 4)))
        return np.abs(relative_logits_skew(q, table).data - relative_logits_naive(q, table).data).max() <= 1e-10

    cfg = DecoderConfig(num_blocks=1, d_model=8, num_heads=2, d_ff=12, max_seq_len=16, pose_channels=6)
    params = init_decoder_params(cfg, rng)
    pose = rng.standard_normal((3, 6))

    def causal():
        tokens = rng.integers(0, VOCAB_SIZE, size=10)
        base = decoder_forward(tokens, pose, params, cfg).data
        for j in range(10):
            edited = tokens.copy()
            edited[j] = (edited[j] + 1) % VOCAB_SIZE
            if not np.array_equal(decoder_forward(edited, pose, params, cfg).data[:j], base[:j]):
                return False
        return True

    def beam_one():
        gen = GenConfig(beam=1, max_tokens=12)
        return beam_search(pose, params, cfg, gen).tokens == greedy_decode(pose, params, cfg, gen).tokens

    checks = {f"skew_L{n}_H{h}": (lambda n=n, h=h: skew(n, h)) for n in (1, 2, 7, 16) for h in (1, 4)}
    checks.update(causality=causal, beam_one_is_greedy=beam_one)
    return checks


def _data_and_metrics(rng) -> dict[str, Callable[[], bool]]:
    seed = int(rng.integers(1 << 30))

    def oracle():
        for s in range(seed, seed + 10):
            sample = generate_sample(s)
            decoded = oracle_decode(sample.clip)
            if [n.pitch for n in decoded] != [n.pitch for n in sample.notes]:
                return False
        return True

    def a4():
        peak = np.argmax(spectral_vector(synth([NoteEvent(0.0, 69, 1.0, 100)]))) * 16000 / 1024
        return abs(peak - 440.0) <= 16000 / 1024

    feats = rng.standard_normal((40, 6))
    return {
        "oracle_decode": oracle,
        "synth_a4": a4,
        "ndb_identical": lambda: ndb_features(feats, feats, k=5, seed=seed).ndb == 0,
    }


SUITES = {
    "numerics": _numerics,
    "midi_codec": _codec,
    "attention_and_decoding": _attention,
    "data_and_metrics": _data_and_metrics,
}


def run_suites(seed: int = 0) -> list[SuiteResult]:
    results = []
    for i, (name, build) in enumerate(SUITES.items()):
        result = SuiteResult(name)
        for check, fn in build(make_rng(seed, i)).items():
            try:
                ok = bool(fn())
            except Exception:  # a crashing check counts as a failure, not an abort
                ok = False
            if ok:
                result.passed += 1
            else:
                result.failed.append(check)
        results.append(result)
    return results
