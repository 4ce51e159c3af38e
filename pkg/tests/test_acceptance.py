"""Acceptance criteria, one test each; every test logs a PASS/FAIL line.

Tolerances and problem sizes are pinned here and never tuned after a run.
Criterion 5 trains the desk model for 3000 steps (about 25 minutes on one
CPU core).
"""

import math
import random
import time

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from conftest import record_criterion, tiny_train_config
from motion2midi import numerics as nx
from motion2midi.dataset import ToyInstrumentSpec, collate, generate_sample, sample_notes
from motion2midi.decoder import (
    DecoderConfig, decoder_forward, init_decoder_params, relative_logits_naive, relative_logits_skew,
)
from motion2midi.encoder import StgcnConfig
from motion2midi.evalmetrics import ndb_features, nll_report, spectral_vector, synth
from motion2midi.generator import GenConfig, beam_search, beam_search_scores, greedy_decode, make_scorer
from motion2midi.midi import (
    BOS, EOS, VOCAB_SIZE, NoteEvent, detokenize, index_of, read_smf, token_of, tokenize, transpose, write_smf,
)
from motion2midi.numerics import BatchNormState, Tape, Tensor, make_rng
from motion2midi.numerics.autodiff import div
from motion2midi.numerics.optim import _lr
from motion2midi.trainer import (
    Model, TrainConfig, TrainingData, TrainState, batch_loss, checkpoint_bytes, evaluate_nll, parse_checkpoint,
    train, train_step, unigram_nll, validation_samples,
)

GRAD_TOL = 1e-4


# ---------------------------------------------------------------- 1

def _op_cases(rng):
    def p(*shape, positive=False):
        data = rng.standard_normal(shape)
        return Tensor(np.abs(data) + 0.5 if positive else data, requires_grad=True)

    mask = rng.random((3, 4)) < 0.3
    idx = np.array([[0, 2, 2], [4, 1, 0]])
    targets = np.array([[1, 0, 3], [2, 2, 4]])
    loss_mask = np.array([[1, 1, 0], [1, 0, 1]], dtype=bool)
    bn = BatchNormState(3)
    return {
        "add": (nx.add, [p(3, 4), p(4)]),
        "sub": (nx.sub, [p(3, 4), p(3, 1)]),
        "mul": (nx.mul, [p(3, 4), p(1, 4)]),
        "div": (div, [p(3, 4), p(3, 4, positive=True)]),
        "exp": (nx.exp, [p(3, 4)]),
        "log": (nx.log, [p(3, 4, positive=True)]),
        "sqrt": (nx.sqrt, [p(3, 4, positive=True)]),
        "relu": (nx.relu, [Tensor(np.sign(rng.standard_normal((3, 4))) * (0.1 + rng.random((3, 4))),
                                  requires_grad=True)]),
        "masked_fill": (lambda x: nx.masked_fill(x, mask, -3.0), [p(3, 4)]),
        "matmul": (nx.matmul, [p(2, 3, 4), p(4, 5)]),
        "linear": (nx.linear, [p(2, 3, 4), p(4, 5), p(5)]),
        "bias_add": (nx.bias_add, [p(2, 3, 4), p(4)]),
        "reshape": (lambda x: nx.reshape(x, (4, 3)), [p(3, 4)]),
        "transpose": (lambda x: nx.transpose(x, (2, 0, 1)), [p(2, 3, 4)]),
        "swapaxes": (lambda x: nx.swapaxes(x, 0, 2), [p(2, 3, 4)]),
        "getitem_basic": (lambda x: nx.getitem(x, (slice(None), slice(1, 3))), [p(3, 4)]),
        "getitem_advanced": (lambda x: nx.getitem(x, (np.array([0, 2, 0]), np.array([1, 1, 3]))), [p(3, 4)]),
        "embedding_lookup": (lambda t: nx.embedding_lookup(t, idx), [p(5, 3)]),
        "pad": (lambda x: nx.pad(x, [(1, 2), (0, 1)]), [p(3, 4)]),
        "concat": (lambda a, b: nx.concat([a, b], axis=1), [p(3, 2), p(3, 4)]),
        "sum": (lambda x: nx.sum_(x, axis=1, keepdims=True), [p(3, 4)]),
        "mean": (lambda x: nx.mean(x, axis=0), [p(3, 4)]),
        "softmax": (lambda x: nx.softmax(x, axis=-1), [p(3, 4)]),
        "log_softmax": (lambda x: nx.log_softmax(x, axis=0), [p(3, 4)]),
        "layer_norm": (nx.layer_norm, [p(3, 6), p(6), p(6)]),
        "batch_norm_1d": (lambda x, g, b: nx.batch_norm_1d(x, g, b, bn, True), [p(4, 5, 3), p(3), p(3)]),
        "temporal_conv1d": (lambda x, w: nx.temporal_conv1d(x, w, stride=2), [p(2, 9, 3, 2), p(3, 2, 4)]),
        "cross_entropy_loss": (lambda z: nx.cross_entropy_loss(z, targets, loss_mask), [p(2, 3, 5)]),
    }


def _composite_case():
    enc = StgcnConfig(channels=(4,), strides=(2,), kernel=3)
    dec = DecoderConfig(num_blocks=1, d_model=8, num_heads=2, d_ff=8, max_seq_len=8, pose_channels=4)
    model = Model.create(enc, dec, seed=5)
    rng = np.random.default_rng(6)
    for t in model.parameters().values():  # move off the init so no gradient is trivially zero
        t.data = t.data + 0.05 * rng.standard_normal(t.shape)
    samples = [generate_sample(s) for s in (11, 12)]
    coords = [s.model_input()[:16] for s in samples]
    short = [type(s)(s.seed, s.notes, s.tokens[:6] + [EOS], s.clip) for s in samples]
    batch = collate(short, coords)
    params = model.parameters()
    return (lambda *_: batch_loss(model, batch, training=True)), list(params.values())


def test_criterion_01_gradient_integrity():
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    errors = {name: nx.check_gradients(fn, inputs) for name, (fn, inputs) in _op_cases(rng).items()}
    fn, params = _composite_case()
    errors["encoder+decoder"] = nx.check_gradients(fn, params)
    elapsed = time.perf_counter() - start
    worst = max(errors, key=errors.get)
    ok = errors[worst] <= GRAD_TOL and elapsed < 60
    record_criterion(1, "gradient integrity", ok,
                     f"{len(errors)} checks, worst {worst} rel err {errors[worst]:.2e} (tol {GRAD_TOL:g}), {elapsed:.1f}s")
    assert ok, errors


# ---------------------------------------------------------------- 2

def _random_performance(rng: random.Random, grid: float | None = None):
    notes, busy, t = [], {}, 0.0
    for _ in range(rng.randint(0, 25)):
        t += rng.uniform(0.0, 10.0) if rng.random() < 0.3 else rng.uniform(0.0, 0.4)
        pitch = rng.randint(21, 108)
        onset = max(t, busy.get(pitch, 0.0))
        offset = onset + rng.uniform(0.02, 2.0)
        if grid:
            onset = round(onset * 1000) / 1000
            offset = max(round(offset * 1000) / 1000, onset + 0.001)
        busy[pitch] = offset
        notes.append(NoteEvent(onset, pitch, offset, rng.randint(1, 127)))
    return sorted(notes)


def test_criterion_02_codec_fidelity():
    start = time.perf_counter()
    rng = random.Random(2024)
    worst_time, worst_vel, count_ok = 0.0, 0, True
    for _ in range(1000):
        notes = _random_performance(rng)
        back = detokenize(tokenize(notes))
        count_ok &= len(back) == len(notes)
        key = lambda n: (round(n.onset * 100), n.pitch)
        for a, b in zip(sorted(notes, key=key), sorted(back, key=key)):
            count_ok &= a.pitch == b.pitch
            worst_time = max(worst_time, abs(a.onset - b.onset), abs(a.offset - b.offset))
            worst_vel = max(worst_vel, abs(a.velocity - b.velocity))
    smf_ok = all(read_smf(write_smf(n)) == n for n in (_random_performance(rng, grid=0.001) for _ in range(200)))
    bijection = ([index_of(token_of(i)) for i in range(VOCAB_SIZE)] == list(range(VOCAB_SIZE))
                 and len({token_of(i) for i in range(VOCAB_SIZE)}) == VOCAB_SIZE)
    elapsed = time.perf_counter() - start
    ok = count_ok and worst_time <= 0.005 + 1e-9 and worst_vel <= 3 and smf_ok and bijection and elapsed < 10
    record_criterion(2, "codec fidelity", ok,
                     f"max timing err {worst_time * 1000:.3f} ms, max velocity err {worst_vel}, "
                     f"SMF 1 ms lossless={smf_ok}, bijection={bijection}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 3

def test_criterion_03_relative_attention_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for length in (1, 2, 7, 64):
        for heads in (1, 4):
            q = Tensor(rng.standard_normal((heads, length, 16)))
            table = Tensor(rng.standard_normal((heads, 2 * length - 1, 16)))
            diff = np.abs(relative_logits_skew(q, table).data - relative_logits_naive(q, table).data).max()
            worst = max(worst, float(diff))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-10 and elapsed < 10
    record_criterion(3, "relative attention skew == naive", ok, f"max abs err {worst:.2e}, {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- 4

def test_criterion_04_causality():
    cfg = DecoderConfig()
    rng = np.random.default_rng(4)
    params = init_decoder_params(cfg, rng)
    violations = checked = 0
    for _ in range(10):
        length = 24
        tokens = rng.integers(0, VOCAB_SIZE, size=length)
        pose = rng.standard_normal((45, cfg.pose_channels))
        base = decoder_forward(tokens, pose, params, cfg).data
        for j in range(length):
            edited = tokens.copy()
            edited[j] = (edited[j] + 1 + rng.integers(VOCAB_SIZE - 1)) % VOCAB_SIZE
            after = decoder_forward(edited, pose, params, cfg).data
            violations += not np.array_equal(after[:j], base[:j])
            checked += 1
    ok = violations == 0
    record_criterion(4, "causality", ok, f"{checked} perturbations on 10 inputs, {violations} changed an earlier position")
    assert ok


# ---------------------------------------------------------------- 5

DESK_BATCH = 4  # three thousand batch-8 steps do not fit the time budget on one core


def test_criterion_05_learning_signal():
    start = time.perf_counter()
    cfg = TrainConfig(batch_size=DESK_BATCH)
    data = TrainingData(cfg)
    val = validation_samples(cfg)
    baseline = unigram_nll(data.samples, val)
    losses = []
    state = train(cfg, data=data, log=lambda r: losses.append(r["loss"]))
    full = evaluate_nll(state.model, val)
    no_hands = evaluate_nll(state.model, val, zero_hands=True)
    elapsed = time.perf_counter() - start
    ok = (len(losses) == 3000 and all(map(math.isfinite, losses)) and full <= 0.6 * baseline
          and no_hands > full and elapsed < 30 * 60)
    record_criterion(5, "learning signal", ok,
                     f"held-out NLL {full:.4f} vs unigram {baseline:.4f} (ratio {full / baseline:.3f}, need <= 0.6); "
                     f"w/o hands {no_hands:.4f}; batch {DESK_BATCH}; {elapsed / 60:.1f} min")
    rows = nll_report({"desk": state.model}, val)
    shuffled = next(r.nll for r in rows if r.condition == "shuffled pairs")
    print(f"  shuffled-pairing control NLL {shuffled:.4f}")
    assert ok
    assert shuffled > full


# ---------------------------------------------------------------- 6

def test_criterion_06_memorization():
    start = time.perf_counter()
    cfg = tiny_train_config(augment=False, steps=200, eval_interval=200)
    state = TrainState.fresh(cfg)
    batch = TrainingData(cfg).batch(1)
    losses = [train_step(state, batch)[0] for _ in range(200)]
    final = float(batch_loss(state.model, batch).data)
    elapsed = time.perf_counter() - start
    initial_ok = abs(losses[0] - math.log(VOCAB_SIZE)) <= 0.3
    ok = initial_ok and min(losses + [final]) < 0.5 and elapsed < 120
    record_criterion(6, "single-batch memorization", ok,
                     f"initial {losses[0]:.3f} (ln 243 = {math.log(VOCAB_SIZE):.3f}), "
                     f"final {final:.3f} after 200 steps, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 7

BEAM_TINY = DecoderConfig(num_blocks=1, d_model=8, num_heads=2, d_ff=12, max_seq_len=16, pose_channels=6)
MASKED = (3, 40, 100, 180, 215, EOS)
BATTERY = range(20)  # tiny models checked against exhaustive enumeration, fixed in advance


def _battery_model(seed):
    rng = np.random.default_rng(seed)
    params = init_decoder_params(BEAM_TINY, rng)
    params["out.w"].data = rng.standard_normal(params["out.w"].shape)
    return params, rng.standard_normal((3, 6))


def _exhaustive(scorer, max_tokens):
    best = None

    def walk(prefix, lp):
        nonlocal best
        if prefix[-1] == EOS or len(prefix) == max_tokens:
            key = (prefix[-1] != EOS, -lp, len(prefix), prefix)
            if best is None or key < best[0]:
                best = (key, prefix)
            return
        logp = scorer(np.array([prefix]))[0]
        for tok in MASKED:
            walk(prefix + (tok,), lp + float(logp[tok]))

    walk((BOS,), 0.0)
    return best[1]


def _teacher_forced_logp(tokens, pose, params):
    logits = decoder_forward(np.array(tokens[:-1]), pose, params, BEAM_TINY)
    logp = nx.log_softmax(logits, axis=-1).data
    return float(logp[np.arange(len(tokens) - 1), tokens[1:]].sum())


def test_criterion_07_beam_search():
    start = time.perf_counter()
    greedy_ok, worst_rescore, mismatches = True, 0.0, []
    for seed in BATTERY:
        params, pose = _battery_model(seed)
        for gen in (GenConfig(beam=1, max_tokens=16), GenConfig(beam=1, max_tokens=6, allowed_tokens=MASKED)):
            greedy_ok &= (beam_search(pose, params, BEAM_TINY, gen).tokens
                          == greedy_decode(pose, params, BEAM_TINY, gen).tokens)
        hyp = beam_search(pose, params, BEAM_TINY, GenConfig(beam=5, max_tokens=16))
        worst_rescore = max(worst_rescore, abs(hyp.logp - _teacher_forced_logp(hyp.tokens, pose, params)))
        scorer = make_scorer(pose, params, BEAM_TINY)
        found = beam_search_scores(scorer, GenConfig(beam=5, max_tokens=6, allowed_tokens=MASKED)).tokens
        if found != _exhaustive(scorer, 6):
            mismatches.append(seed)
    elapsed = time.perf_counter() - start
    ok = greedy_ok and worst_rescore <= 1e-9 and not mismatches and elapsed < 120
    record_criterion(7, "beam search", ok,
                     f"beam=1==greedy {greedy_ok}; rescoring err {worst_rescore:.1e}; beam=5 == exhaustive on "
                     f"{len(BATTERY) - len(mismatches)}/{len(BATTERY)} tiny models (mismatch seeds {mismatches}); "
                     f"{elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 8

def test_criterion_08_schedule():
    sched = nx.LrSchedule()
    values = (nx.lr_at(4000), nx.lr_at(2000), nx.lr_at(16000))
    exact = all(abs(v - e) <= 1e-15 for v, e in zip(values, (0.0007, 0.00035, 0.00035)))
    gap = abs(_lr(sched.warmup_steps - 1e-6, sched) - _lr(sched.warmup_steps + 1e-6, sched))
    ok = exact and gap <= 1e-7 * sched.peak_lr
    record_criterion(8, "schedule exactness", ok,
                     f"lr(4000,2000,16000) = {values}, boundary gap {gap:.2e} (limit {1e-7 * sched.peak_lr:.1e})")
    assert ok


# ---------------------------------------------------------------- 9

def _features(seed, spec, n):
    return np.stack([spectral_vector(synth(sample_notes(make_rng(seed, i), spec))) for i in range(n)])


def test_criterion_09_ndb_sanity():
    start = time.perf_counter()
    pool = _features(91, ToyInstrumentSpec(), 1000)
    identical = ndb_features(pool[:500], pool[:500]).ndb
    iid = []
    for seed in range(10):
        order = make_rng(seed, 9).permutation(len(pool))
        iid.append(ndb_features(pool[order[:500]], pool[order[500:]], seed=seed).ndb)
    low = _features(92, ToyInstrumentSpec(pitch_range=(36, 54)), 500)
    high = _features(93, ToyInstrumentSpec(pitch_range=(72, 90)), 500)
    divergent = ndb_features(low, high).ndb
    elapsed = time.perf_counter() - start
    ok = identical == 0 and max(iid) <= 6 and divergent >= 25 and elapsed < 300
    record_criterion(9, "NDB sanity", ok,
                     f"identical {identical}/50, i.i.d. halves max {max(iid)}/50 over 10 seeds {iid}, "
                     f"low vs high pitch {divergent}/50, {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 10

def test_criterion_10_determinism():
    cfg = tiny_train_config(steps=12, eval_interval=6)
    first = checkpoint_bytes(train(cfg))
    second = checkpoint_bytes(train(cfg))
    half = checkpoint_bytes(train(cfg, until=6))
    resumed = checkpoint_bytes(train(cfg, state=parse_checkpoint(half, cfg.config_hash())))
    ok = first == second and resumed == first
    record_criterion(10, "determinism", ok,
                     f"repeat run byte-identical={first == second}, resume-at-6 byte-identical={resumed == first} "
                     f"({len(first)} bytes)")
    assert ok


# ---------------------------------------------------------------- 11

_shift_failures: list[str] = []


@settings(max_examples=300, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 2**32 - 1), shift=st.integers(-40, 40))
def _transpose_property(seed, shift):
    notes = _random_performance(random.Random(seed))
    lo = min((n.pitch for n in notes), default=60)
    hi = max((n.pitch for n in notes), default=60)
    shift = max(21 - lo, min(108 - hi, shift))
    moved = transpose(notes, shift)
    if [m.pitch - n.pitch for n, m in zip(notes, moved)] != [shift] * len(notes):
        _shift_failures.append(f"shift {shift} seed {seed}")
    if [(m.onset, m.offset, m.velocity) for m in moved] != [(n.onset, n.offset, n.velocity) for n in notes]:
        _shift_failures.append(f"timing changed seed {seed}")
    if transpose(moved, -shift) != notes:
        _shift_failures.append(f"inverse seed {seed}")


def test_criterion_11_transpose():
    _shift_failures.clear()
    _transpose_property()
    ok = not _shift_failures
    record_criterion(11, "transpose editing", ok,
                     f"300 random performances x shifts in [-40, 40]; failures: {_shift_failures[:3] or 'none'}")
    assert ok
