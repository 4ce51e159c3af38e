import numpy as np
import pytest

from motion2midi.decoder import DecoderConfig, init_decoder_params
from motion2midi.generator import (
    GenConfig, beam_search, beam_search_scores, generate_to_midi, greedy_decode, make_scorer,
    sample_decode, sequence_logp,
)
from motion2midi.midi import BOS, EOS, PAD, read_smf

TINY = DecoderConfig(num_blocks=1, d_model=8, num_heads=2, d_ff=12, max_seq_len=16, pose_channels=6)
MASKED = (3, 40, 100, 180, 215, EOS)


def tiny_model(seed, out_scale=None):
    rng = np.random.default_rng(seed)
    params = init_decoder_params(TINY, rng)
    if out_scale is not None:
        params["out.w"].data = rng.standard_normal(params["out.w"].shape) * out_scale
    return params, rng.standard_normal((3, 6))


def exhaustive_best(scorer, allowed, max_tokens):
    """Best hypothesis over every sequence the beam could produce, by plain enumeration."""
    best = None

    def walk(prefix, lp):
        nonlocal best
        if prefix[-1] == EOS or len(prefix) == max_tokens:
            key = (prefix[-1] != EOS, -lp, len(prefix), prefix)
            if best is None or key < best[0]:
                best = (key, prefix, lp)
            return
        logp = scorer(np.array([prefix]))[0]
        for tok in allowed:
            walk(prefix + (tok,), lp + float(logp[tok]))

    walk((BOS,), 0.0)
    return best[1], best[2]


@pytest.mark.parametrize("seed", range(5))
def test_beam_one_equals_greedy(seed):
    params, pose = tiny_model(seed, out_scale=0.5)
    cfg = GenConfig(beam=1, max_tokens=16)
    assert beam_search(pose, params, TINY, cfg).tokens == greedy_decode(pose, params, TINY, cfg).tokens
    masked = GenConfig(beam=1, max_tokens=8, allowed_tokens=MASKED)
    assert beam_search(pose, params, TINY, masked).tokens == greedy_decode(pose, params, TINY, masked).tokens


def test_unpruned_beam_equals_exhaustive_search():
    # a beam wide enough to keep every prefix cannot prune, so it must find the optimum
    for seed in range(3):
        params, pose = tiny_model(seed, out_scale=1.0)
        scorer = make_scorer(pose, params, TINY)
        best, lp = exhaustive_best(scorer, MASKED, 5)
        hyp = beam_search_scores(scorer, GenConfig(beam=6 ** 4, max_tokens=5, allowed_tokens=MASKED))
        assert hyp.tokens == best
        assert hyp.logp == pytest.approx(lp, abs=1e-9)


def test_beam_score_never_exceeds_exhaustive_optimum():
    for seed in range(3):
        params, pose = tiny_model(seed, out_scale=1.0)
        scorer = make_scorer(pose, params, TINY)
        _, best_lp = exhaustive_best(scorer, MASKED, 6)
        for beam in (1, 2, 5):
            hyp = beam_search_scores(scorer, GenConfig(beam=beam, max_tokens=6, allowed_tokens=MASKED))
            if hyp.finished:
                assert hyp.logp <= best_lp + 1e-12


@pytest.mark.parametrize("beam", [1, 3, 5])
def test_returned_logp_matches_rescoring(beam):
    params, pose = tiny_model(7, out_scale=0.5)
    hyp = beam_search(pose, params, TINY, GenConfig(beam=beam, max_tokens=12))
    assert hyp.logp == pytest.approx(sequence_logp(make_scorer(pose, params, TINY), hyp.tokens), abs=1e-9)


def test_greedy_deterministic_and_contract():
    params, pose = tiny_model(8)
    cfg = GenConfig(max_tokens=10)
    a = greedy_decode(pose, params, TINY, cfg)
    assert a == greedy_decode(pose, params, TINY, cfg)
    for hyp in (a, beam_search(pose, params, TINY, cfg), sample_decode(pose, params, TINY, cfg)):
        assert hyp.tokens[0] == BOS and len(hyp.tokens) <= 10
        assert BOS not in hyp.tokens[1:] and PAD not in hyp.tokens
        assert hyp.finished == (hyp.tokens[-1] == EOS)


def test_low_temperature_sampling_matches_greedy():
    params, pose = tiny_model(9, out_scale=0.5)
    greedy = greedy_decode(pose, params, TINY, GenConfig(max_tokens=12))
    for trial in range(20):
        cfg = GenConfig(max_tokens=12, temperature=1e-6, seed=trial)
        assert sample_decode(pose, params, TINY, cfg).tokens == greedy.tokens


def test_sampling_is_seeded():
    params, pose = tiny_model(10)
    a = sample_decode(pose, params, TINY, GenConfig(max_tokens=12, seed=1))
    assert a == sample_decode(pose, params, TINY, GenConfig(max_tokens=12, seed=1))


def test_generate_to_midi_always_parses():
    for seed in range(100):
        params, pose = tiny_model(seed, out_scale=float(seed % 4))
        notes, smf, hyp = generate_to_midi(pose, params, TINY, GenConfig(beam=2, max_tokens=12))
        assert read_smf(smf) == notes
        assert all(21 <= n.pitch <= 108 for n in notes)


def test_empty_generation_gives_valid_empty_file():
    params, pose = tiny_model(11)
    params["out.b"].data[:] = -50.0
    params["out.b"].data[EOS] = 50.0
    notes, smf, hyp = generate_to_midi(pose, params, TINY, GenConfig(max_tokens=8))
    assert hyp.tokens == (BOS, EOS) and notes == [] and read_smf(smf) == []


def test_budget_checks():
    params, pose = tiny_model(12)
    with pytest.raises(ValueError):
        beam_search(pose, params, TINY, GenConfig(max_tokens=17))
    with pytest.raises(ValueError):
        GenConfig(beam=0)
