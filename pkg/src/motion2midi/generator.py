"""Autoregressive decoding from pose features: beam search, greedy and sampling.

All decoders score candidates with the model's full log-softmax.  BOS and
PAD (and anything outside ``GenConfig.allowed_tokens``) are never proposed,
but their probability mass is not renormalised away, so a returned
hypothesis' log-probability equals a plain teacher-forced rescoring.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .decoder import DecoderConfig, decoder_forward
from .midi import BOS, EOS, PAD, VOCAB_SIZE, NoteEvent, detokenize, write_smf
from .numerics import Tensor, make_rng

Scorer = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class GenConfig:
    beam: int = 5
    max_tokens: int = 1024  # includes the leading BOS
    temperature: float = 1.0
    seed: int = 0
    length_normalize: bool = False
    allowed_tokens: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if self.max_tokens < 2:
            raise ValueError("max_tokens must leave room for at least one generated token")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")

    def candidates(self) -> np.ndarray:
        pool = range(VOCAB_SIZE) if self.allowed_tokens is None else self.allowed_tokens
        return np.array(sorted({int(t) for t in pool} - {BOS, PAD}), dtype=np.int64)


@dataclass(frozen=True)
class GenerationHypothesis:
    tokens: tuple[int, ...]
    logp: float
    finished: bool = False

    def score(self, length_normalize: bool = False) -> float:
        if length_normalize:
            return self.logp / max(len(self.tokens) - 1, 1)
        return self.logp


def make_scorer(pose, params: dict, config: DecoderConfig) -> Scorer:
    """Next-token log-probabilities for a batch of equal-length prefixes."""
    pose = np.asarray(pose.data if isinstance(pose, Tensor) else pose)
    if pose.ndim == 3:
        if pose.shape[0] != 1:
            raise ValueError("generation takes pose features for a single clip")
        pose = pose[0]

    def scorer(prefixes: np.ndarray) -> np.ndarray:
        prefixes = np.asarray(prefixes, dtype=np.int64)
        batch = np.broadcast_to(pose, (prefixes.shape[0],) + pose.shape)
        logits = decoder_forward(prefixes, batch, params, config)
        return nx.log_softmax(logits.data[:, -1], axis=-1).data

    return scorer


def sequence_logp(scorer: Scorer, tokens: Sequence[int]) -> float:
    """Sum of per-step log-probabilities of ``tokens[1:]`` (prefix by prefix)."""
    total = 0.0
    for t in range(1, len(tokens)):
        total += float(scorer(np.array([tokens[:t]]))[0, tokens[t]])
    return total


def _sort_key(h: GenerationHypothesis, length_normalize: bool):
    return (-h.score(length_normalize), len(h.tokens), h.tokens)


def beam_search_scores(scorer: Scorer, cfg: GenConfig) -> GenerationHypothesis:
    allowed = cfg.candidates()
    live = [GenerationHypothesis((BOS,), 0.0)]
    finished: list[GenerationHypothesis] = []
    while live and len(live[0].tokens) < cfg.max_tokens:
        logp = scorer(np.array([h.tokens for h in live]))[:, allowed]
        totals = np.array([h.logp for h in live])[:, None] + logp
        # pre-select enough candidates to resolve ties, then order exactly
        flat = totals.reshape(-1)
        keep = min(flat.size, cfg.beam)
        cutoff = np.partition(-flat, keep - 1)[keep - 1]
        rows, cols = np.nonzero(-totals <= cutoff)
        cands = [GenerationHypothesis(live[r].tokens + (int(allowed[c]),), float(totals[r, c]))
                 for r, c in zip(rows, cols)]
        cands.sort(key=lambda h: (-h.score(cfg.length_normalize), h.tokens))
        live = []
        for h in cands[:cfg.beam]:
            if h.tokens[-1] == EOS:
                finished.append(GenerationHypothesis(h.tokens, h.logp, True))
            else:
                live.append(h)
        if finished and live and not cfg.length_normalize:
            if max(h.logp for h in finished) >= live[0].logp:
                break
    if finished:
        return min(finished, key=lambda h: _sort_key(h, cfg.length_normalize))
    return min(live, key=lambda h: _sort_key(h, cfg.length_normalize))


def greedy_scores(scorer: Scorer, cfg: GenConfig) -> GenerationHypothesis:
    allowed = cfg.candidates()
    tokens, total = [BOS], 0.0
    while len(tokens) < cfg.max_tokens:
        logp = scorer(np.array([tokens]))[0]
        tok = int(allowed[int(np.argmax(logp[allowed]))])  # argmax keeps the lowest index on ties
        tokens.append(tok)
        total += float(logp[tok])
        if tok == EOS:
            return GenerationHypothesis(tuple(tokens), total, True)
    return GenerationHypothesis(tuple(tokens), total, False)


def sample_scores(scorer: Scorer, cfg: GenConfig) -> GenerationHypothesis:
    allowed = cfg.candidates()
    rng = make_rng(cfg.seed)
    tokens, total = [BOS], 0.0
    while len(tokens) < cfg.max_tokens:
        logp = scorer(np.array([tokens]))[0]
        z = logp[allowed] / cfg.temperature
        p = np.exp(z - z.max())
        tok = int(allowed[rng.choice(len(allowed), p=p / p.sum())])
        tokens.append(tok)
        total += float(logp[tok])
        if tok == EOS:
            return GenerationHypothesis(tuple(tokens), total, True)
    return GenerationHypothesis(tuple(tokens), total, False)


def beam_search(pose, params: dict, config: DecoderConfig, cfg: GenConfig = GenConfig()) -> GenerationHypothesis:
    _check_budget(config, cfg)
    return beam_search_scores(make_scorer(pose, params, config), cfg)


def greedy_decode(pose, params: dict, config: DecoderConfig, cfg: GenConfig = GenConfig()) -> GenerationHypothesis:
    _check_budget(config, cfg)
    return greedy_scores(make_scorer(pose, params, config), cfg)


def sample_decode(pose, params: dict, config: DecoderConfig, cfg: GenConfig = GenConfig()) -> GenerationHypothesis:
    _check_budget(config, cfg)
    return sample_scores(make_scorer(pose, params, config), cfg)


def _check_budget(config: DecoderConfig, cfg: GenConfig) -> None:
    if cfg.max_tokens > config.max_seq_len:
        raise ValueError(f"max_tokens {cfg.max_tokens} exceeds decoder max_seq_len {config.max_seq_len}")


def generate_to_midi(pose, params: dict, config: DecoderConfig, cfg: GenConfig = GenConfig()
                     ) -> tuple[list[NoteEvent], bytes, GenerationHypothesis]:
    hyp = beam_search(pose, params, config, cfg)
    notes = detokenize(hyp.tokens)
    return notes, write_smf(notes), hyp
