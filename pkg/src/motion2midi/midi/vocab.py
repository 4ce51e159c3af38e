"""Performance-event vocabulary: 88 note-on, 88 note-off, 32 velocity, 32 time-shift, 3 specials."""

from __future__ import annotations

from typing import NamedTuple

from ..numerics import VocabularyError

LOWEST_PITCH = 21
HIGHEST_PITCH = 108
NUM_PITCHES = HIGHEST_PITCH - LOWEST_PITCH + 1  # 88
NUM_VELOCITY_BINS = 32
NUM_TIME_SHIFTS = 32

NOTE_ON_OFFSET = 0
NOTE_OFF_OFFSET = NOTE_ON_OFFSET + NUM_PITCHES  # 88
VELOCITY_OFFSET = NOTE_OFF_OFFSET + NUM_PITCHES  # 176
TIME_SHIFT_OFFSET = VELOCITY_OFFSET + NUM_VELOCITY_BINS  # 208
CONTENT_SIZE = TIME_SHIFT_OFFSET + NUM_TIME_SHIFTS  # 240

BOS = CONTENT_SIZE  # 240
EOS = BOS + 1  # 241
PAD = EOS + 1  # 242
VOCAB_SIZE = PAD + 1  # 243

_RANGES = (
    ("NoteOn", NOTE_ON_OFFSET, NUM_PITCHES),
    ("NoteOff", NOTE_OFF_OFFSET, NUM_PITCHES),
    ("Velocity", VELOCITY_OFFSET, NUM_VELOCITY_BINS),
    ("TimeShift", TIME_SHIFT_OFFSET, NUM_TIME_SHIFTS),
)
_SPECIALS = {"BOS": BOS, "EOS": EOS, "PAD": PAD}


class PerformanceToken(NamedTuple):
    kind: str
    value: int = 0

    def __str__(self) -> str:
        return self.kind if self.kind in _SPECIALS else f"{self.kind}({self.value})"


def token_of(index: int) -> PerformanceToken:
    for kind, offset, size in _RANGES:
        if offset <= index < offset + size:
            return PerformanceToken(kind, index - offset)
    for kind, special in _SPECIALS.items():
        if index == special:
            return PerformanceToken(kind)
    raise VocabularyError(f"token index {index} outside [0, {VOCAB_SIZE})")


def index_of(token: PerformanceToken) -> int:
    if token.kind in _SPECIALS:
        return _SPECIALS[token.kind]
    for kind, offset, size in _RANGES:
        if kind == token.kind:
            if not 0 <= token.value < size:
                raise VocabularyError(f"{token.kind} value {token.value} outside [0, {size})")
            return offset + token.value
    raise VocabularyError(f"unknown token kind {token.kind!r}")


def note_on(pitch_index: int) -> int:
    return NOTE_ON_OFFSET + pitch_index


def note_off(pitch_index: int) -> int:
    return NOTE_OFF_OFFSET + pitch_index


def velocity(bin_: int) -> int:
    return VELOCITY_OFFSET + bin_


def time_shift(bin_: int) -> int:
    return TIME_SHIFT_OFFSET + bin_


def describe(indices) -> str:
    return " ".join(str(token_of(int(i))) for i in indices)
