"""Notes <-> performance-event token streams, and key transposition."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from ..numerics import VocabularyError
from . import vocab as V

DEFAULT_BIN_MS = 10
DEFAULT_VELOCITY_BIN = 16


class PitchRangeError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class NoteEvent:
    onset: float
    pitch: int
    offset: float
    velocity: int

    def __post_init__(self):
        if not V.LOWEST_PITCH <= self.pitch <= V.HIGHEST_PITCH:
            raise PitchRangeError(f"pitch {self.pitch} outside [{V.LOWEST_PITCH}, {V.HIGHEST_PITCH}]")
        if not self.onset >= 0:
            raise ValueError(f"onset {self.onset} must be >= 0")
        if not self.offset > self.onset:
            raise ValueError(f"offset {self.offset} must exceed onset {self.onset}")
        if not 1 <= self.velocity <= 127:
            raise ValueError(f"velocity {self.velocity} outside [1, 127]")


def velocity_bin(velocity: int) -> int:
    return velocity * V.NUM_VELOCITY_BINS // 128


def bin_velocity(bin_: int) -> int:
    return max(1, bin_ * (128 // V.NUM_VELOCITY_BINS))


def _steps(seconds: float, bin_ms: int) -> int:
    return int(seconds * 1000.0 / bin_ms + 0.5)


def tokenize(notes: Iterable[NoteEvent], bin_ms: int = DEFAULT_BIN_MS) -> list[int]:
    """Encode notes as token indices framed by BOS ... EOS.

    Simultaneous events put note-offs first, then ascending pitch.  Gaps
    become greedy runs of the longest time shifts; a velocity token precedes
    a note-on only when the velocity bin changes.
    """
    events = []
    for n in notes:
        if not V.LOWEST_PITCH <= n.pitch <= V.HIGHEST_PITCH:
            raise PitchRangeError(f"pitch {n.pitch} outside [{V.LOWEST_PITCH}, {V.HIGHEST_PITCH}]")
        on = _steps(n.onset, bin_ms)
        off = max(_steps(n.offset, bin_ms), on + 1)
        events.append((on, 1, n.pitch, n.velocity))
        events.append((off, 0, n.pitch, 0))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    tokens = [V.BOS]
    now = 0
    current_bin = None
    for step, is_on, pitch, vel in events:
        gap = step - now
        while gap > 0:
            shift = min(gap, V.NUM_TIME_SHIFTS)
            tokens.append(V.time_shift(shift - 1))
            gap -= shift
        now = step
        key = pitch - V.LOWEST_PITCH
        if is_on:
            b = velocity_bin(vel)
            if b != current_bin:
                tokens.append(V.velocity(b))
                current_bin = b
            tokens.append(V.note_on(key))
        else:
            tokens.append(V.note_off(key))
    tokens.append(V.EOS)
    return tokens


def detokenize(tokens: Iterable[int], bin_ms: int = DEFAULT_BIN_MS) -> list[NoteEvent]:
    """Decode token indices, repairing malformed streams.

    Reading stops at the first EOS.  A note-off with no open note is dropped,
    a repeated note-on closes the open note of that pitch, and notes still
    open at the end close at the final time.  Every note lasts at least one
    time bin.
    """
    now = 0
    vel_bin = DEFAULT_VELOCITY_BIN
    open_notes: dict[int, tuple[int, int]] = {}
    spans: list[tuple[int, int, int, int]] = []

    def close(key: int, end: int) -> None:
        start, vel = open_notes.pop(key)
        spans.append((start, key, max(end, start + 1), vel))

    for raw in tokens:
        idx = int(raw)
        if not 0 <= idx < V.VOCAB_SIZE:
            raise VocabularyError(f"token index {idx} outside [0, {V.VOCAB_SIZE})")
        if idx == V.EOS:
            break
        if idx >= V.CONTENT_SIZE:
            continue
        if idx >= V.TIME_SHIFT_OFFSET:
            now += idx - V.TIME_SHIFT_OFFSET + 1
        elif idx >= V.VELOCITY_OFFSET:
            vel_bin = idx - V.VELOCITY_OFFSET
        elif idx >= V.NOTE_OFF_OFFSET:
            key = idx - V.NOTE_OFF_OFFSET
            if key in open_notes:
                close(key, now)
        else:
            key = idx - V.NOTE_ON_OFFSET
            if key in open_notes:
                if open_notes[key][0] == now:
                    del open_notes[key]
                else:
                    close(key, now)
            open_notes[key] = (now, bin_velocity(vel_bin))
    for key in sorted(open_notes):
        close(key, now)

    notes = [NoteEvent(onset=start * bin_ms / 1000.0, pitch=key + V.LOWEST_PITCH,
                       offset=end * bin_ms / 1000.0, velocity=vel)
             for start, key, end, vel in spans]
    return sorted(notes)


def transpose(notes: Sequence[NoteEvent], semitones: int) -> list[NoteEvent]:
    """Shift every pitch by ``semitones``; timing and velocity are untouched."""
    bad = [n for n in notes if not V.LOWEST_PITCH <= n.pitch + semitones <= V.HIGHEST_PITCH]
    if bad:
        listing = ", ".join(f"pitch {n.pitch} at {n.onset:g}s" for n in bad)
        raise PitchRangeError(f"transposing by {semitones:+d} leaves the 88-key range: {listing}")
    return [replace(n, pitch=n.pitch + semitones) for n in notes]
