"""Standard MIDI File reading and writing.

Writer layout (bit-exact, documented in README):

* ``MThd`` length 6, format 0, one track, division 500 ticks per quarter.
* One ``MTrk``: a tempo meta event of 500000 us per quarter at delta 0, so one
  tick is exactly one millisecond; then note events on channel 0 sorted by
  tick (note-offs before note-ons at equal ticks, then ascending pitch),
  written as ``0x90 pitch velocity`` / ``0x80 pitch 0`` without running
  status; then an end-of-track meta event at delta 0.

The reader accepts format 0 and 1 files, honours tempo changes and running
status, merges all tracks and treats a note-on with velocity 0 as a note-off.
"""

from __future__ import annotations

import logging
import struct
from collections import defaultdict, deque
from fractions import Fraction
from typing import Iterable

from .codec import NoteEvent
from . import vocab as V

log = logging.getLogger(__name__)

DIVISION = 500
TEMPO_US = 500_000
DEFAULT_TEMPO_US = 500_000


class SmfParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"byte {offset}: {message}")
        self.offset = offset


def encode_vlq(value: int) -> bytes:
    if value < 0 or value > 0x0FFFFFFF:
        raise ValueError(f"VLQ value {value} out of range")
    out = [value & 0x7F]
    value >>= 7
    while value:
        out.append(0x80 | (value & 0x7F))
        value >>= 7
    return bytes(reversed(out))


def read_vlq(data: bytes, pos: int, end: int | None = None) -> tuple[int, int]:
    """Return (value, next position); at most four bytes are allowed."""
    end = len(data) if end is None else end
    start = pos
    value = 0
    for _ in range(4):
        if pos >= end:
            raise SmfParseError("truncated variable-length quantity", start)
        byte = data[pos]
        pos += 1
        value = (value << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return value, pos
    raise SmfParseError("variable-length quantity longer than 4 bytes", start)


def _ms_ticks(seconds: float) -> int:
    return int(round(seconds * 1000.0))


def write_smf(notes: Iterable[NoteEvent]) -> bytes:
    events = []
    for n in notes:
        events.append((_ms_ticks(n.onset), 1, n.pitch, n.velocity))
        events.append((_ms_ticks(n.offset), 0, n.pitch, 0))
    events.sort(key=lambda e: (e[0], e[1], e[2]))

    track = bytearray(b"\x00\xff\x51\x03" + TEMPO_US.to_bytes(3, "big"))
    now = 0
    for tick, is_on, pitch, vel in events:
        track += encode_vlq(tick - now)
        now = tick
        track += bytes((0x90, pitch, vel)) if is_on else bytes((0x80, pitch, 0))
    track += b"\x00\xff\x2f\x00"
    header = b"MThd" + struct.pack(">IHHH", 6, 0, 1, DIVISION)
    return header + b"MTrk" + struct.pack(">I", len(track)) + bytes(track)


_DATA_LENGTH = {0x80: 2, 0x90: 2, 0xA0: 2, 0xB0: 2, 0xC0: 1, 0xD0: 1, 0xE0: 2}


def _parse_track(data: bytes, pos: int, end: int, track_no: int, events: list) -> None:
    tick = 0
    status = None
    order = 0
    while pos < end:
        delta, pos = read_vlq(data, pos, end)
        tick += delta
        if pos >= end:
            raise SmfParseError("event truncated", pos)
        byte = data[pos]
        if byte == 0xFF:
            if pos + 2 > end:
                raise SmfParseError("meta event truncated", pos)
            kind = data[pos + 1]
            length, body = read_vlq(data, pos + 2, end)
            if body + length > end:
                raise SmfParseError("meta event runs past end of track", pos)
            if kind == 0x51:
                if length != 3:
                    raise SmfParseError("tempo event must carry 3 bytes", pos)
                events.append((tick, track_no, order, "tempo", int.from_bytes(data[body:body + 3], "big"), 0))
            elif kind == 0x2F:
                return
            pos = body + length
            status = None
        elif byte in (0xF0, 0xF7):
            length, body = read_vlq(data, pos + 1, end)
            if body + length > end:
                raise SmfParseError("sysex runs past end of track", pos)
            pos = body + length
            status = None
        else:
            if byte & 0x80:
                status = byte
                pos += 1
            elif status is None:
                raise SmfParseError("data byte without running status", pos)
            if status >= 0xF0:
                raise SmfParseError(f"unsupported system message 0x{status:02x}", pos)
            need = _DATA_LENGTH[status & 0xF0]
            if pos + need > end:
                raise SmfParseError("channel event truncated", pos)
            args = data[pos:pos + need]
            pos += need
            kind = status & 0xF0
            channel = status & 0x0F
            if kind == 0x90 and args[1] > 0:
                events.append((tick, track_no, order, "on", (channel, args[0]), args[1]))
            elif kind == 0x80 or (kind == 0x90 and args[1] == 0):
                events.append((tick, track_no, order, "off", (channel, args[0]), 0))
        order += 1


def read_smf(data: bytes) -> list[NoteEvent]:
    """Parse an SMF into notes sorted by (onset, pitch)."""
    if len(data) < 14 or data[:4] != b"MThd":
        raise SmfParseError("missing MThd header", 0)
    length = struct.unpack(">I", data[4:8])[0]
    if length < 6 or 8 + length > len(data):
        raise SmfParseError("header chunk truncated", 4)
    fmt, ntracks, division = struct.unpack(">HHH", data[8:14])
    if fmt not in (0, 1):
        raise SmfParseError(f"unsupported SMF format {fmt}", 8)
    if division & 0x8000:
        fps = 256 - (division >> 8)
        ticks_per_frame = division & 0xFF
        smpte_ticks_per_second = fps * ticks_per_frame
    else:
        smpte_ticks_per_second = None
        if division == 0:
            raise SmfParseError("division of zero ticks per quarter", 12)

    events: list = []
    pos = 8 + length
    found = 0
    while pos < len(data) and found < ntracks:
        if pos + 8 > len(data):
            raise SmfParseError("chunk header truncated", pos)
        tag = data[pos:pos + 4]
        size = struct.unpack(">I", data[pos + 4:pos + 8])[0]
        body = pos + 8
        if body + size > len(data):
            raise SmfParseError(f"chunk {tag!r} truncated", pos)
        if tag == b"MTrk":
            _parse_track(data, body, body + size, found, events)
            found += 1
        pos = body + size
    if found < ntracks:
        raise SmfParseError(f"expected {ntracks} tracks, found {found}", pos)

    events.sort(key=lambda e: (e[0], e[3] not in ("tempo",), e[1], e[2]))

    # tick -> seconds, exact rational arithmetic across tempo segments
    seg_tick, seg_time, tempo = 0, Fraction(0), DEFAULT_TEMPO_US

    def seconds(tick: int) -> Fraction:
        if smpte_ticks_per_second is not None:
            return Fraction(tick, smpte_ticks_per_second)
        return seg_time + Fraction((tick - seg_tick) * tempo, division * 1_000_000)

    open_notes: dict[tuple[int, int], deque] = defaultdict(deque)
    notes: list[NoteEvent] = []
    for tick, _, _, kind, key, vel in events:
        if kind == "tempo":
            seg_time = seconds(tick)
            seg_tick, tempo = tick, key
        elif kind == "on":
            open_notes[key].append((seconds(tick), vel))
        elif open_notes[key]:
            start, v = open_notes[key].popleft()
            end = seconds(tick)
            pitch = key[1]
            if not V.LOWEST_PITCH <= pitch <= V.HIGHEST_PITCH:
                log.warning("dropping pitch %d outside the 88-key range", pitch)
            elif end > start:
                notes.append(NoteEvent(onset=float(start), pitch=pitch, offset=float(end), velocity=v))
    return sorted(notes)
