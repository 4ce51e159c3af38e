"""Radix-2 FFT and log-magnitude STFT."""

from __future__ import annotations

import numpy as np


class FftLengthError(ValueError):
    pass


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft(x, axis: int = -1) -> np.ndarray:
    """Iterative Cooley-Tukey FFT along ``axis``; length must be a power of two."""
    a = np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)
    n = a.shape[-1]
    if n < 1 or n & (n - 1):
        raise FftLengthError(f"fft length must be a power of two, got {n}")
    a = a[..., _bit_reverse(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1).reshape(a.shape)
        size *= 2
    return np.moveaxis(a, -1, axis)


def ifft(x, axis: int = -1) -> np.ndarray:
    a = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(a), axis=axis)) / a.shape[axis]


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def stft(wave, win: int = 1024, hop: int = 256) -> np.ndarray:
    """Frames x (win/2 + 1) matrix of ``log(1 + |X|)``, Hann-windowed, no padding."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.shape[-1] < win:
        raise ValueError(f"wave of {wave.shape[-1]} samples is shorter than the window ({win})")
    n_frames = 1 + (wave.shape[-1] - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = wave[idx] * hann(win)
    spec = fft(frames)[:, : win // 2 + 1]
    return np.log1p(np.abs(spec))
