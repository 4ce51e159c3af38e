"""Automatic evaluation: teacher-forced NLL tables and the NDB diversity metric.

NDB pipeline: notes -> additive toy synth -> log-magnitude STFT (1024/256
Hann) -> time-mean 513-dim vector -> k-means cells fitted on the training
split -> per-cell two-proportion z-test between train and test occupancy.
"""

from __future__ import annotations

import io
import wave as wavefile
from dataclasses import dataclass, field
from pathlib import Path
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .dataset import PairedSample
from .midi import NoteEvent
from .numerics import make_rng
from .numerics.spectral import stft
from .trainer import Model, atomic_write, evaluate_nll


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class ToySynthSpec:
    sample_rate: int = 16000
    harmonics: tuple[float, ...] = (1.0, 0.5, 0.25)
    decay_seconds: float = 0.3
    clip_seconds: float = 6.0
    win: int = 1024
    hop: int = 256

    @property
    def num_samples(self) -> int:
        return int(round(self.clip_seconds * self.sample_rate))


def pitch_hz(pitch) -> np.ndarray:
    return 440.0 * 2.0 ** ((np.asarray(pitch, dtype=np.float64) - 69.0) / 12.0)


def synth(notes: Sequence[NoteEvent], spec: ToySynthSpec = ToySynthSpec()) -> np.ndarray:
    """Clip-length waveform, peak-normalised to 1 (all zeros when silent).

    Each note sounds from onset to offset (clipped to the clip) as decaying
    harmonics of its equal-tempered fundamental, scaled by velocity/127.
    Harmonics at or above Nyquist are dropped.
    """
    sr = spec.sample_rate
    out = np.zeros(spec.num_samples)
    for note in notes:
        start = int(round(note.onset * sr))
        stop = min(int(round(note.offset * sr)), out.size)
        if start >= stop:
            continue
        t = np.arange(stop - start) / sr
        env = np.exp(-t / spec.decay_seconds) * (note.velocity / 127.0)
        f0 = float(pitch_hz(note.pitch))
        tone = np.zeros_like(t)
        for h, amp in enumerate(spec.harmonics, start=1):
            if h * f0 < sr / 2:
                tone += amp * np.sin(2 * np.pi * h * f0 * t)
        out[start:stop] += env * tone
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def spectral_vector(wave: np.ndarray, spec: ToySynthSpec = ToySynthSpec()) -> np.ndarray:
    """Time-averaged ``log(1 + |STFT|)``: one (win/2 + 1)-vector per clip."""
    return stft(wave, spec.win, spec.hop).mean(axis=0)


def write_wav(path: str | Path, wave: np.ndarray, sample_rate: int = 16000) -> None:
    """16-bit PCM mono WAV, written atomically."""
    pcm = np.round(np.clip(wave, -1.0, 1.0) * 32767).astype("<i2")
    buf = io.BytesIO()
    with wavefile.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.tobytes())
    atomic_write(path, buf.getvalue())


# ---- k-means ----------------------------------------------------------------

@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective: list[float]  # sum of squared distances after each assignment step


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def assign(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per row (lowest index on ties)."""
    return np.argmin(_sq_dists(np.asarray(x, dtype=np.float64), centroids), axis=1)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        # all remaining points coincide with a centre: fall back to uniform picks
        idx = int(rng.choice(n, p=d2 / total)) if total > 0 else int(rng.integers(n))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(x, x[idx:idx + 1])[:, 0])
    return x[chosen].copy()


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """Lloyd iterations from a k-means++ start.

    Stops after ``max_iter`` updates or when the centroids move by less than
    ``tol`` relative to their norm.  An emptied cell keeps its old centroid,
    which keeps the objective non-increasing.
    """
    x = np.asarray(x, dtype=np.float64)
    if not 1 <= k <= x.shape[0]:
        raise MetricError(f"k={k} needs at least k points, got {x.shape[0]}")
    centroids = kmeans_pp_init(x, k, make_rng(seed))
    labels = assign(x, centroids)
    objective = [float(_sq_dists(x, centroids)[np.arange(len(x)), labels].sum())]
    for _ in range(max_iter):
        updated = centroids.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                updated[j] = members.mean(axis=0)
        shift = np.linalg.norm(updated - centroids) / max(np.linalg.norm(centroids), 1e-300)
        centroids = updated
        labels = assign(x, centroids)
        objective.append(float(_sq_dists(x, centroids)[np.arange(len(x)), labels].sum()))
        if shift < tol:
            break
    return KMeansResult(centroids, labels, objective)


# ---- NDB --------------------------------------------------------------------

@dataclass
class NdbReport:
    k: int
    alpha: float
    train_props: np.ndarray
    test_props: np.ndarray
    z: np.ndarray
    different: np.ndarray = field(repr=False)

    @property
    def ndb(self) -> int:
        return int(self.different.sum())

    def table(self) -> str:
        lines = [f"NDB {self.ndb}/{self.k} (alpha={self.alpha})",
                 "cell  train_share  test_share        z  different"]
        for j in range(self.k):
            lines.append(f"{j:4d}  {self.train_props[j]:11.4f}  {self.test_props[j]:10.4f}  "
                         f"{self.z[j]:7.3f}  {'yes' if self.different[j] else 'no'}")
        return "\n".join(lines) + "\n"


def two_proportion_z(count_a: np.ndarray, n_a: int, count_b: np.ndarray, n_b: int) -> np.ndarray:
    """Pooled two-proportion z statistic per cell (0 where both shares are 0 or 1)."""
    pa, pb = count_a / n_a, count_b / n_b
    pooled = (count_a + count_b) / (n_a + n_b)
    se = np.sqrt(pooled * (1.0 - pooled) * (1.0 / n_a + 1.0 / n_b))
    z = np.zeros_like(pa)
    ok = se > 0
    z[ok] = (pa[ok] - pb[ok]) / se[ok]
    return z


def ndb_features(train: np.ndarray, test: np.ndarray, k: int = 50, alpha: float = 0.05,
                 seed: int = 0) -> NdbReport:
    train = np.asarray(train, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if k > len(train):
        raise MetricError(f"k={k} exceeds the {len(train)} training clips")
    if len(test) == 0:
        raise MetricError("test split is empty")
    fit = kmeans(train, k, seed=seed)
    train_counts = np.bincount(fit.labels, minlength=k).astype(np.float64)
    test_counts = np.bincount(assign(test, fit.centroids), minlength=k).astype(np.float64)
    z = two_proportion_z(train_counts, len(train), test_counts, len(test))
    critical = NormalDist().inv_cdf(1.0 - alpha / 2.0)
    return NdbReport(k, alpha, train_counts / len(train), test_counts / len(test), z, np.abs(z) > critical)


def ndb(train_waves: Sequence[np.ndarray], test_waves: Sequence[np.ndarray], k: int = 50,
        alpha: float = 0.05, seed: int = 0, spec: ToySynthSpec = ToySynthSpec()) -> NdbReport:
    if k > len(train_waves):
        raise MetricError(f"k={k} exceeds the {len(train_waves)} training clips")
    train = np.stack([spectral_vector(w, spec) for w in train_waves])
    test = np.stack([spectral_vector(w, spec) for w in test_waves]) if len(test_waves) else np.zeros((0, 1))
    return ndb_features(train, test, k, alpha, seed)


# ---- NLL tables -------------------------------------------------------------

@dataclass(frozen=True)
class NllRow:
    model: str
    condition: str
    nll: float


def shuffled_coords(samples: Sequence[PairedSample]) -> list[np.ndarray]:
    """Clips rotated by one position: every token stream gets another sample's motion."""
    coords = [s.model_input() for s in samples]
    return coords[1:] + coords[:1]


def nll_report(models: Mapping[str, Model], samples: Sequence[PairedSample],
               batch_size: int = 16) -> list[NllRow]:
    """Full skeleton, hands zeroed, and mispaired-clip NLL for each model."""
    if len(samples) < 2:
        raise MetricError("the shuffled-pairing control needs at least two samples")
    rotated = shuffled_coords(samples)
    rows = []
    for name, model in models.items():
        rows.append(NllRow(name, "full", evaluate_nll(model, samples, batch_size)))
        rows.append(NllRow(name, "w/o hands", evaluate_nll(model, samples, batch_size, zero_hands=True)))
        rows.append(NllRow(name, "shuffled pairs", evaluate_nll(model, samples, batch_size, coords=rotated)))
    return rows


def format_nll_table(rows: Sequence[NllRow]) -> str:
    width = max([len(r.model) for r in rows] + [5])
    lines = [f"{'model':<{width}}  {'condition':<14}  nll"]
    lines += [f"{r.model:<{width}}  {r.condition:<14}  {r.nll:.6f}" for r in rows]
    return "\n".join(lines) + "\n"
