"""Synthetic ad pairs for tests and smoke runs.

A long ad is a sequence of shots, each a drifting crop of its own random
texture, with band-limited noise per shot in a WAV sidecar. The short ad excerpts a
contiguous part of every kept long shot, in temporal order. Kept shots are
drawn in warm colours over high-band noise, the rest in cool colours
over low-band noise, so the importance signal is learnable from both streams. Kept
sets are chosen so the greedy budgeted selection over the true labels
returns exactly the kept set.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import STANDARD_FPS
from .media import AUDIO_SAMPLE_RATE, write_video, write_wav

FRAME_SIZE = (192, 144)  # width, height


@dataclass
class SyntheticPair:
    pair_id: str
    long_file: Path
    short_file: Path
    long_bounds: list[tuple[int, int]]
    short_bounds: list[tuple[int, int]]
    mapping: dict[int, int]  # short shot -> long shot, the construction truth
    fps: float

    @property
    def kept(self) -> set[int]:
        return set(self.mapping.values())


def _warm(rng):
    # BGR, red dominant
    return (int(rng.integers(0, 70)), int(rng.integers(0, 110)), int(rng.integers(150, 256)))


def _cool(rng):
    return (int(rng.integers(150, 256)), int(rng.integers(0, 110)), int(rng.integers(0, 70)))


def _texture(rng: np.random.Generator, size, kept: bool) -> np.ndarray:
    """Random shapes on a plain ground; kept shots warm, the rest cool."""
    w, h = size
    palette = _warm if kept else _cool
    img = np.empty((h, w, 3), np.uint8)
    img[:] = palette(rng)
    for _ in range(int(rng.integers(18, 30))):
        color = palette(rng) if rng.random() < 0.7 else tuple(int(c) for c in rng.integers(0, 256, 3))
        kind = rng.integers(0, 3)
        x, y = int(rng.integers(0, w)), int(rng.integers(0, h))
        if kind == 0:
            x2, y2 = x + int(rng.integers(8, 50)), y + int(rng.integers(8, 50))
            cv2.rectangle(img, (x, y), (x2, y2), color, -1)
        elif kind == 1:
            cv2.circle(img, (x, y), int(rng.integers(5, 25)), color, -1)
        else:
            pts = rng.integers(0, [w, h], size=(3, 2)).astype(np.int32)
            cv2.fillPoly(img, [pts], color)
    return img


def _shot_lengths(rng, total: int, fps: float) -> list[int]:
    lengths = []
    while sum(lengths) < total:
        lengths.append(int(round(rng.uniform(0.8, 3.0) * fps)))
    lengths[-1] -= sum(lengths) - total
    if lengths[-1] < int(0.5 * fps):
        short = lengths.pop()
        lengths[-1] += short
    return lengths


def _choose_kept(rng, durations: list[float], budget: float) -> list[int]:
    """Kept set whose total reaches the budget but drops below it without any one member."""
    for _ in range(10000):
        order = rng.permutation(len(durations))
        kept, total = [], 0.0
        for i in order:
            kept.append(int(i))
            total += durations[i]
            if total >= budget:
                break
        if total >= budget and total - min(durations[i] for i in kept) < budget:
            return sorted(kept)
    raise RuntimeError("could not draw a kept set")


def _tone(rng, n: int, kept: bool) -> np.ndarray:
    """Band-limited noise: upper half of the spectrum for kept shots, lower half otherwise."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    cut = len(spectrum) // 2
    if kept:
        spectrum[:cut] = 0
    else:
        spectrum[cut:] = 0
    x = np.fft.irfft(spectrum, n)
    return 0.25 * x / (x.std() + 1e-12)


def make_pair(out_dir: str | Path, pair_id: str, seed: int, long_seconds: float = 30.0,
              budget: float = 15.0, fps: float = STANDARD_FPS, size=FRAME_SIZE) -> SyntheticPair:
    rng = np.random.default_rng(seed)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n_long = int(round(long_seconds * fps))
    lengths = _shot_lengths(rng, n_long, fps)
    bounds, start = [], 0
    for n in lengths:
        bounds.append((start, start + n - 1))
        start += n
    kept = _choose_kept(rng, [n / fps for n in lengths], budget)

    w, h = size
    pad = 24
    canvases = [_texture(rng, (w + 2 * pad, h + 2 * pad), i in kept) for i in range(len(bounds))]
    drift = [rng.uniform(-0.2, 0.2, 2) for _ in bounds]
    frames = []
    for i, (a, b) in enumerate(bounds):
        for k in range(b - a + 1):
            dx, dy = np.clip(np.round(drift[i] * k), -pad, pad).astype(int)
            frames.append(canvases[i][pad + dy:pad + dy + h, pad + dx:pad + dx + w])

    spf = AUDIO_SAMPLE_RATE / fps
    audio = np.concatenate([
        _tone(rng, int(round((b + 1) * spf)) - int(round(a * spf)), i in kept) for i, (a, b) in enumerate(bounds)
    ])

    # short ad: a centred excerpt of each kept shot, scaled to fill the budget
    kept_frames = sum(lengths[i] for i in kept)
    scale = min(1.0, budget * fps / kept_frames)
    short_frames, short_audio, short_bounds, mapping = [], [], [], {}
    for j, i in enumerate(kept):
        a, b = bounds[i]
        n = max(3, int(round(lengths[i] * scale)))
        s0 = a + (lengths[i] - n) // 2
        s = len(short_frames)
        short_bounds.append((s, s + n - 1))
        short_frames.extend(frames[s0:s0 + n])
        short_audio.append(audio[int(round(s0 * spf)):int(round((s0 + n) * spf))])
        mapping[j] = i

    long_file = out_dir / f"{pair_id}_long.avi"
    short_file = out_dir / f"{pair_id}_short.avi"
    write_video(long_file, frames, fps)
    write_wav(long_file.with_suffix(".wav"), audio)
    write_video(short_file, short_frames, fps)
    write_wav(short_file.with_suffix(".wav"), np.concatenate(short_audio))
    return SyntheticPair(pair_id, long_file, short_file, bounds, short_bounds, mapping, fps)


def boundary_probabilities(bounds, rng: np.random.Generator, blips: int = 3) -> np.ndarray:
    """Detector-like output: high at every shot's last frame, low noise elsewhere,
    plus a few mid-level blips that only low thresholds turn into cuts."""
    n = bounds[-1][1] + 1
    p = rng.uniform(0.0, 0.05, n)
    for _, b in bounds[:-1]:
        p[b] = rng.uniform(0.85, 1.0)
    interior = [f for a, b in bounds for f in range(a + 2, b - 1)]
    for f in rng.choice(interior, size=min(blips, len(interior)), replace=False):
        p[f] = rng.uniform(0.15, 0.45)
    return p


def make_fixture_set(out_dir: str | Path, n_pairs: int = 10, seed: int = 0,
                     long_seconds: float = 30.0) -> tuple[Path, list[SyntheticPair]]:
    """Write videos, WAV sidecars, boundary probabilities and a ``raw.json`` for build-dataset."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    pairs, raw = [], []
    for k in range(n_pairs):
        pid = f"p{k:03d}"
        sp = make_pair(out_dir, pid, int(rng.integers(2**31)), long_seconds)
        entry = {"pair_id": pid}
        for side, file, bounds in (("long", sp.long_file, sp.long_bounds), ("short", sp.short_file, sp.short_bounds)):
            probs = boundary_probabilities(bounds, rng)
            prob_file = file.with_suffix(".probs.txt")
            prob_file.write_text("".join(f"{x:.6f}\n" for x in probs))
            entry[side] = {"video_id": f"{pid}_{side}", "file": file.name, "probabilities": prob_file.name}
        raw.append(entry)
        pairs.append(sp)
    raw_path = out_dir / "raw.json"
    raw_path.write_text(json.dumps(raw, indent=1) + "\n")
    truth = {sp.pair_id: {str(k): v for k, v in sp.mapping.items()} for sp in pairs}
    (out_dir / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    return raw_path, pairs
