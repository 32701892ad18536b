"""Greedy duration-budgeted shot selection and cut-list assembly."""
from __future__ import annotations

import json
import os
import subprocess
from fractions import Fraction
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import AdPair, Shot, VideoRef
from .errors import ShapeError, ToolchainMissingError
from .media import audio_sidecar, find_ffmpeg

DEFAULT_BUDGET = 15.0


@dataclass(frozen=True)
class ShotScore:
    shot_id: int
    mean_score: float
    duration_seconds: float
    rank: int = 0


@dataclass
class SelectionResult:
    selected_shot_ids: frozenset[int]
    playback_order: list[int]
    total_duration_seconds: float
    budget_seconds: float = DEFAULT_BUDGET
    ranked: tuple[ShotScore, ...] = ()


def rank_shots(scores: Sequence[ShotScore]) -> list[ShotScore]:
    """Descending mean score, ties to the smaller shot id; ranks start at 1."""
    order = sorted(scores, key=lambda s: (-s.mean_score, s.shot_id))
    return [ShotScore(s.shot_id, s.mean_score, s.duration_seconds, r) for r, s in enumerate(order, 1)]


def aggregate_shot_scores(frame_scores, shots: Sequence[Shot], fps: float) -> list[ShotScore]:
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    n = shots[-1].end_frame + 1 if shots else 0
    if frame_scores.shape != (n,):
        raise ShapeError(f"{frame_scores.shape[0]} frame scores for a {n}-frame video")
    raw = [ShotScore(s.shot_id, float(frame_scores[s.start_frame:s.end_frame + 1].mean()),
                     s.duration_seconds(fps)) for s in shots]
    ranks = {s.shot_id: s.rank for s in rank_shots(raw)}
    return [ShotScore(s.shot_id, s.mean_score, s.duration_seconds, ranks[s.shot_id]) for s in raw]


def select_shots(scores: Sequence[ShotScore], budget_seconds: float = DEFAULT_BUDGET,
                 start_frames: dict[int, int] | None = None) -> SelectionResult:
    """Take shots in rank order until the running duration reaches the budget.

    The last shot is kept whole, so the total may overshoot. Playback order
    is temporal (by start frame when given, otherwise by shot id).
    """
    if budget_seconds <= 0:
        raise ValueError("budget must be positive")
    if not scores:
        raise ValueError("no shots to select from")
    ranked = rank_shots(scores)
    chosen, total = [], 0.0
    for s in ranked:
        chosen.append(s.shot_id)
        total += s.duration_seconds
        if total >= budget_seconds:
            break
    key = (lambda i: start_frames[i]) if start_frames else (lambda i: i)
    return SelectionResult(frozenset(chosen), sorted(chosen, key=key), total, budget_seconds, tuple(ranked))


def select_for_video(frame_scores, video: VideoRef, budget_seconds: float = DEFAULT_BUDGET) -> SelectionResult:
    scores = aggregate_shot_scores(frame_scores, video.shots, video.fps)
    return select_shots(scores, budget_seconds, {s.shot_id: s.start_frame for s in video.shots})


def emit_cut_list(sel: SelectionResult, pair: AdPair) -> dict:
    video = pair.long
    if not sel.playback_order:
        raise ValueError("empty selection")
    segments = []
    for sid in sel.playback_order:
        s = video.shots[sid]
        segments.append({
            "shot_id": sid,
            "start_frame": s.start_frame,
            "end_frame": s.end_frame,
            "start_s": s.start_frame / video.fps,
            "end_s": (s.end_frame + 1) / video.fps,
        })
    return {
        "pair_id": pair.pair_id,
        "budget": sel.budget_seconds,
        "fps": video.fps,
        "segments": segments,
        "total_s": sum(seg["end_s"] - seg["start_s"] for seg in segments),
    }


def write_cut_list(cut_list: dict, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cut_list, indent=1, sort_keys=True) + "\n")


def assemble(cut_list: dict, source: str | os.PathLike, output: str | os.PathLike,
             ffmpeg: str | None = None) -> Path:
    """Concatenate the cut-list segments of ``source`` with ffmpeg.

    Audio comes from the source's own track, or from its WAV sidecar when one
    exists; each audio segment is trimmed with its video segment.
    """
    ffmpeg = ffmpeg or find_ffmpeg()
    segs = cut_list["segments"]
    side = audio_sidecar(source)
    inputs = ["-i", str(source)]
    audio_in = None
    if side.exists():
        inputs += ["-i", str(side)]
        audio_in = "1:a"
    else:
        try:
            probe = subprocess.run([ffmpeg, "-hide_banner", "-i", str(source)], capture_output=True, text=True)
        except FileNotFoundError as exc:
            raise ToolchainMissingError(f"cannot run ffmpeg at {ffmpeg}") from exc
        if "Audio:" in probe.stderr:
            audio_in = "0:a"
    parts, labels = [], []
    for i, seg in enumerate(segs):
        a, b = seg["start_frame"], seg["end_frame"] + 1
        parts.append(f"[0:v]trim=start_frame={a}:end_frame={b},setpts=PTS-STARTPTS[v{i}]")
        labels.append(f"[v{i}]")
        if audio_in:
            parts.append(f"[{audio_in}]atrim=start={seg['start_s']}:end={seg['end_s']},asetpts=PTS-STARTPTS[a{i}]")
            labels.append(f"[a{i}]")
    n = len(segs)
    maps = ["-map", "[vout]"]
    if audio_in:
        parts.append("".join(labels) + f"concat=n={n}:v=1:a=1[vout][aout]")
        maps += ["-map", "[aout]"]
    else:
        parts.append("".join(labels) + f"concat=n={n}:v=1:a=0[vout]")
    cmd = [ffmpeg, "-v", "error", "-y", *inputs, "-filter_complex", ";".join(parts), *maps,
           "-c:v", "mjpeg", "-q:v", "3"]
    if "fps" in cut_list:
        # without an explicit rate the AVI muxer falls back to a fine timebase
        cmd += ["-r", str(Fraction(cut_list["fps"]).limit_denominator(100000))]
    if audio_in:
        cmd += ["-c:a", "pcm_s16le"]
    cmd.append(str(output))
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True)
    except FileNotFoundError as exc:
        raise ToolchainMissingError(f"cannot run ffmpeg at {ffmpeg}") from exc
    if proc.returncode != 0:
        raise RuntimeError(f"ffmpeg failed: {proc.stderr.strip()}")
    return Path(output)
