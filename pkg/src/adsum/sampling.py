"""Shot-constrained clips around sampled focal frames."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataset import Shot, TilingError


@dataclass(frozen=True)
class Clip:
    clip_index: int
    focal_frame: int
    frame_indices: tuple[int, ...]
    shot_id: int
    audio_span: tuple[float, float]


@dataclass
class ClipSet:
    video_id: str
    clips: list[Clip]
    sample_stride: int
    hws: int
    fps: float
    frame_count: int = 0

    def __len__(self) -> int:
        return len(self.clips)

    @property
    def focal_frames(self) -> list[int]:
        return [c.focal_frame for c in self.clips]

    @property
    def frame_indices(self) -> list[int]:
        """Every distinct frame any clip touches, ascending."""
        return sorted({f for c in self.clips for f in c.frame_indices})


def sample_focal_frames(frame_count: int, stride: int = 12) -> list[int]:
    if frame_count < 1 or stride < 1:
        raise ValueError("frame_count and stride must be >= 1")
    return list(range(0, frame_count, stride))


def audio_span_for(frame_indices: Sequence[int], fps: float) -> tuple[float, float]:
    """Seconds covered by a clip's frames: from the first frame's start to the last frame's end."""
    if fps <= 0:
        raise ValueError("fps must be positive")
    return min(frame_indices) / fps, (max(frame_indices) + 1) / fps


def clip_window(focal: int, shot: Shot, hws: int) -> tuple[int, ...]:
    # clamping to the shot replicates its edge frames, so the window size is fixed
    return tuple(min(max(focal + o, shot.start_frame), shot.end_frame) for o in range(-hws, hws + 1))


def build_clips(shots: Sequence[Shot], focal_frames: Sequence[int], hws: int,
                fps: float = 24000 / 1001, video_id: str = "", stride: int = 12) -> ClipSet:
    if hws < 0:
        raise ValueError("hws must be >= 0")
    starts = np.array([s.start_frame for s in shots])
    clips = []
    for t, f in enumerate(focal_frames):
        i = int(np.searchsorted(starts, f, side="right")) - 1
        if i < 0 or f > shots[i].end_frame:
            raise TilingError(f"focal frame {f} lies outside every shot")
        frames = clip_window(f, shots[i], hws)
        clips.append(Clip(t, int(f), frames, shots[i].shot_id, audio_span_for(frames, fps)))
    frame_count = shots[-1].end_frame + 1 if shots else 0
    return ClipSet(video_id, clips, stride, hws, fps, frame_count)


def clips_for_video(video, stride: int = 12, hws: int = 3) -> ClipSet:
    """Clip set of a ``VideoRef`` at the given stride and half-window size."""
    focal = sample_focal_frames(video.frame_count, stride)
    return build_clips(video.shots, focal, hws, video.fps, video.video_id, stride)


def num_clips(frame_count: int, stride: int) -> int:
    return math.ceil(frame_count / stride)
