"""Per-stream feature maps built from clip sets."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from ..media import AudioTrack, FrameSource, VideoFileFrames


@dataclass
class FeatureMap:
    stream: str
    values: np.ndarray  # T x D float32
    backend_id: str
    clips: list = field(default_factory=list)  # [focal_frame, shot_id] per row
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeError(f"feature map must be 2-D, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("feature map has non-finite entries")

    @property
    def num_clips(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _clip_rows(clips):
    return [[c.focal_frame, c.shot_id] for c in clips.clips]


def _check_stream(backend, stream):
    if backend.spec.stream != stream:
        raise ShapeError(f"backend {backend.spec.backend_id} embeds {backend.spec.stream}, not {stream}")


def embed_visual(clips, backend, video_path=None, frame_source: FrameSource | None = None) -> FeatureMap:
    """Row t is the backend's embedding of clip t's frames (padding included)."""
    _check_stream(backend, "visual")
    frame_source = frame_source or VideoFileFrames()
    frames = frame_source.frames(video_path, clips.frame_indices)
    rows = [backend.embed_clip([frames[i] for i in c.frame_indices]) for c in clips.clips]
    values = np.stack(rows) if rows else np.zeros((0, backend.spec.dim), np.float32)
    return FeatureMap("visual", values, backend.spec.backend_id, _clip_rows(clips))


def embed_frame_level_baseline(clips, backend_2d, video_path=None,
                               frame_source: FrameSource | None = None) -> FeatureMap:
    """Row t is the mean of per-frame embeddings over clip t's frames."""
    _check_stream(backend_2d, "visual")
    frame_source = frame_source or VideoFileFrames()
    frames = frame_source.frames(video_path, clips.frame_indices)
    per_frame = {i: backend_2d.embed_frame(f) for i, f in frames.items()}
    rows = [np.mean([per_frame[i] for i in c.frame_indices], axis=0) for c in clips.clips]
    values = np.stack(rows) if rows else np.zeros((0, backend_2d.spec.dim), np.float32)
    return FeatureMap("visual", values, backend_2d.spec.backend_id + "+framemean", _clip_rows(clips))


def embed_audio(clips, waveform_source: AudioTrack, backend) -> FeatureMap:
    """Row t embeds the audio under clip t's span; silent tracks give silent spans."""
    _check_stream(backend, "audio")
    rows = [backend.embed_span(waveform_source.span(*c.audio_span), waveform_source.sample_rate)
            for c in clips.clips]
    values = np.stack(rows) if rows else np.zeros((0, backend.spec.dim), np.float32)
    flags = {"silent_audio": True} if waveform_source.silent else {}
    return FeatureMap("audio", values, backend.spec.backend_id, _clip_rows(clips), flags)


def zscore(fm: FeatureMap) -> FeatureMap:
    """Per-video column z-score. Ablation switch only; off in the default pipeline."""
    v = fm.values.astype(np.float64)
    sd = v.std(axis=0)
    sd[sd == 0] = 1.0
    out = (v - v.mean(axis=0)) / sd
    return FeatureMap(fm.stream, out, fm.backend_id + "+z", fm.clips, fm.flags)
