"""Frame and audio access for video files.

Frames are decoded with OpenCV. Audio is read from a WAV sidecar next to the
video (``ad.avi`` -> ``ad.wav``) when present, otherwise extracted with ffmpeg
when the toolchain is available; a video with no audio yields silence.
"""
from __future__ import annotations

import logging
import os
import shutil
import subprocess
import tempfile
import wave
from pathlib import Path
from typing import Iterable, Protocol

import cv2
import numpy as np

from .errors import AudioDecodeError, FrameDecodeError, ToolchainMissingError

log = logging.getLogger(__name__)

AUDIO_SAMPLE_RATE = 16000


class FrameSource(Protocol):
    def frames(self, path: str | os.PathLike, indices: Iterable[int]) -> dict[int, np.ndarray]:
        ...


def probe_video(path: str | os.PathLike) -> tuple[int, float]:
    """Return (frame_count, fps), counting frames by decoding."""
    cap = cv2.VideoCapture(str(path))
    if not cap.isOpened():
        raise FrameDecodeError(f"cannot open video {path}")
    fps = float(cap.get(cv2.CAP_PROP_FPS))
    n = 0
    while cap.grab():
        n += 1
    cap.release()
    if n == 0 or fps <= 0:
        raise FrameDecodeError(f"video {path} has no decodable frames")
    return n, fps


class VideoFileFrames:
    """Sequential decoder that keeps only the requested frames (BGR uint8)."""

    def frames(self, path, indices):
        wanted = set(int(i) for i in indices)
        if not wanted:
            return {}
        cap = cv2.VideoCapture(str(path))
        if not cap.isOpened():
            raise FrameDecodeError(f"cannot open video {path}")
        last = max(wanted)
        out = {}
        idx = 0
        while idx <= last:
            if idx in wanted:
                ok, frame = cap.read()
                if not ok:
                    break
                out[idx] = frame
            elif not cap.grab():
                break
            idx += 1
        cap.release()
        missing = wanted - out.keys()
        if missing:
            raise FrameDecodeError(f"{path}: could not decode frame(s) {sorted(missing)[:5]}")
        return out


class ArrayFrames:
    """In-memory frame source keyed by path; handy for tests."""

    def __init__(self, videos: dict[str, np.ndarray]):
        self.videos = {str(k): v for k, v in videos.items()}

    def frames(self, path, indices):
        video = self.videos[str(path)]
        out = {}
        for i in indices:
            if not 0 <= i < len(video):
                raise FrameDecodeError(f"{path}: frame {i} out of range")
            out[int(i)] = video[i]
        return out


def write_video(path: str | os.PathLike, frames: Iterable[np.ndarray], fps: float) -> None:
    frames = iter(frames)
    first = next(frames)
    h, w = first.shape[:2]
    writer = cv2.VideoWriter(str(path), cv2.VideoWriter_fourcc(*"MJPG"), fps, (w, h))
    if not writer.isOpened():
        raise FrameDecodeError(f"cannot open video writer for {path}")
    writer.write(first)
    for f in frames:
        writer.write(f)
    writer.release()


def resample_indices(frame_count: int, src_fps: float, dst_fps: float) -> np.ndarray:
    """Source frame index shown at each output frame under nearest-frame resampling."""
    duration = frame_count / src_fps
    n_out = max(1, int(round(duration * dst_fps)))
    t = np.arange(n_out) / dst_fps
    return np.minimum(np.floor(t * src_fps + 1e-9).astype(int), frame_count - 1)


def standardize_fps(src: str | os.PathLike, dst: str | os.PathLike, target_fps: float) -> np.ndarray:
    """Write ``src`` resampled to ``target_fps``; returns the output->source frame map."""
    n, fps = probe_video(src)
    mapping = resample_indices(n, fps, target_fps)
    decoded = VideoFileFrames().frames(src, np.unique(mapping))
    write_video(dst, (decoded[i] for i in mapping), target_fps)
    return mapping


def find_ffmpeg() -> str:
    exe = os.environ.get("ADSUM_FFMPEG") or shutil.which("ffmpeg")
    if exe:
        return exe
    try:
        import imageio_ffmpeg
    except ImportError:
        raise ToolchainMissingError(
            "ffmpeg not found: install it, set ADSUM_FFMPEG, or pip install imageio-ffmpeg"
        ) from None
    return imageio_ffmpeg.get_ffmpeg_exe()


def audio_sidecar(path: str | os.PathLike) -> Path:
    return Path(path).with_suffix(".wav")


def read_wav(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read a PCM WAV as mono float32 in [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as wf:
            sr = wf.getframerate()
            width = wf.getsampwidth()
            nch = wf.getnchannels()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise AudioDecodeError(f"corrupt audio stream {path}: {exc}") from exc
    if width == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 4:
        data = np.frombuffer(raw, dtype="<i4").astype(np.float32) / 2147483648.0
    elif width == 1:
        data = (np.frombuffer(raw, dtype=np.uint8).astype(np.float32) - 128.0) / 128.0
    else:
        raise AudioDecodeError(f"unsupported sample width {width} in {path}")
    if nch > 1:
        data = data.reshape(-1, nch).mean(axis=1)
    return data, sr


def write_wav(path: str | os.PathLike, samples: np.ndarray, sample_rate: int = AUDIO_SAMPLE_RATE) -> None:
    pcm = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(pcm * 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(pcm.tobytes())


class AudioTrack:
    """Mono waveform of one video; ``silent`` marks a substituted silence track."""

    def __init__(self, samples: np.ndarray, sample_rate: int, silent: bool = False):
        self.samples = samples
        self.sample_rate = sample_rate
        self.silent = silent

    def span(self, start_s: float, end_s: float) -> np.ndarray:
        n = max(1, int(round((end_s - start_s) * self.sample_rate)))
        if self.silent:
            return np.zeros(n, dtype=np.float32)
        a = int(round(start_s * self.sample_rate))
        seg = self.samples[a:a + n]
        if len(seg) < n:
            seg = np.concatenate([seg, np.zeros(n - len(seg), dtype=np.float32)])
        return seg


def load_audio(path: str | os.PathLike) -> AudioTrack:
    side = audio_sidecar(path)
    if side.exists():
        samples, sr = read_wav(side)
        return AudioTrack(samples, sr)
    try:
        ffmpeg = find_ffmpeg()
    except ToolchainMissingError:
        log.warning("no audio sidecar for %s and no ffmpeg; substituting silence", path)
        return AudioTrack(np.zeros(0, dtype=np.float32), AUDIO_SAMPLE_RATE, silent=True)
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "a.wav"
        proc = subprocess.run(
            [ffmpeg, "-v", "error", "-i", str(path), "-vn", "-ac", "1",
             "-ar", str(AUDIO_SAMPLE_RATE), "-f", "wav", str(out)],
            capture_output=True, text=True,
        )
        if proc.returncode != 0 or not out.exists():
            if "does not contain any stream" in proc.stderr or "matches no streams" in proc.stderr:
                return AudioTrack(np.zeros(0, dtype=np.float32), AUDIO_SAMPLE_RATE, silent=True)
            raise AudioDecodeError(f"ffmpeg failed to decode audio of {path}: {proc.stderr.strip()}")
        samples, sr = read_wav(out)
    if samples.size == 0:
        return AudioTrack(samples, sr, silent=True)
    return AudioTrack(samples, sr)
