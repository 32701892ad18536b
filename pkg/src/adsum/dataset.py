"""Ad-pair manifests, shot segmentation, shot matching, labels and folds."""
from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import cv2
import numpy as np

from .errors import ManifestError, MappingError, TilingError
from .media import FrameSource, VideoFileFrames

log = logging.getLogger(__name__)

RATIO_TEST = 0.75
REVIEW_FLOOR = 0.05


@dataclass(frozen=True)
class Shot:
    shot_id: int
    start_frame: int
    end_frame: int  # inclusive

    @property
    def frame_count(self) -> int:
        return self.end_frame - self.start_frame + 1

    @property
    def middle_frame(self) -> int:
        return (self.start_frame + self.end_frame) // 2

    def duration_seconds(self, fps: float) -> float:
        return self.frame_count / fps


@dataclass
class VideoRef:
    video_id: str
    file: str
    fps: float
    frame_count: int
    shots: list[Shot] = field(default_factory=list)

    @property
    def duration_seconds(self) -> float:
        return self.frame_count / self.fps

    def shot_of_frame(self) -> np.ndarray:
        """Shot id of every frame."""
        out = np.empty(self.frame_count, dtype=np.int64)
        for s in self.shots:
            out[s.start_frame:s.end_frame + 1] = s.shot_id
        return out


@dataclass(frozen=True)
class MappingEntry:
    short_id: int
    long_id: int
    similarity: float


@dataclass
class ShotMapping:
    entries: list[MappingEntry] = field(default_factory=list)

    def as_dict(self) -> dict[int, int]:
        return {e.short_id: e.long_id for e in self.entries}

    @property
    def positives(self) -> set[int]:
        """Distinct long shots that appear in the short ad."""
        return {e.long_id for e in self.entries}

    def needs_review(self, floor: float = REVIEW_FLOOR) -> list[MappingEntry]:
        return [e for e in self.entries if e.similarity < floor]


@dataclass
class AdPair:
    pair_id: str
    long: VideoRef
    short: VideoRef
    mapping: ShotMapping | None = None

    @property
    def long_shots(self) -> list[Shot]:
        return self.long.shots

    @property
    def short_shots(self) -> list[Shot]:
        return self.short.shots


@dataclass
class FoldSplit:
    folds: list[list[str]]

    def test_fold_of(self) -> dict[str, int]:
        return {pid: k for k, fold in enumerate(self.folds) for pid in fold}

    def train_ids(self, k: int) -> list[str]:
        return [pid for j, fold in enumerate(self.folds) if j != k for pid in fold]


# --------------------------------------------------------------------------
# tiling and manifest I/O


def shots_from_bounds(bounds: Sequence[Sequence[int]]) -> list[Shot]:
    return [Shot(i, int(a), int(b)) for i, (a, b) in enumerate(bounds)]


def check_tiling(shots: Sequence[Shot], frame_count: int, where: str = "") -> None:
    prefix = f"{where}: " if where else ""
    if not shots:
        raise TilingError(f"{prefix}video has no shots")
    expected = 0
    for i, s in enumerate(shots):
        if s.shot_id != i:
            raise TilingError(f"{prefix}shot ids must be 0..m-1 in order (got {s.shot_id} at position {i})")
        if s.start_frame > s.end_frame:
            raise TilingError(f"{prefix}shot {i} has start {s.start_frame} > end {s.end_frame}")
        if s.start_frame > expected:
            gap = f"{expected}" if s.start_frame - expected == 1 else f"{expected}..{s.start_frame - 1}"
            raise TilingError(f"{prefix}shot gap at frame {gap}")
        if s.start_frame < expected:
            raise TilingError(f"{prefix}shot overlap at frame {s.start_frame}")
        expected = s.end_frame + 1
    if expected != frame_count:
        if expected < frame_count:
            raise TilingError(f"{prefix}shots end at frame {expected - 1} but video has {frame_count} frames")
        raise TilingError(f"{prefix}shots run past the last frame {frame_count - 1}")


def _video_from_json(d: dict, base: Path, where: str, check_files: bool) -> VideoRef:
    try:
        video = VideoRef(
            video_id=str(d["video_id"]),
            file=str(d["file"]),
            fps=float(d["fps"]),
            frame_count=int(d["frame_count"]),
            shots=shots_from_bounds(d["shots"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: malformed video entry ({exc!r})") from exc
    if video.fps <= 0 or video.frame_count < 1:
        raise ManifestError(f"{where}: fps and frame_count must be positive")
    check_tiling(video.shots, video.frame_count, where)
    path = Path(video.file)
    if not path.is_absolute():
        path = base / path
    if check_files and not path.exists():
        raise ManifestError(f"{where}: missing video file {path}")
    video.file = str(path)
    return video


def pair_from_json(d: dict, base: Path = Path("."), check_files: bool = True) -> AdPair:
    try:
        pid = str(d["pair_id"])
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"pair without pair_id: {d!r:.80}") from exc
    long = _video_from_json(d.get("long", {}), base, f"pair {pid} long", check_files)
    short = _video_from_json(d.get("short", {}), base, f"pair {pid} short", check_files)
    mapping = None
    if d.get("mapping") is not None:
        try:
            mapping = ShotMapping([MappingEntry(int(a), int(b), float(s)) for a, b, s in d["mapping"]])
        except (TypeError, ValueError) as exc:
            raise ManifestError(f"pair {pid}: malformed mapping ({exc!r})") from exc
        validate_mapping(mapping, short, long, pid)
    return AdPair(pid, long, short, mapping)


def validate_mapping(mapping: ShotMapping, short: VideoRef, long: VideoRef, pid: str = "") -> None:
    keys = [e.short_id for e in mapping.entries]
    if len(set(keys)) != len(keys):
        raise MappingError(f"pair {pid}: a short shot is mapped more than once")
    n_long = len(long.shots)
    for e in mapping.entries:
        if not 0 <= e.long_id < n_long:
            raise MappingError(f"pair {pid}: mapping references unknown long shot {e.long_id}")
        if not 0 <= e.short_id < len(short.shots):
            raise MappingError(f"pair {pid}: mapping references unknown short shot {e.short_id}")
    if sorted(keys) != list(range(len(short.shots))):
        raise MappingError(f"pair {pid}: every short shot must be mapped exactly once")


def load_manifest(path: str | os.PathLike, check_files: bool = True) -> list[AdPair]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot parse manifest {path}: {exc}") from exc
    if not isinstance(doc, list):
        raise ManifestError(f"{path}: manifest must be a JSON list of pairs")
    pairs = [pair_from_json(d, path.parent, check_files) for d in doc]
    seen = set()
    for p in pairs:
        if p.pair_id in seen:
            raise ManifestError(f"{path}: duplicate pair_id {p.pair_id}")
        seen.add(p.pair_id)
    return pairs


def _video_to_json(v: VideoRef, base: Path | None) -> dict:
    file = v.file
    if base is not None:
        try:
            file = os.path.relpath(v.file, base)
        except ValueError:
            pass
    return {
        "video_id": v.video_id,
        "file": file,
        "fps": v.fps,
        "frame_count": v.frame_count,
        "shots": [[s.start_frame, s.end_frame] for s in v.shots],
    }


def pair_to_json(p: AdPair, base: Path | None = None) -> dict:
    d = {"pair_id": p.pair_id, "long": _video_to_json(p.long, base), "short": _video_to_json(p.short, base)}
    d["mapping"] = None if p.mapping is None else [
        [e.short_id, e.long_id, e.similarity] for e in p.mapping.entries
    ]
    return d


def dump_manifest(pairs: Sequence[AdPair], path: str | os.PathLike) -> None:
    """Write atomically; file paths are stored relative to the manifest."""
    path = Path(path)
    doc = [pair_to_json(p, path.parent.resolve()) for p in pairs]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1) + "\n")
    os.replace(tmp, path)


# --------------------------------------------------------------------------
# shot boundaries


def read_probabilities(path: str | os.PathLike) -> np.ndarray:
    """Per-frame boundary probabilities: ``.json`` holds one array, anything else one value per line."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        values = json.loads(path.read_text())
    else:
        values = [float(x) for x in path.read_text().split()]
    return np.asarray(values, dtype=np.float64)


def boundaries_from_probabilities(probs, threshold: float, collapse_runs: bool = False) -> list[Shot]:
    """Split a video into shots; a frame with probability >= threshold ends its shot.

    With ``collapse_runs`` a run of consecutive boundary frames produces one
    cut at its first frame. That variant is not monotone in the threshold
    (raising it can split a run in two), so it is off by default.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.size == 0:
        raise ValueError("empty probability vector")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    is_cut = probs >= threshold
    if collapse_runs:
        is_cut = is_cut & ~np.concatenate([[False], is_cut[:-1]])
    ends = [int(i) for i in np.flatnonzero(is_cut) if i < probs.size - 1]
    ends.append(probs.size - 1)
    shots, start = [], 0
    for e in ends:
        shots.append(Shot(len(shots), start, e))
        start = e + 1
    return shots


# --------------------------------------------------------------------------
# shot matching


_sift = None


def _sift_detector():
    global _sift
    if _sift is None:
        _sift = cv2.SIFT_create()
    return _sift


def keypoint_descriptors(image: np.ndarray) -> tuple[int, np.ndarray | None]:
    gray = image if image.ndim == 2 else cv2.cvtColor(image, cv2.COLOR_BGR2GRAY)
    kps, desc = _sift_detector().detectAndCompute(gray, None)
    return len(kps), desc


def keypoint_similarity(a: tuple[int, np.ndarray | None], b: tuple[int, np.ndarray | None],
                        ratio: float = RATIO_TEST) -> float:
    """Ratio-test matches divided by the larger keypoint count, in [0, 1]."""
    (na, da), (nb, db) = a, b
    if na == 0 or nb == 0 or da is None or db is None or len(db) < 2:
        return 0.0
    matcher = cv2.BFMatcher(cv2.NORM_L2)
    good = 0
    for m in matcher.knnMatch(da, db, k=2):
        if len(m) == 2 and m[0].distance < ratio * m[1].distance:
            good += 1
    return min(1.0, good / max(na, nb))


def _shot_keyframes(shot: Shot) -> tuple[int, int, int]:
    return shot.start_frame, shot.middle_frame, shot.end_frame


def match_shots(short: VideoRef, long: VideoRef, frame_source: FrameSource | None = None,
                ratio: float = RATIO_TEST) -> ShotMapping:
    """Map every short-ad shot to its most similar long-ad shot.

    Similarity between two shots is the mean keypoint similarity of their
    first, middle and last frames compared position by position. Ties go
    to the earliest long shot.
    """
    frame_source = frame_source or VideoFileFrames()

    def describe(video: VideoRef) -> list[list]:
        idx = sorted({f for s in video.shots for f in _shot_keyframes(s)})
        frames = frame_source.frames(video.file, idx)
        desc = {i: keypoint_descriptors(frames[i]) for i in idx}
        return [[desc[f] for f in _shot_keyframes(s)] for s in video.shots]

    long_desc = describe(long)
    short_desc = describe(short)
    entries = []
    for s_id, sd in enumerate(short_desc):
        best_id, best = 0, -1.0
        for l_id, ld in enumerate(long_desc):
            sim = float(np.mean([keypoint_similarity(x, y, ratio) for x, y in zip(sd, ld)]))
            if sim > best:
                best_id, best = l_id, sim
        entries.append(MappingEntry(s_id, best_id, best))
    return ShotMapping(entries)


def review_report(pairs: Iterable[AdPair], floor: float = REVIEW_FLOOR) -> list[dict]:
    """Low-similarity matches that need a human look."""
    rows = []
    for p in pairs:
        if p.mapping is None:
            continue
        for e in p.mapping.needs_review(floor):
            rows.append({"pair_id": p.pair_id, "short_id": e.short_id,
                         "long_id": e.long_id, "similarity": e.similarity})
    return rows


# --------------------------------------------------------------------------
# labels and folds


def labels_from_mapping(pair: AdPair) -> np.ndarray:
    """Binary per-frame labels of the long video: 1 on frames of mapped long shots."""
    if pair.mapping is None:
        raise MappingError(f"pair {pair.pair_id} has no shot mapping")
    labels = np.zeros(pair.long.frame_count, dtype=np.int8)
    n_long = len(pair.long.shots)
    for long_id in pair.mapping.positives:
        if not 0 <= long_id < n_long:
            raise MappingError(f"pair {pair.pair_id}: mapping references unknown long shot {long_id}")
        s = pair.long.shots[long_id]
        labels[s.start_frame:s.end_frame + 1] = 1
    return labels


def make_folds(pairs: Sequence[AdPair] | Sequence[str], k: int = 5, seed: int = 0) -> FoldSplit:
    """Seeded shuffle of the sorted pair ids, dealt round-robin into k folds."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    ids = sorted(p if isinstance(p, str) else p.pair_id for p in pairs)
    if len(ids) < k:
        raise ValueError(f"cannot split {len(ids)} pairs into {k} folds")
    random.Random(seed).shuffle(ids)
    return FoldSplit([ids[i::k] for i in range(k)])
