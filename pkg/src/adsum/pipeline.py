"""Glue between the modules, driven by a RunConfig."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Sequence

import numpy as np

from .config import RunConfig
from .dataset import AdPair, VideoRef, labels_from_mapping
from .errors import ShapeError
from .features import FeatureMap, embed_audio, embed_visual, zscore
from .features.backends import backend_spec, get_backend
from .features.cache import CacheKey, FeatureCache
from .media import FrameSource, load_audio
from .model import AttentionScorerConfig, FusionConfig, TrainConfig, TrainingExample
from .sampling import clips_for_video

log = logging.getLogger(__name__)


def fusion_config(cfg: RunConfig) -> FusionConfig:
    return FusionConfig(cfg.fusion_mode, cfg.alpha, cfg.beta)


def train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(cfg.loss, cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.seed)


def backend_ids(cfg: RunConfig) -> dict[str, str]:
    """Resolved ids (with dimension suffixes) of the streams the fusion mode reads."""
    fusion = fusion_config(cfg)
    ids = {"visual": backend_spec(cfg.visual_backend).backend_id,
           "audio": backend_spec(cfg.audio_backend).backend_id}
    suffix = "+z" if cfg.zscore_features else ""
    return {s: ids[s] + suffix for s in fusion.inputs}


def scorer_config(cfg: RunConfig) -> AttentionScorerConfig:
    fusion = fusion_config(cfg)
    dims = {"visual": backend_spec(cfg.visual_backend).dim, "audio": backend_spec(cfg.audio_backend).dim}
    used = {dims[s] for s in fusion.inputs}
    if fusion.mode == "early" and len(used) != 1:
        raise ShapeError(f"early fusion needs equal feature dims, got visual {dims['visual']} / audio {dims['audio']}")
    dim = dims[fusion.inputs[0]]
    return AttentionScorerConfig(cfg.attention_backbone, dim, cfg.fine_tune_backbone, cfg.seed)


def cache_key(video: VideoRef, backend_id: str, cfg: RunConfig) -> CacheKey:
    return CacheKey(video.video_id, backend_spec(backend_id).backend_id, cfg.stride, cfg.hws)


def extract_video(video: VideoRef, cfg: RunConfig, cache: FeatureCache | None,
                  streams: Sequence[str] = ("visual", "audio"),
                  frame_source: FrameSource | None = None, use_cache: bool = True) -> dict[str, FeatureMap]:
    """Feature maps of one video, read from or written to the cache."""
    clips = None
    out = {}
    for stream in streams:
        bid = cfg.visual_backend if stream == "visual" else cfg.audio_backend
        key = cache_key(video, bid, cfg)
        fm = cache.get(key) if cache is not None and use_cache else None
        if fm is None:
            clips = clips or clips_for_video(video, cfg.stride, cfg.hws)
            backend = get_backend(bid)
            if stream == "visual":
                fm = embed_visual(clips, backend, video.file, frame_source)
            else:
                fm = embed_audio(clips, load_audio(video.file), backend)
            if cache is not None:
                cache.put(key, fm)
        out[stream] = fm
    return out


def _extract_worker(args):
    video, cfg, streams = args
    extract_video(video, cfg, FeatureCache(cfg.cache_dir), streams)
    return video.video_id


def ensure_features(pairs: Sequence[AdPair], cfg: RunConfig, streams: Sequence[str] = ("visual", "audio"),
                    jobs: int | None = None) -> list[str]:
    """Embed every long video into the cache; each worker builds its own backends."""
    jobs = jobs or cfg.jobs
    work = [(p.long, cfg, tuple(streams)) for p in pairs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_extract_worker, work))
    return [_extract_worker(w) for w in work]


def clip_labels(pair: AdPair, stride: int) -> np.ndarray:
    """Ground truth per clip: the frame label at each focal frame."""
    return labels_from_mapping(pair)[::stride].astype(np.float32)


def example_for(pair: AdPair, cfg: RunConfig, cache: FeatureCache | None,
                frame_source: FrameSource | None = None, with_labels: bool = True) -> TrainingExample:
    fusion = fusion_config(cfg)
    fms = extract_video(pair.long, cfg, cache, fusion.inputs, frame_source)
    if cfg.zscore_features:
        fms = {k: zscore(v) for k, v in fms.items()}
    labels = clip_labels(pair, cfg.stride) if with_labels else np.zeros(0, np.float32)
    return TrainingExample(pair.long.video_id, labels, fms.get("visual"), fms.get("audio"), pair.long.frame_count)
