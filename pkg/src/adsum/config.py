"""Run configuration: defaults < config file < environment < command-line flags."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import yaml

from .errors import AdsumError

CACHE_ENV = "ADSUM_CACHE_DIR"

# location-only fields; two runs that differ only here produce identical artifacts
_UNFINGERPRINTED = {"manifest", "cache_dir", "output_dir", "folds_file", "jobs"}


@dataclass
class RunConfig:
    manifest: str = "manifest.json"
    cache_dir: str = "feature_cache"
    output_dir: str = "out"
    folds_file: str = ""
    visual_backend: str = "swin3d_b"
    audio_backend: str = "w2v-bert-2.0"
    attention_backbone: str = "googlenet"
    fine_tune_backbone: bool = False
    stride: int = 12
    hws: int = 3
    fusion_mode: str = "early"
    alpha: float = 0.5
    beta: float = 0.5
    zscore_features: bool = False  # ablation switch, off by default
    loss: str = "bce"
    epochs: int = 50
    batch_size: int = 1
    learning_rate: float = 0.001
    budget_seconds: float = 15.0
    folds: int = 5
    seed: int = 0
    jobs: int = 1

    def fingerprint(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k not in _UNFINGERPRINTED}
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}


def _coerce(cfg: RunConfig, key: str, value):
    current = getattr(cfg, key)
    if isinstance(current, bool):
        if isinstance(value, str):
            return value.lower() in ("1", "true", "yes", "on")
        return bool(value)
    return type(current)(value)


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None,
                env: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    names = RunConfig.field_names()
    if path:
        p = Path(path)
        try:
            text = p.read_text()
            data = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
        except (OSError, ValueError, yaml.YAMLError) as exc:
            raise AdsumError(f"cannot read config {p}: {exc}") from exc
        data = data or {}
        unknown = set(data) - names
        if unknown:
            raise AdsumError(f"{p}: unknown config keys {sorted(unknown)}")
        base = p.parent
        for k, v in data.items():
            if k in ("manifest", "cache_dir", "output_dir", "folds_file") and v and not os.path.isabs(v):
                v = str(base / v)
            setattr(cfg, k, _coerce(cfg, k, v))
    env = os.environ if env is None else env
    if env.get(CACHE_ENV):
        cfg.cache_dir = env[CACHE_ENV]
    for k, v in (overrides or {}).items():
        if v is not None:
            if k not in names:
                raise AdsumError(f"unknown config key {k}")
            setattr(cfg, k, _coerce(cfg, k, v))
    return cfg
