import json
from pathlib import Path

import numpy as np
import pytest

from adsum.config import RunConfig
from adsum.dataset import AdPair, MappingEntry, ShotMapping, VideoRef, shots_from_bounds
from adsum.synthetic import make_fixture_set


def pair_from_synthetic(sp) -> AdPair:
    long = VideoRef(f"{sp.pair_id}_long", str(sp.long_file), sp.fps,
                    sp.long_bounds[-1][1] + 1, shots_from_bounds(sp.long_bounds))
    short = VideoRef(f"{sp.pair_id}_short", str(sp.short_file), sp.fps,
                     sp.short_bounds[-1][1] + 1, shots_from_bounds(sp.short_bounds))
    mapping = ShotMapping([MappingEntry(k, v, 1.0) for k, v in sp.mapping.items()])
    return AdPair(sp.pair_id, long, short, mapping)


@pytest.fixture(scope="session")
def fixture_set(tmp_path_factory):
    """Ten 30-second synthetic ad pairs shared by the whole session."""
    root = tmp_path_factory.mktemp("fixtures")
    raw, pairs = make_fixture_set(root, n_pairs=10, seed=0)
    return raw, pairs


@pytest.fixture(scope="session")
def small_set(tmp_path_factory):
    """Five short (12 s long / 6 s budget) synthetic pairs for quick training tests."""
    from adsum.synthetic import make_pair

    root = tmp_path_factory.mktemp("small")
    return [make_pair(root, f"s{i}", seed=100 + i, long_seconds=12.0, budget=6.0) for i in range(5)]


def synthetic_config(tmp_path, **kw) -> RunConfig:
    base = dict(visual_backend="mean-pixel", audio_backend="rms-bands", attention_backbone="row-local",
                cache_dir=str(tmp_path / "cache"), output_dir=str(tmp_path / "out"))
    base.update(kw)
    return RunConfig(**base)
