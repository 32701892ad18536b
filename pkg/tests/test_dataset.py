import json

import cv2
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adsum.dataset import (
    AdPair, MappingEntry, Shot, ShotMapping, VideoRef, boundaries_from_probabilities, check_tiling,
    dump_manifest, labels_from_mapping, load_manifest, make_folds, match_shots, read_probabilities,
    review_report, shots_from_bounds,
)
from adsum.errors import ManifestError, MappingError, TilingError
from adsum.media import ArrayFrames
from adsum.synthetic import _texture


def _video_doc(vid, file, bounds, fps=23.976):
    return {"video_id": vid, "file": file, "fps": fps, "frame_count": bounds[-1][1] + 1, "shots": bounds}


@pytest.fixture
def manifest_dir(tmp_path):
    for name in ("a_long.avi", "a_short.avi", "b_long.avi", "b_short.avi"):
        (tmp_path / name).write_bytes(b"")
    doc = [
        {"pair_id": "a", "long": _video_doc("a_l", "a_long.avi", [[0, 9], [10, 19]]),
         "short": _video_doc("a_s", "a_short.avi", [[0, 4]]), "mapping": [[0, 1, 0.8]]},
        {"pair_id": "b", "long": _video_doc("b_l", "b_long.avi", [[0, 29]]),
         "short": _video_doc("b_s", "b_short.avi", [[0, 2], [3, 9]]), "mapping": [[0, 0, 0.5], [1, 0, 0.4]]},
    ]
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    return tmp_path


class TestManifest:
    def test_load_two_pairs(self, manifest_dir):
        pairs = load_manifest(manifest_dir / "manifest.json")
        assert [p.pair_id for p in pairs] == ["a", "b"]
        assert pairs[0].long_shots == [Shot(0, 0, 9), Shot(1, 10, 19)]
        assert pairs[0].mapping.as_dict() == {0: 1}

    def test_round_trip(self, manifest_dir, tmp_path):
        pairs = load_manifest(manifest_dir / "manifest.json")
        dump_manifest(pairs, manifest_dir / "copy.json")
        again = load_manifest(manifest_dir / "copy.json")
        assert [(p.pair_id, p.long, p.short, p.mapping) for p in again] == \
               [(p.pair_id, p.long, p.short, p.mapping) for p in pairs]

    def test_gap_is_reported(self, manifest_dir):
        doc = json.loads((manifest_dir / "manifest.json").read_text())
        doc[0]["long"]["shots"] = [[0, 10], [12, 20]]
        doc[0]["long"]["frame_count"] = 21
        (manifest_dir / "bad.json").write_text(json.dumps(doc))
        with pytest.raises(TilingError, match="shot gap at frame 11"):
            load_manifest(manifest_dir / "bad.json")

    def test_overlap_is_reported(self):
        with pytest.raises(TilingError, match="overlap"):
            check_tiling([Shot(0, 0, 10), Shot(1, 10, 20)], 21)

    def test_short_coverage_is_reported(self):
        with pytest.raises(TilingError):
            check_tiling([Shot(0, 0, 10)], 20)

    def test_missing_video_file(self, manifest_dir):
        (manifest_dir / "b_short.avi").unlink()
        with pytest.raises(ManifestError, match="missing video file"):
            load_manifest(manifest_dir / "manifest.json")

    def test_duplicate_pair_id(self, manifest_dir):
        doc = json.loads((manifest_dir / "manifest.json").read_text())
        doc[1]["pair_id"] = "a"
        (manifest_dir / "dup.json").write_text(json.dumps(doc))
        with pytest.raises(ManifestError, match="duplicate"):
            load_manifest(manifest_dir / "dup.json")

    def test_unparseable(self, tmp_path):
        (tmp_path / "m.json").write_text("{not json")
        with pytest.raises(ManifestError):
            load_manifest(tmp_path / "m.json")

    def test_mapping_to_unknown_long_shot(self, manifest_dir):
        doc = json.loads((manifest_dir / "manifest.json").read_text())
        doc[0]["mapping"] = [[0, 7, 0.9]]
        (manifest_dir / "m.json").write_text(json.dumps(doc))
        with pytest.raises(MappingError):
            load_manifest(manifest_dir / "m.json")


class TestBoundaries:
    def test_no_boundaries_single_shot(self):
        assert boundaries_from_probabilities(np.zeros(100), 0.5) == [Shot(0, 0, 99)]

    def test_single_boundary_ends_shot(self):
        p = np.zeros(100)
        p[50] = 0.9
        assert boundaries_from_probabilities(p, 0.5) == [Shot(0, 0, 50), Shot(1, 51, 99)]

    def test_boundary_on_last_frame_adds_nothing(self):
        p = np.zeros(10)
        p[9] = 1.0
        assert boundaries_from_probabilities(p, 0.5) == [Shot(0, 0, 9)]

    def test_threshold_is_inclusive(self):
        p = np.zeros(10)
        p[4] = 0.5
        assert len(boundaries_from_probabilities(p, 0.5)) == 2

    def test_empty_probs(self):
        with pytest.raises(ValueError):
            boundaries_from_probabilities([], 0.5)

    def test_collapse_runs(self):
        p = np.zeros(20)
        p[5:8] = 0.9
        assert boundaries_from_probabilities(p, 0.5) == [Shot(0, 0, 5), Shot(1, 6, 6), Shot(2, 7, 7), Shot(3, 8, 19)]
        assert boundaries_from_probabilities(p, 0.5, collapse_runs=True) == [Shot(0, 0, 5), Shot(1, 6, 19)]

    @settings(max_examples=300, deadline=None)
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=60))
    def test_tiling_and_threshold_monotonicity(self, probs):
        counts = []
        for thr in (0.1, 0.3, 0.5):
            shots = boundaries_from_probabilities(probs, thr)
            check_tiling(shots, len(probs))
            counts.append(len(shots))
        assert counts[0] >= counts[1] >= counts[2]

    def test_read_probabilities_formats(self, tmp_path):
        (tmp_path / "p.txt").write_text("0.1\n0.9\n0.2\n")
        (tmp_path / "p.json").write_text("[0.1, 0.9, 0.2]")
        np.testing.assert_array_equal(read_probabilities(tmp_path / "p.txt"), [0.1, 0.9, 0.2])
        np.testing.assert_array_equal(read_probabilities(tmp_path / "p.json"), [0.1, 0.9, 0.2])


def _shot_video(textures, lengths, rng):
    frames = []
    for tex, n in zip(textures, lengths):
        for k in range(n):
            frames.append(np.roll(tex, k // 4, axis=1))
    return np.stack(frames)


class TestMatching:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.textures = [_texture(rng, (160, 120), kept=bool(i % 2)) for i in range(5)]
        self.rng = rng

    def test_excerpt_recovers_construction(self):
        long = _shot_video(self.textures[:4], [20, 16, 24, 12], self.rng)
        bounds = [(0, 19), (20, 35), (36, 59), (60, 71)]
        # short ad: excerpts of long shots 3, 0, 2 (order need not follow the long ad)
        pieces = [(60, 68), (4, 15), (40, 51)]
        short = np.concatenate([long[a:b + 1] for a, b in pieces])
        sb, s = [], 0
        for a, b in pieces:
            sb.append((s, s + b - a))
            s += b - a + 1
        src = ArrayFrames({"L": long, "S": short})
        lv = VideoRef("L", "L", 24.0, len(long), shots_from_bounds(bounds))
        sv = VideoRef("S", "S", 24.0, len(short), shots_from_bounds(sb))
        m = match_shots(sv, lv, src)
        assert m.as_dict() == {0: 3, 1: 0, 2: 2}
        assert all(e.similarity > 0.5 for e in m.entries)

    def test_single_shot_pair(self):
        long = _shot_video(self.textures[:1], [10], self.rng)
        src = ArrayFrames({"L": long, "S": long[2:6]})
        m = match_shots(VideoRef("S", "S", 24.0, 4, [Shot(0, 0, 3)]),
                        VideoRef("L", "L", 24.0, 10, [Shot(0, 0, 9)]), src)
        assert m.as_dict() == {0: 0}

    def test_foreign_shot_is_flagged(self):
        long = _shot_video(self.textures[:3], [10, 10, 10], self.rng)
        # unrelated content: caption text on a flat ground
        card = np.full((120, 160, 3), 90, np.uint8)
        for k in range(6):
            cv2.putText(card, f"AD{k}", (5 + 7 * k, 20 + 17 * k), cv2.FONT_HERSHEY_SIMPLEX, 0.6, (255, 255, 255), 2)
        foreign = np.stack([card] * 8)
        short = np.concatenate([long[12:18], foreign])
        src = ArrayFrames({"L": long, "S": short})
        lv = VideoRef("L", "L", 24.0, 30, shots_from_bounds([(0, 9), (10, 19), (20, 29)]))
        sv = VideoRef("S", "S", 24.0, 14, shots_from_bounds([(0, 5), (6, 13)]))
        m = match_shots(sv, lv, src)
        assert m.as_dict()[0] == 1
        foreign_entry = m.entries[1]
        assert 0 <= foreign_entry.long_id < 3
        assert foreign_entry.similarity < 0.05
        pair = AdPair("x", lv, sv, m)
        assert [r["short_id"] for r in review_report([pair])] == [1]

    def test_blank_frames_have_zero_similarity(self):
        blank = np.zeros((6, 64, 64, 3), np.uint8)
        src = ArrayFrames({"L": blank, "S": blank[:3]})
        m = match_shots(VideoRef("S", "S", 24.0, 3, [Shot(0, 0, 2)]),
                        VideoRef("L", "L", 24.0, 6, [Shot(0, 0, 2), Shot(1, 3, 5)]), src)
        # no keypoints anywhere: similarity 0, tie resolved to the earliest long shot
        assert m.entries == [MappingEntry(0, 0, 0.0)]


def _pair(long_bounds, mapping, n_short=None):
    long = VideoRef("L", "L", 24.0, long_bounds[-1][1] + 1, shots_from_bounds(long_bounds))
    n_short = n_short if n_short is not None else max(len(mapping), 1)
    short = VideoRef("S", "S", 24.0, n_short, [Shot(i, i, i) for i in range(n_short)])
    return AdPair("p", long, short, ShotMapping([MappingEntry(a, b, 1.0) for a, b in mapping.items()]))


class TestLabels:
    def test_empty_mapping_all_zero(self):
        labels = labels_from_mapping(_pair([(0, 9), (10, 19)], {}))
        assert labels.tolist() == [0] * 20

    def test_direct_rule(self):
        labels = labels_from_mapping(_pair([(0, 9), (10, 19)], {0: 1}))
        assert labels.tolist() == [0] * 10 + [1] * 10

    def test_shared_long_shot_counted_once(self):
        bounds = [(0, 4), (5, 9), (10, 14), (15, 22), (23, 30)]
        labels = labels_from_mapping(_pair(bounds, {0: 3, 1: 3}))
        assert labels.sum() == 8
        assert labels[15:23].tolist() == [1] * 8

    def test_unknown_shot(self):
        with pytest.raises(MappingError):
            labels_from_mapping(_pair([(0, 9)], {0: 4}))

    def test_requires_mapping(self):
        p = _pair([(0, 9)], {})
        p.mapping = None
        with pytest.raises(MappingError):
            labels_from_mapping(p)


class TestFolds:
    def test_102_pairs(self):
        folds = make_folds([f"id{i}" for i in range(102)], 5, seed=3)
        assert sorted(len(f) for f in folds.folds) == [20, 20, 20, 21, 21]

    def test_five_pairs_one_each(self):
        folds = make_folds(list("abcde"), 5, seed=0)
        assert all(len(f) == 1 for f in folds.folds)

    def test_deterministic(self):
        ids = [f"id{i}" for i in range(37)]
        assert make_folds(ids, 5, 11).folds == make_folds(list(reversed(ids)), 5, 11).folds

    def test_too_few_pairs(self):
        with pytest.raises(ValueError):
            make_folds(["a", "b"], 5, 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 10), st.integers(0, 60), st.integers(0, 2**16))
    def test_partition(self, k, extra, seed):
        ids = [f"p{i}" for i in range(k + extra)]
        folds = make_folds(ids, k, seed).folds
        flat = [x for f in folds for x in f]
        assert sorted(flat) == sorted(ids) and len(set(flat)) == len(flat)
        assert max(map(len, folds)) - min(map(len, folds)) <= 1
