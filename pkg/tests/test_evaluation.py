import math

import numpy as np
import pytest

from adsum.dataset import MappingEntry, ShotMapping, make_folds
from adsum.errors import AdsumError, UndefinedMetricError
from adsum.evaluation import (
    average_precision, auroc, grand_mean_of, kendall, mean_defined, run_cross_validation,
    shot_retrieval_metrics, spearman, video_metrics,
)
from adsum.features.cache import FeatureCache
from adsum.model import AttentionScorerConfig, FusionConfig, TrainConfig
from adsum.pipeline import example_for
from adsum.selection import ShotScore, select_shots

from conftest import pair_from_synthetic, synthetic_config
from oracles import ap_oracle, auroc_oracle, kendall_oracle, spearman_oracle


def _instances(n=120, seed=0):
    """Random score/label vectors; scores drawn from a coarse grid so ties are common."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        m = int(rng.integers(2, 40))
        scores = rng.integers(0, int(rng.integers(2, 12)), m) / 10.0
        labels = (rng.random(m) < rng.uniform(0.2, 0.8)).astype(int)
        if 0 < labels.sum() < m and len(set(scores)) > 1:
            out.append((scores, labels))
    return out


class TestExamples:
    def test_ap(self):
        assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)
        assert average_precision([0.1, 0.9], [1, 0]) == pytest.approx(0.5)
        assert average_precision([0.3, 0.2, 0.1], [1, 1, 0]) == 1.0

    def test_ap_ties_keep_input_order(self):
        assert average_precision([0.5, 0.5], [0, 1]) == pytest.approx(0.5)
        assert average_precision([0.5, 0.5], [1, 0]) == pytest.approx(1.0)

    def test_auroc(self):
        assert auroc([0.9, 0.1], [1, 0]) == 1.0
        assert auroc([0.1, 0.9], [1, 0]) == 0.0
        assert auroc([0.5, 0.5], [1, 0]) == 0.5

    def test_rank_correlations(self):
        assert spearman([1, 2, 3, 4], [10, 20, 30, 40]) == pytest.approx(1.0)
        assert kendall([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)
        assert kendall([1, 2, 3], [1, 1, 2]) == pytest.approx(2 / math.sqrt(3 * 2))

    def test_undefined(self):
        with pytest.raises(UndefinedMetricError):
            average_precision([0.1, 0.2], [0, 0])
        with pytest.raises(UndefinedMetricError):
            auroc([0.1, 0.2], [1, 1])
        with pytest.raises(UndefinedMetricError):
            spearman([0.3, 0.3, 0.3], [0, 1, 0])
        with pytest.raises(UndefinedMetricError):
            kendall([0.1, 0.2], [1, 1])
        with pytest.raises(ValueError):
            auroc([0.1], [1, 0])


@pytest.mark.parametrize("fn, oracle", [
    (average_precision, ap_oracle), (auroc, auroc_oracle), (spearman, spearman_oracle), (kendall, kendall_oracle),
])
def test_against_oracle(fn, oracle):
    for scores, labels in _instances():
        assert abs(fn(scores, labels) - oracle(list(scores), list(labels))) < 1e-9


def test_rank_metrics_invariant_to_monotone_maps():
    for scores, labels in _instances(60, seed=1):
        mapped = np.exp(3 * scores) - 2
        for fn in (average_precision, auroc, spearman, kendall):
            assert fn(mapped, labels) == pytest.approx(fn(scores, labels), abs=1e-12)


def test_auroc_complement():
    for scores, labels in _instances(60, seed=2):
        assert auroc(-scores, labels) == pytest.approx(1 - auroc(scores, labels), abs=1e-12)


class TestShotRetrieval:
    def test_example(self):
        r = shot_retrieval_metrics({1, 2, 3}, {2, 3, 4})
        assert (r.tp, r.fp, r.fn) == (2, 1, 1)
        assert r.precision == r.recall == r.f1 == pytest.approx(2 / 3)

    def test_from_objects(self):
        sel = select_shots([ShotScore(0, 0.9, 10), ShotScore(1, 0.1, 10), ShotScore(2, 0.5, 10)], 15)
        mapping = ShotMapping([MappingEntry(0, 0, 1.0), MappingEntry(1, 1, 1.0)])
        r = shot_retrieval_metrics(sel, mapping)
        assert (r.tp, r.fp, r.fn) == (1, 1, 1)

    def test_empty_sets(self):
        r = shot_retrieval_metrics(set(), {1})
        assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)


def test_video_metrics_records_undefined():
    row = video_metrics([0.2, 0.4, 0.1], [0, 0, 0])
    assert row["ap"] is None and row["auroc"] is None
    assert set(row["undefined"]) == {"ap", "auroc", "spearman", "kendall"}
    means, excluded = mean_defined([row, {"ap": 0.5}], ["ap"])
    assert means == {"ap": 0.5} and excluded == {"ap": 1}


def test_grand_mean_is_mean_of_fold_means():
    folds = [{"ap": 0.2}, {"ap": 0.6}, {"ap": None}]
    assert grand_mean_of(folds, ["ap"]) == {"ap": pytest.approx(0.4)}


@pytest.fixture(scope="module")
def cv_inputs(small_set, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cv")
    pairs = [pair_from_synthetic(sp) for sp in small_set]
    cfg = synthetic_config(tmp)
    cache = FeatureCache(cfg.cache_dir)
    return pairs, (lambda p: example_for(p, cfg, cache))


def _run_cv(pairs, ex_for, seed=0):
    folds = make_folds(pairs, 5, seed)
    return folds, run_cross_validation(
        pairs, folds, FusionConfig("early"), TrainConfig(epochs=5, learning_rate=0.01),
        AttentionScorerConfig("row-local", 384), ex_for, budget_seconds=6.0,
    )


def test_cross_validation(cv_inputs):
    pairs, ex_for = cv_inputs
    folds, rep = _run_cv(pairs, ex_for)
    tested = [r["pair_id"] for r in rep.per_video]
    assert sorted(tested) == sorted(p.pair_id for p in pairs)
    for row in rep.per_video:
        assert row["pair_id"] in folds.folds[row["fold"]]
    for key in ("ap", "f1"):
        vals = [f[key] for f in rep.fold_means]
        assert rep.grand_mean[key] == pytest.approx(np.mean(vals))
    assert len(rep.train_reports) == 5 and rep.kendall_variant == "tau-b"
    _, again = _run_cv(pairs, ex_for)
    assert again.to_json() == rep.to_json()


def test_cross_validation_rejects_bad_folds(cv_inputs):
    pairs, ex_for = cv_inputs
    folds = make_folds(pairs[:4], 2, 0)
    with pytest.raises(AdsumError):
        run_cross_validation(pairs, folds, FusionConfig("early"), TrainConfig(epochs=1),
                             AttentionScorerConfig("row-local", 384), ex_for)
