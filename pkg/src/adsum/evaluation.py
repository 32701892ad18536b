"""Frame-level ranking metrics, shot-level retrieval metrics, k-fold harness."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.stats import kendalltau, rankdata

from .dataset import AdPair, FoldSplit, ShotMapping, labels_from_mapping
from .errors import AdsumError, UndefinedMetricError
from .model import AttentionScorerConfig, FusionConfig, TrainConfig, TrainingExample, train
from .selection import SelectionResult, select_for_video

FRAME_METRICS = ("ap", "auroc", "spearman", "kendall")
SHOT_METRICS = ("precision", "recall", "f1")


def _pair(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    return s, y


def average_precision(scores, labels) -> float:
    """Sum over the descending-score ranking of precision@k at every positive, / #positives.

    Equal scores keep their original order (stable sort).
    """
    s, y = _pair(scores, labels)
    y = y.astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive label")
    hits = y[np.argsort(-s, kind="stable")]
    precision_at_k = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision_at_k[hits].sum() / n_pos)


def auroc(scores, labels) -> float:
    """Mann-Whitney form: P(pos > neg) + 0.5 P(pos == neg)."""
    s, y = _pair(scores, labels)
    y = y.astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def spearman(scores, reference) -> float:
    """Pearson correlation of average (tie-aware) ranks."""
    a, b = _pair(scores, reference)
    if len(a) < 2:
        raise UndefinedMetricError("Spearman needs at least two items")
    ra, rb = rankdata(a), rankdata(b.astype(np.float64))
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0:
        raise UndefinedMetricError("Spearman undefined for a constant input")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def kendall(scores, reference) -> float:
    """Kendall tau-b (tie-corrected)."""
    a, b = _pair(scores, reference)
    if len(a) < 2:
        raise UndefinedMetricError("Kendall needs at least two items")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise UndefinedMetricError("Kendall undefined for a constant input")
    return float(kendalltau(a, b.astype(np.float64), variant="b").statistic)


@dataclass
class ShotRetrieval:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float


def shot_retrieval_metrics(selected: SelectionResult | set[int], mapping: ShotMapping | set[int]) -> ShotRetrieval:
    chosen = set(selected.selected_shot_ids if isinstance(selected, SelectionResult) else selected)
    positives = mapping.positives if isinstance(mapping, ShotMapping) else set(mapping)
    tp = len(chosen & positives)
    fp = len(chosen - positives)
    fn = len(positives - chosen)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ShotRetrieval(tp, fp, fn, precision, recall, f1)


# --------------------------------------------------------------------------
# per-video and aggregated reports


def video_metrics(frame_scores, labels, selection: SelectionResult | None = None,
                  mapping: ShotMapping | None = None) -> dict:
    """Metrics of one video; undefined ones are None and listed under ``undefined``."""
    row: dict = {"undefined": []}
    for name, fn in (("ap", average_precision), ("auroc", auroc), ("spearman", spearman), ("kendall", kendall)):
        try:
            row[name] = fn(frame_scores, labels)
        except UndefinedMetricError:
            row[name] = None
            row["undefined"].append(name)
    if selection is not None and mapping is not None:
        r = shot_retrieval_metrics(selection, mapping)
        row.update(asdict(r))
        row["selected"] = sorted(selection.selected_shot_ids)
        row["total_s"] = selection.total_duration_seconds
    return row


def mean_defined(rows: Sequence[dict], keys: Sequence[str]) -> tuple[dict, dict]:
    """Mean over rows where each metric is defined, plus the count excluded."""
    means, excluded = {}, {}
    for k in keys:
        vals = [r[k] for r in rows if r.get(k) is not None]
        excluded[k] = len(rows) - len(vals)
        means[k] = float(np.mean(vals)) if vals else None
    return means, excluded


def positional_breakdown(selection: SelectionResult, mapping: ShotMapping, video) -> dict:
    """Shot retrieval split by whether a shot starts in the first or second half of the video."""
    half = video.frame_count / 2
    out = {}
    for name, keep in (("first_half", lambda s: s.start_frame < half), ("second_half", lambda s: s.start_frame >= half)):
        ids = {s.shot_id for s in video.shots if keep(s)}
        r = shot_retrieval_metrics(set(selection.selected_shot_ids) & ids, mapping.positives & ids)
        out[name] = asdict(r)
    return out


@dataclass
class CVReport:
    per_video: list[dict] = field(default_factory=list)
    fold_means: list[dict] = field(default_factory=list)
    grand_mean: dict = field(default_factory=dict)
    undefined_counts: dict = field(default_factory=dict)
    fingerprint: str = ""
    kendall_variant: str = "tau-b"
    train_reports: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def grand_mean_of(fold_means: Sequence[dict], keys: Sequence[str]) -> dict:
    out = {}
    for k in keys:
        vals = [f[k] for f in fold_means if f.get(k) is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def run_cross_validation(pairs: Sequence[AdPair], folds: FoldSplit, fusion: FusionConfig, tc: TrainConfig,
                         scorer_cfg: AttentionScorerConfig,
                         example_for: Callable[[AdPair], TrainingExample],
                         budget_seconds: float = 15.0, stride: int = 12,
                         backends: dict[str, str] | None = None, fingerprint: str = "",
                         positional: bool = False) -> CVReport:
    """Train on k-1 folds, evaluate every held-out video, average per fold then over folds."""
    by_id = {p.pair_id: p for p in pairs}
    covered = [pid for fold in folds.folds for pid in fold]
    if sorted(covered) != sorted(by_id):
        raise AdsumError("folds do not partition the manifest's pair ids")
    if any(not fold for fold in folds.folds):
        raise AdsumError("a fold has no pairs")
    examples = {pid: example_for(p) for pid, p in sorted(by_id.items())}
    keys = FRAME_METRICS + SHOT_METRICS
    report = CVReport(fingerprint=fingerprint)
    undefined = {k: 0 for k in keys}
    for k, test_ids in enumerate(folds.folds):
        train_ids = folds.train_ids(k)
        scorer, tr = train([examples[i] for i in train_ids], fusion, tc, scorer_cfg, backends)
        report.train_reports.append({"fold": k, **tr.to_json()})
        rows = []
        for pid in test_ids:
            pair = by_id[pid]
            ex = examples[pid]
            clip_scores = scorer.predict_scores(ex)
            frames = np.repeat(clip_scores, stride)[:pair.long.frame_count]
            labels = labels_from_mapping(pair)
            sel = select_for_video(frames, pair.long, budget_seconds)
            row = {"pair_id": pid, "fold": k, **video_metrics(frames, labels, sel, pair.mapping)}
            if positional:
                row["positional"] = positional_breakdown(sel, pair.mapping, pair.long)
            rows.append(row)
        means, excluded = mean_defined(rows, keys)
        for key, n in excluded.items():
            undefined[key] += n
        report.fold_means.append({"fold": k, "n_videos": len(rows), **means})
        report.per_video.extend(rows)
    report.grand_mean = grand_mean_of(report.fold_means, keys)
    report.undefined_counts = undefined
    return report
