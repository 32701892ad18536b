"""Command-line entry points.

    adsum synth          write a synthetic fixture set (videos, audio, boundary probabilities)
    adsum build-dataset  shots from boundary probabilities, shot matching, manifest + folds
    adsum extract        embed every long video into the feature cache
    adsum train          fit the scorer, write a checkpoint
    adsum predict        per-clip and per-frame importance scores
    adsum clip           budgeted shot selection, cut lists, optional assembly
    adsum evaluate       metric report over predictions, or --cv for the k-fold harness

Exit codes: 0 success, 1 validation error, 2 missing external dependency.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import STANDARD_FPS
from .config import RunConfig, load_config
from .dataset import (
    AdPair, FoldSplit, VideoRef, boundaries_from_probabilities, dump_manifest, labels_from_mapping,
    load_manifest, make_folds, match_shots, read_probabilities, review_report,
)
from .errors import AdsumError, CheckpointError, ManifestError, MissingDependencyError
from .evaluation import FRAME_METRICS, SHOT_METRICS, mean_defined, positional_breakdown, \
    run_cross_validation, video_metrics
from .features.cache import FeatureCache
from .media import audio_sidecar, probe_video, standardize_fps
from .model import TrainedScorer, train
from .pipeline import (
    backend_ids, ensure_features, example_for, fusion_config, scorer_config, train_config,
)
from .selection import assemble, emit_cut_list, select_for_video, write_cut_list

log = logging.getLogger("adsum")

SWEEP_THRESHOLDS = (0.1, 0.3, 0.5)


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _config(args) -> RunConfig:
    overrides = {
        "manifest": args.manifest, "cache_dir": args.cache_dir, "output_dir": args.out,
        "folds_file": args.folds_file,
        "visual_backend": args.visual_backend, "audio_backend": args.audio_backend,
        "attention_backbone": args.attention, "stride": args.stride, "hws": args.hws,
        "fusion_mode": args.fusion, "alpha": args.alpha, "beta": args.beta,
        "loss": args.loss, "epochs": args.epochs, "learning_rate": args.lr,
        "budget_seconds": args.budget, "folds": args.folds, "seed": args.seed, "jobs": args.jobs,
    }
    if args.fine_tune:
        overrides["fine_tune_backbone"] = True
    if args.zscore:
        overrides["zscore_features"] = True
    return load_config(args.config, overrides)


def _selected_pairs(cfg: RunConfig, ids: list[str] | None) -> list[AdPair]:
    pairs = load_manifest(cfg.manifest)
    if ids:
        known = {p.pair_id for p in pairs}
        missing = set(ids) - known
        if missing:
            raise ManifestError(f"unknown pair ids {sorted(missing)}")
        pairs = [p for p in pairs if p.pair_id in ids]
    return pairs


def _folds(cfg: RunConfig, pairs: list[AdPair]) -> FoldSplit:
    path = Path(cfg.folds_file) if cfg.folds_file else Path(cfg.manifest).with_name("folds.json")
    if path.exists():
        return FoldSplit(json.loads(path.read_text())["folds"])
    return make_folds(pairs, cfg.folds, cfg.seed)


# --------------------------------------------------------------------------
# build-dataset


def _resample_probs(probs: np.ndarray, mapping: np.ndarray) -> np.ndarray:
    """Boundary probability of each resampled frame: max over the source frames it stands for."""
    ends = np.append(mapping[1:], len(probs))
    return np.array([probs[a:max(a + 1, b)].max() for a, b in zip(mapping, ends)])


def _ingest_side(entry: dict, base: Path, side: str, threshold: float, collapse: bool,
                 std_dir: Path | None) -> VideoRef:
    d = entry[side]
    where = f"pair {entry.get('pair_id')} {side}"
    file = Path(d["file"])
    file = file if file.is_absolute() else base / file
    probs_file = Path(d["probabilities"])
    probs_file = probs_file if probs_file.is_absolute() else base / probs_file
    if not file.exists():
        raise ManifestError(f"{where}: missing video file {file}")
    if not probs_file.exists():
        raise ManifestError(f"{where}: missing boundary probabilities {probs_file}")
    n, fps = probe_video(file)
    probs = read_probabilities(probs_file)
    if len(probs) != n:
        raise ManifestError(f"{where}: {len(probs)} probabilities for {n} frames")
    if std_dir is not None and abs(fps - STANDARD_FPS) > 1e-3:
        out = std_dir / f"{d['video_id']}.avi"
        mapping = standardize_fps(file, out, STANDARD_FPS)
        if audio_sidecar(file).exists():
            shutil.copyfile(audio_sidecar(file), audio_sidecar(out))
        probs = _resample_probs(probs, mapping)
        file, fps, n = out, STANDARD_FPS, len(mapping)
    shots = boundaries_from_probabilities(probs, threshold, collapse_runs=collapse)
    return VideoRef(str(d["video_id"]), str(file), fps, n, shots)


def cmd_build_dataset(args) -> int:
    raw_path = Path(args.raw)
    try:
        raw = json.loads(raw_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read {raw_path}: {exc}") from exc
    out = Path(args.out or "manifest.json")
    thresholds = SWEEP_THRESHOLDS if args.sweep else (args.threshold,)
    std_dir = out.parent / "standardized" if args.standardize_fps else None
    if std_dir is not None:
        std_dir.mkdir(parents=True, exist_ok=True)
    ids = [e.get("pair_id") for e in raw]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{raw_path}: duplicate pair ids")
    results = {}
    for thr in thresholds:
        pairs = []
        for entry in raw:
            long = _ingest_side(entry, raw_path.parent, "long", thr, args.collapse_runs, std_dir)
            short = _ingest_side(entry, raw_path.parent, "short", thr, args.collapse_runs, None)
            pair = AdPair(str(entry["pair_id"]), long, short)
            pair.mapping = match_shots(short, long)
            labels_from_mapping(pair)
            pairs.append(pair)
        results[thr] = pairs
    # nothing is written until every pair has been processed
    out.parent.mkdir(parents=True, exist_ok=True)
    for thr, pairs in results.items():
        target = out.with_name(f"{out.stem}.t{thr}{out.suffix}") if args.sweep else out
        dump_manifest(pairs, target)
        review = target.with_name(target.stem + ".review.json")
        write_json(review, {"similarity_floor": args.similarity_floor,
                            "threshold": thr,
                            "flagged": review_report(pairs, args.similarity_floor)})
        log.info("wrote %s (%d pairs)", target, len(pairs))
    first = results[thresholds[-1]]
    folds = make_folds(first, args.folds, args.seed)
    write_json(out.with_name("folds.json"), {"k": args.folds, "seed": args.seed, "folds": folds.folds})
    return 0


# --------------------------------------------------------------------------
# pipeline commands


def cmd_extract(args) -> int:
    cfg = _config(args)
    pairs = _selected_pairs(cfg, args.pairs)
    streams = fusion_config(cfg).inputs if not args.all_streams else ("visual", "audio")
    ensure_features(pairs, cfg, streams)
    cache = FeatureCache(cfg.cache_dir)
    silent = []
    for p in pairs:
        fms = example_for(p, cfg, cache, with_labels=False)
        if fms.audio is not None and fms.audio.flags.get("silent_audio"):
            silent.append(p.long.video_id)
    write_json(Path(cfg.output_dir) / "extract_report.json", {
        "fingerprint": cfg.fingerprint(), "videos": [p.long.video_id for p in pairs],
        "streams": list(streams), "silent_audio": silent, "cache_warnings": cache.warnings,
    })
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    pairs = load_manifest(cfg.manifest)
    if args.fold is not None:
        keep = set(_folds(cfg, pairs).train_ids(args.fold))
        pairs = [p for p in pairs if p.pair_id in keep]
    cache = FeatureCache(cfg.cache_dir)
    examples = [example_for(p, cfg, cache) for p in pairs]
    meta = {"fingerprint": cfg.fingerprint(), "stride": cfg.stride, "hws": cfg.hws,
            "trained_on": [p.pair_id for p in pairs]}
    scorer, report = train(examples, fusion_config(cfg), train_config(cfg), scorer_config(cfg),
                           backend_ids(cfg), meta)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "model.ckpt.json"
    scorer.save(ckpt)
    write_json(out / "train_report.json", {"fingerprint": cfg.fingerprint(), **report.to_json()})
    log.info("final epoch loss %.6f", report.epoch_losses[-1])
    return 0


def _load_checked(cfg: RunConfig, path: Path) -> TrainedScorer:
    scorer = TrainedScorer.load(path)
    got = scorer.meta.get("fingerprint")
    if got != cfg.fingerprint():
        raise CheckpointError(f"checkpoint fingerprint {got} does not match config fingerprint {cfg.fingerprint()}")
    return scorer


def cmd_predict(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    scorer = _load_checked(cfg, Path(args.checkpoint) if args.checkpoint else out / "model.ckpt.json")
    cache = FeatureCache(cfg.cache_dir)
    for p in _selected_pairs(cfg, args.pairs):
        ex = example_for(p, cfg, cache, with_labels=False)
        clip_scores = scorer.predict_scores(ex)
        frames = np.repeat(clip_scores, cfg.stride)[:p.long.frame_count]
        write_json(out / "scores" / f"{p.pair_id}.json", {
            "pair_id": p.pair_id, "video_id": p.long.video_id, "fingerprint": cfg.fingerprint(),
            "stride": cfg.stride, "frame_count": p.long.frame_count,
            "clip_scores": clip_scores.tolist(), "frame_scores": frames.tolist(),
        })
    return 0


def _read_scores(out: Path, pair: AdPair) -> np.ndarray:
    path = out / "scores" / f"{pair.pair_id}.json"
    if not path.exists():
        raise AdsumError(f"no score file for pair {pair.pair_id} at {path}; run predict first")
    doc = json.loads(path.read_text())
    frames = np.asarray(doc["frame_scores"], dtype=np.float64)
    if len(frames) != pair.long.frame_count:
        raise AdsumError(f"{path}: {len(frames)} frame scores for {pair.long.frame_count} frames")
    return frames


def cmd_clip(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    missing_tool = None
    for p in _selected_pairs(cfg, args.pairs):
        sel = select_for_video(_read_scores(out, p), p.long, cfg.budget_seconds)
        cut = emit_cut_list(sel, p)
        cut["fingerprint"] = cfg.fingerprint()
        write_cut_list(cut, out / "cuts" / f"{p.pair_id}.json")
        if args.assemble:
            try:
                assemble(cut, p.long.file, out / "cuts" / f"{p.pair_id}.avi")
            except MissingDependencyError as exc:
                missing_tool = exc
    if missing_tool is not None:
        raise missing_tool
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output_dir)
    pairs = load_manifest(cfg.manifest)
    if args.cv:
        cache = FeatureCache(cfg.cache_dir)
        report = run_cross_validation(
            pairs, _folds(cfg, pairs), fusion_config(cfg), train_config(cfg), scorer_config(cfg),
            lambda p: example_for(p, cfg, cache), cfg.budget_seconds, cfg.stride,
            backend_ids(cfg), cfg.fingerprint(), args.positional,
        )
        write_json(out / "cv_report.json", report.to_json())
        log.info("grand mean %s", report.grand_mean)
        return 0
    rows = []
    for p in pairs:
        if args.pairs and p.pair_id not in args.pairs:
            continue
        frames = _read_scores(out, p)
        sel = select_for_video(frames, p.long, cfg.budget_seconds)
        row = {"pair_id": p.pair_id, **video_metrics(frames, labels_from_mapping(p), sel, p.mapping)}
        if args.positional:
            row["positional"] = positional_breakdown(sel, p.mapping, p.long)
        rows.append(row)
    means, excluded = mean_defined(rows, FRAME_METRICS + SHOT_METRICS)
    write_json(out / "report.json", {"fingerprint": cfg.fingerprint(), "kendall_variant": "tau-b",
                                     "per_video": rows, "mean": means, "undefined_counts": excluded})
    return 0


def cmd_synth(args) -> int:
    from .synthetic import make_fixture_set

    raw, _ = make_fixture_set(args.out, args.pairs, args.seed, args.seconds)
    print(raw)
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adsum", description="Clip 30 s video ads down to 15 s.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML run configuration")
    common.add_argument("--manifest")
    common.add_argument("--cache-dir")
    common.add_argument("--out", help="output directory")
    common.add_argument("--folds-file")
    common.add_argument("--visual-backend")
    common.add_argument("--audio-backend")
    common.add_argument("--attention", help="attention backbone: googlenet, googlenet-untrained, row-local")
    common.add_argument("--fine-tune", action="store_true", help="train the attention backbone too")
    common.add_argument("--zscore", action="store_true", help="per-video feature z-score (ablation)")
    common.add_argument("--stride", type=int)
    common.add_argument("--hws", type=int)
    common.add_argument("--fusion", choices=["visual_only", "audio_only", "early", "late"])
    common.add_argument("--alpha", type=float)
    common.add_argument("--beta", type=float)
    common.add_argument("--loss", choices=["bce", "mse"])
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--budget", type=float)
    common.add_argument("--folds", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--pairs", nargs="*", help="restrict to these pair ids")

    p = sub.add_parser("synth", help="write a synthetic fixture set")
    p.add_argument("--out", required=True)
    p.add_argument("--pairs", type=int, default=10)
    p.add_argument("--seconds", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-dataset", help="shot segmentation + matching -> manifest")
    p.add_argument("--raw", required=True, help="JSON list of {pair_id, long:{video_id,file,probabilities}, short:{...}}")
    p.add_argument("--out", help="manifest path (default manifest.json)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--sweep", action="store_true", help="write one manifest per threshold 0.1, 0.3, 0.5")
    p.add_argument("--collapse-runs", action="store_true")
    p.add_argument("--standardize-fps", action="store_true", help=f"resample long videos to {STANDARD_FPS:.3f} fps")
    p.add_argument("--similarity-floor", type=float, default=0.05)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("extract", parents=[common], help="fill the feature cache")
    p.add_argument("--all-streams", action="store_true", help="embed both streams regardless of fusion mode")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train the scorer")
    p.add_argument("--fold", type=int, help="hold out this fold")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score every long video")
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("clip", parents=[common], help="select shots and write cut lists")
    p.add_argument("--assemble", action="store_true", help="also render the cut with ffmpeg")
    p.set_defaults(func=cmd_clip)

    p = sub.add_parser("evaluate", parents=[common], help="metric report")
    p.add_argument("--cv", action="store_true", help="run k-fold cross-validation")
    p.add_argument("--positional", action="store_true", help="first-half vs second-half shot breakdown")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MissingDependencyError as exc:
        print(f"adsum: missing dependency: {exc}", file=sys.stderr)
        return 2
    except (AdsumError, ValueError) as exc:
        print(f"adsum: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
