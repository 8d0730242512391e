"""End-to-end orchestration used by the CLI: fit, score, validate, eval."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import metrics as metrics_mod
from .background import (fit_global_gmm, fit_pca, localize, prune_components,
                         temporal_median_features)
from .config import RunConfig
from .errors import AlignmentError, DataError
from .model_io import (FeatureSequence, load_feature_sequence, load_mask,
                       load_model, save_mask, save_model)
from .pvalue import pvalue_map, save_logp_map
from .validator import label_components, validate_mask, write_region_csv

log = logging.getLogger("accd")


def _feature_source(seq_dir: Path, stage: int, split: str) -> Path:
    stage_dir = seq_dir / "features" / f"stage{stage}"
    file_path = stage_dir / f"{split}.npy"
    if file_path.exists():
        return file_path
    dir_path = stage_dir / split
    if dir_path.is_dir():
        return dir_path
    raise FileNotFoundError(f"no {split} features for stage {stage} under {stage_dir}")


def _sorted_pngs(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise FileNotFoundError(f"mask directory {directory} does not exist")
    files = [p for p in directory.iterdir() if p.suffix in (".png", ".pgm")]
    return sorted(files, key=lambda p: p.name.encode("utf-8"))


def run_fit(seq_dir: str | Path, cfg: RunConfig, out_dir: str | Path | None = None,
            seed: int | None = None) -> dict[int, Path]:
    """Fit and serialize one localized mixture model per configured stage."""
    seq_dir = Path(seq_dir)
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir) if out_dir else seq_dir / "models"
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[int, Path] = {}
    for stage in cfg.stages:
        source = _feature_source(seq_dir, stage, "train")
        seq = load_feature_sequence(source, stage)
        if cfg.median_window > 1:
            seq = temporal_median_features(seq, cfg.median_window)
        t, h, w, d = seq.frames.shape
        samples = seq.frames.reshape(t * h * w, d).astype(np.float64)
        pca_mean = pca_basis = None
        if cfg.pca_dim is not None and cfg.pca_dim < d:
            pca_mean, pca_basis = fit_pca(samples, cfg.pca_dim)
            samples = (samples - pca_mean) @ pca_basis
            seq = FeatureSequence(
                stage, ((seq.frames.astype(np.float64) - pca_mean) @ pca_basis),
                list(seq.frame_ids),
            )
        mix = fit_global_gmm(samples, cfg, seed + stage)
        trace = mix.em_log_likelihoods
        log.info("stage %d: EM ran %d iterations, mean log-likelihood %s -> %s",
                 stage, len(trace), f"{trace[0]:.4f}", f"{trace[-1]:.4f}")
        mix = prune_components(mix, cfg.resolved_w_min())
        log.info("stage %d: %d components survive pruning", stage, mix.n_components)
        model = localize(mix, seq, cfg.smooth_radius)
        model.pca_mean = pca_mean
        model.pca_basis = pca_basis
        paths[stage] = out / f"stage{stage}.accd"
        save_model(model, paths[stage])
    return paths


def _load_models(seq_dir: Path, cfg: RunConfig, model_dir: Path | None = None):
    model_dir = model_dir or seq_dir / "models"
    models = {}
    for stage in cfg.stages:
        path = model_dir / f"stage{stage}.accd"
        if not path.exists():
            raise FileNotFoundError(f"missing model file {path}; run fit first")
        models[stage] = load_model(path)
    return models


def _stage_maps(models, features, frame_idx: int, cfg: RunConfig):
    return {
        stage: pvalue_map(models[stage], features[stage].frames[frame_idx],
                          (cfg.mask_width, cfg.mask_height), cfg.logp_floor)
        for stage in models
    }


def run_score(seq_dir: str | Path, cfg: RunConfig,
              out_dir: str | Path | None = None, split: str = "test") -> Path:
    """Dump per-frame log p-value maps (float32 NPY) for inspection."""
    seq_dir = Path(seq_dir)
    out = Path(out_dir) if out_dir else seq_dir / "scores"
    models = _load_models(seq_dir, cfg)
    features = {s: load_feature_sequence(_feature_source(seq_dir, s, split), s)
                for s in cfg.stages}
    n_frames = {s: f.frames.shape[0] for s, f in features.items()}
    if len(set(n_frames.values())) != 1:
        raise AlignmentError(f"stages disagree on frame count: {n_frames}")
    for stage in cfg.stages:
        (out / f"stage{stage}").mkdir(parents=True, exist_ok=True)
    for i in range(next(iter(n_frames.values()))):
        for stage, map_ in _stage_maps(models, features, i, cfg).items():
            save_logp_map(map_, out / f"stage{stage}" / f"logp_{i:04d}.npy")
    return out


def run_validate(seq_dir: str | Path, method: str, cfg: RunConfig,
                 out_dir: str | Path | None = None, jobs: int = 1,
                 model_dir: str | Path | None = None) -> Path:
    """Filter one method's candidate masks; writes masks plus a region table."""
    seq_dir = Path(seq_dir)
    out = Path(out_dir) if out_dir else seq_dir / "validated" / method
    mask_files = _sorted_pngs(seq_dir / "masks" / method)
    models = _load_models(seq_dir, cfg, Path(model_dir) if model_dir else None)
    features = {s: load_feature_sequence(_feature_source(seq_dir, s, "test"), s)
                for s in cfg.stages}
    counts = {s: f.frames.shape[0] for s, f in features.items()}
    if any(c != len(mask_files) for c in counts.values()):
        raise AlignmentError(
            f"{len(mask_files)} masks but feature frame counts are {counts}"
        )
    (out / "masks").mkdir(parents=True, exist_ok=True)

    def process(i: int):
        mask = load_mask(mask_files[i], kind="prediction")
        if (mask.width, mask.height) != (cfg.mask_width, cfg.mask_height):
            raise DataError(
                f"{mask_files[i]}: mask is {mask.width}x{mask.height}, "
                f"expected {cfg.mask_width}x{cfg.mask_height}"
            )
        maps = _stage_maps(models, features, i, cfg)
        return validate_mask(mask, maps, cfg, frame_id=i)

    indices = range(len(mask_files))
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(process, indices))
    else:
        reports = [process(i) for i in indices]
    for i, report in enumerate(reports):
        save_mask(report.output_mask, out / "masks" / mask_files[i].name)
    write_region_csv(reports, out / "regions.csv")
    n_regions = sum(len(r.regions) for r in reports)
    n_kept = sum(sum(reg.accepted for reg in r.regions) for r in reports)
    log.info("validated %d frames: kept %d of %d regions",
             len(reports), n_kept, n_regions)
    return out


def _load_eval_inputs(gt_dir: Path, mask_dir: Path):
    gt_files = _sorted_pngs(gt_dir)
    mask_files = _sorted_pngs(mask_dir)
    if len(gt_files) != len(mask_files):
        raise AlignmentError(
            f"{len(gt_files)} ground-truth frames vs {len(mask_files)} masks"
        )
    gts = [load_mask(p, kind="ground_truth") for p in gt_files]
    preds = [load_mask(p, kind="prediction").pixels for p in mask_files]
    return gts, preds


def run_eval(gt_dir: str | Path, before_dir: str | Path, after_dir: str | Path,
             out_dir: str | Path, method: str = "method") -> dict:
    """Metric tables for both conditions plus relative-change rows."""
    gt_dir, out = Path(gt_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    gts, before = _load_eval_inputs(gt_dir, Path(before_dir))
    gts_after, after = _load_eval_inputs(gt_dir, Path(after_dir))
    results = {
        "before": metrics_mod.evaluate_sequence(gts, before),
        "after": metrics_mod.evaluate_sequence(gts_after, after),
    }
    if results["before"]["evaluated_pixels"] == 0:
        log.warning("no evaluated pixels: ground truth is fully ignored")

    columns = sorted(results["before"])
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "condition", *columns])
        for condition, table in results.items():
            writer.writerow([method, condition, *(repr(table[c]) for c in columns)])

    rel_rows = []
    for metric in metrics_mod.METRIC_COLUMNS:
        b, a = results["before"][metric], results["after"][metric]
        try:
            change = repr(metrics_mod.relative_change(b, a))
        except DataError:
            change = "—"
        rel_rows.append([method, metric, repr(b), repr(a), change])
    with open(out / "relative_change.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "metric", "before", "after", "relative_change_pct"])
        writer.writerows(rel_rows)
    results["relative_change"] = rel_rows
    return results


def classify_regions(mask_files: list[Path], gt_files: list[Path],
                     region_rows: list[dict]) -> list[tuple[int, float, bool]]:
    """Label every region row TP/FP by overlap with the ground truth.

    Regions are re-derived from the candidate masks with the same labeling
    and ordering used during validation, so region ids line up.
    """
    if len(mask_files) != len(gt_files):
        raise AlignmentError(f"{len(mask_files)} masks vs {len(gt_files)} ground truth")
    records = []
    by_frame: dict[int, list[dict]] = {}
    for row in region_rows:
        by_frame.setdefault(int(row["frame_id"]), []).append(row)
    for frame_id, rows in sorted(by_frame.items()):
        mask = load_mask(mask_files[frame_id], kind="prediction")
        gt = load_mask(gt_files[frame_id], kind="ground_truth")
        gt_pos = gt.positive() & gt.evaluated()
        comps = label_components(mask)
        for row in rows:
            comp = comps[int(row["region_id"]) - 1]
            is_tp = bool(gt_pos[comp[:, 0], comp[:, 1]].any())
            records.append((int(row["n"]), float(row["fused_log_nfa"]), is_tp))
    return records


def run_report(regions_csv: str | Path, masks_dir: str | Path, gt_dir: str | Path,
               out_dir: str | Path, n_bins: int = 20,
               eval_dir: str | Path | None = None) -> Path:
    """Emit TP/FP histograms over region size and log NFA as CSV.

    When ``eval_dir`` points at an eval output, its summary table is also
    rendered as plain text.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(regions_csv, newline="") as fh:
        region_rows = list(csv.DictReader(fh))
    records = classify_regions(_sorted_pngs(Path(masks_dir)), _sorted_pngs(Path(gt_dir)),
                               region_rows)
    rows = metrics_mod.score_histograms(records, n_bins=n_bins)
    path = out / "score_histograms.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["axis", "bucket_lo", "bucket_hi", "tp_count", "fp_count"])
        for row in rows:
            writer.writerow([row[0], repr(row[1]), repr(row[2]), row[3], row[4]])
    if eval_dir is not None:
        text = render_summary_table(Path(eval_dir) / "summary.csv")
        (out / "summary.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    return path


def render_summary_table(summary_csv: str | Path) -> str:
    """Plain-text view of the wide eval summary, metrics as rows."""
    with open(summary_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return "(empty summary)\n"
    headers = [f"{r['method']}/{r['condition']}" for r in rows]
    metrics = [c for c in rows[0] if c not in ("method", "condition")]
    name_w = max(len(m) for m in metrics + ["metric"])
    col_w = max(12, *(len(h) for h in headers))
    lines = ["  ".join([f"{'metric':<{name_w}}"] + [f"{h:>{col_w}}" for h in headers])]
    for metric in metrics:
        cells = [f"{float(r[metric]):>{col_w}.4f}" for r in rows]
        lines.append("  ".join([f"{metric:<{name_w}}"] + cells))
    return "\n".join(lines) + "\n"
