"""A-contrario scoring and filtering of candidate change regions.

Every 4-connected component of a predicted mask is scored by its number of
false alarms: the count of testable regions of that size, times the product
of per-pixel p-values raised to 1/c_f (geometric mean over the receptive
field).  Components whose fused log-NFA stays below log(epsilon) survive.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import RunConfig
from .errors import ConfigError, ShapeError
from .model_io import BinaryMask
from .pvalue import LogPValueMap

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)

CSV_HEADER = ("frame_id", "region_id", "n", "log_nfa_stage1", "log_nfa_stage2",
              "fused_log_nfa", "verdict")


@dataclass
class RegionDetection:
    """One candidate region with its scores and verdict."""

    region_id: int
    pixels: np.ndarray  # (n, 2) row/col pairs in raster order
    size: int
    log_nfa_by_stage: dict[int, float]
    fused_log_nfa: float
    verdict: str  # accepted | rejected

    @property
    def accepted(self) -> bool:
        return self.verdict == "accepted"


@dataclass
class ValidationReport:
    """All regions of one frame plus the filtered output mask."""

    frame_id: int
    regions: list[RegionDetection]
    input_mask: np.ndarray
    output_mask: np.ndarray


def _label_image(mask: np.ndarray) -> tuple[np.ndarray, int]:
    return ndimage.label(np.asarray(mask, dtype=bool), structure=FOUR_CONNECTED)


def _component_order(labels: np.ndarray, n_regions: int):
    """Flat pixel coordinates grouped by label, plus the deterministic
    (min row, min col) presentation order of the labels."""
    rows, cols = np.nonzero(labels)
    labs = labels[rows, cols] - 1
    order = np.argsort(labs, kind="stable")  # keeps raster order inside a label
    rows, cols, labs = rows[order], cols[order], labs[order]
    counts = np.bincount(labs, minlength=n_regions)
    big = labels.shape[0] + labels.shape[1]
    min_r = np.full(n_regions, big)
    min_c = np.full(n_regions, big)
    np.minimum.at(min_r, labs, rows)
    np.minimum.at(min_c, labs, cols)
    present = np.lexsort((min_c, min_r))
    return rows, cols, labs, counts, present


def label_components(mask: np.ndarray | BinaryMask) -> list[np.ndarray]:
    """Maximal 4-connected components of the positive pixels.

    Returns one (n, 2) array of row/col pairs per component, ordered by the
    component's (min row, min col); diagonal contact does not connect.
    """
    pixels = mask.pixels if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    labels, n_regions = _label_image(pixels)
    if n_regions == 0:
        return []
    rows, cols, labs, counts, present = _component_order(labels, n_regions)
    splits = np.cumsum(counts)[:-1]
    comps = np.split(np.column_stack([rows, cols]), splits)
    return [comps[i] for i in present]


def log_num_tests(n: int | np.ndarray, x_size: int, y_size: int,
                  alpha: float, beta: float) -> float | np.ndarray:
    """log of the number of testable regions of size n in an X x Y image.

    The count of 4-connected shapes of size n is estimated as
    alpha * beta**n / n; any pixel may anchor a region, hence the X^2 Y^2
    position factor.
    """
    n = np.asarray(n, dtype=np.float64)
    out = (2.0 * np.log(x_size) + 2.0 * np.log(y_size)
           + np.log(alpha) + n * np.log(beta) - np.log(n))
    return out if out.ndim else float(out)


def region_log_nfa(region: np.ndarray, logp: LogPValueMap | np.ndarray,
                   cfg: RunConfig, stage: int | None = None) -> float:
    """log NFA of one region against one stage's log p-value map."""
    if isinstance(logp, LogPValueMap):
        stage = logp.stage_id if stage is None else stage
        values = logp.values
    else:
        values = np.asarray(logp)
    if stage is None:
        raise ConfigError("stage required when passing a bare array")
    region = np.asarray(region)
    rows, cols = region[:, 0], region[:, 1]
    h, w = values.shape
    if rows.min() < 0 or cols.min() < 0 or rows.max() >= h or cols.max() >= w:
        raise ShapeError("region extends outside the p-value map")
    n = region.shape[0]
    base = log_num_tests(n, w, h, cfg.alpha, cfg.beta)
    return float(base + values[rows, cols].sum() / cfg.c_f(stage))


def fuse_stages(per_stage: dict[int, float]) -> float:
    """Arithmetic mean of log NFAs = log of the geometric mean of NFAs."""
    if not per_stage:
        raise ConfigError("cannot fuse an empty stage map")
    return float(sum(per_stage.values()) / len(per_stage))


def score_mask(mask: np.ndarray, maps: dict[int, np.ndarray], cfg: RunConfig):
    """Vectorized region scoring for one frame.

    ``maps`` holds mask-resolution log p-value arrays keyed by stage.
    Returns (labels image, per-region arrays dict) where the arrays follow
    label order (1..R); the dict carries sizes, per-stage and fused log
    NFAs, the acceptance flags and the (min row, min col) ordering.
    """
    mask = np.asarray(mask, dtype=bool)
    for stage, values in maps.items():
        if values.shape != mask.shape:
            raise ShapeError(
                f"stage {stage} map shape {values.shape} != mask shape {mask.shape}"
            )
    labels, n_regions = _label_image(mask)
    if n_regions == 0:
        empty = np.zeros(0)
        return labels, {
            "sizes": np.zeros(0, dtype=int), "fused": empty, "accepted": empty.astype(bool),
            "per_stage": {s: empty for s in maps}, "order": np.zeros(0, dtype=int),
        }
    rows, cols, labs, counts, present = _component_order(labels, n_regions)
    h, w = mask.shape
    base = log_num_tests(counts, w, h, cfg.alpha, cfg.beta)
    per_stage = {}
    fused = np.zeros(n_regions)
    for stage, values in maps.items():
        sums = np.bincount(labs, weights=values[rows, cols], minlength=n_regions)
        per_stage[stage] = base + sums / cfg.c_f(stage)
        fused += per_stage[stage]
    fused /= len(maps)
    accepted = fused < np.log(cfg.epsilon)
    return labels, {
        "sizes": counts, "fused": fused, "accepted": accepted,
        "per_stage": per_stage, "order": present,
    }


def validate_mask(mask: np.ndarray | BinaryMask, maps: dict[int, LogPValueMap],
                  cfg: RunConfig, frame_id: int = 0) -> ValidationReport:
    """Score every component of the mask and keep the accepted ones."""
    pixels = mask.pixels if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    arrays = {s: (m.values if isinstance(m, LogPValueMap) else np.asarray(m))
              for s, m in maps.items()}
    labels, scores = score_mask(pixels, arrays, cfg)
    n_regions = scores["sizes"].shape[0]
    output = np.zeros_like(pixels)
    regions: list[RegionDetection] = []
    if n_regions:
        rows, cols = np.nonzero(labels)
        labs = labels[rows, cols] - 1
        order = np.argsort(labs, kind="stable")
        coords = np.column_stack([rows[order], cols[order]])
        splits = np.cumsum(scores["sizes"])[:-1]
        by_label = np.split(coords, splits)
        keep = np.zeros(n_regions + 1, dtype=bool)
        for rank, lab in enumerate(scores["order"], start=1):
            verdict = "accepted" if scores["accepted"][lab] else "rejected"
            regions.append(RegionDetection(
                region_id=rank,
                pixels=by_label[lab],
                size=int(scores["sizes"][lab]),
                log_nfa_by_stage={s: float(v[lab]) for s, v in scores["per_stage"].items()},
                fused_log_nfa=float(scores["fused"][lab]),
                verdict=verdict,
            ))
            keep[lab + 1] = scores["accepted"][lab]
        output = keep[labels]
    return ValidationReport(frame_id=frame_id, regions=regions,
                            input_mask=pixels, output_mask=output)


def write_region_csv(reports: list[ValidationReport], path: str | Path) -> None:
    """Region table: one row per (frame, region), stages missing -> empty cell."""
    with open(Path(path), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for report in reports:
            for region in report.regions:
                stage_cells = [
                    repr(region.log_nfa_by_stage[s]) if s in region.log_nfa_by_stage else ""
                    for s in (1, 2)
                ]
                writer.writerow([
                    report.frame_id, region.region_id, region.size,
                    *stage_cells, repr(region.fused_log_nfa), region.verdict,
                ])
