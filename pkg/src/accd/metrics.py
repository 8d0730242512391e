"""Pixel-wise and object-wise change-detection metrics.

Object-wise evaluation comes in two variants: the adjusted-IoU one, which
tolerates fragmented predictions by excluding pixels correctly covered by
other ground-truth components, and the overlap one, where any prediction
touching a real positive pixel counts as a true positive.  Every 0/0
denominator resolves to 0 so aggregate tables stay total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .model_io import GroundTruthMask
from .validator import label_components

SIOU_TAUS = (0.25, 0.5, 0.75)

# A prediction overlapping any positive pixel is a TP even when the matched
# ground-truth region was already claimed by an earlier fragment.
OVERLAP_TP_RULE = "per-prediction-pixel-overlap"


@dataclass
class PixelConfusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __add__(self, other: "PixelConfusion") -> "PixelConfusion":
        return PixelConfusion(self.tp + other.tp, self.fp + other.fp,
                              self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass
class ObjectCounts:
    variant: str  # siou | overlap
    tp: int = 0
    fn: int = 0
    fp: int = 0
    n_frames: int = 0
    tau: float | None = None

    def __add__(self, other: "ObjectCounts") -> "ObjectCounts":
        if self.variant != other.variant or self.tau != other.tau:
            raise ValueError("cannot add object counts of different variants")
        return ObjectCounts(self.variant, self.tp + other.tp, self.fn + other.fn,
                            self.fp + other.fp, self.n_frames + other.n_frames, self.tau)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def pixel_confusion(pred: np.ndarray, gt: GroundTruthMask) -> PixelConfusion:
    """Confusion counts over the evaluated (non-ignored) pixels only."""
    pred = np.asarray(pred, dtype=bool)
    if pred.shape != gt.labels.shape:
        raise ShapeError(f"prediction shape {pred.shape} != ground truth {gt.labels.shape}")
    keep = gt.evaluated()
    pos = gt.positive()
    tp = int(np.count_nonzero(pred & pos & keep))
    fp = int(np.count_nonzero(pred & ~pos & keep))
    fn = int(np.count_nonzero(~pred & pos & keep))
    tn = int(np.count_nonzero(~pred & ~pos & keep))
    return PixelConfusion(tp=tp, fp=fp, fn=fn, tn=tn)


def pixel_metrics(conf: PixelConfusion) -> dict[str, float]:
    pr = _ratio(conf.tp, conf.tp + conf.fp)
    re = _ratio(conf.tp, conf.tp + conf.fn)
    return {
        "precision": pr,
        "recall": re,
        "fpr": _ratio(conf.fp, conf.fp + conf.tn),
        "pwc": 100.0 * _ratio(conf.fn + conf.fp, conf.total),
        "f1": _ratio(2.0 * pr * re, pr + re),
    }


def _as_sets(components: list[np.ndarray]) -> list[frozenset]:
    return [frozenset(map(tuple, comp)) for comp in components]


def siou(k, predictions, gt) -> float:
    """Adjusted IoU of ground-truth component k against all predictions.

    The union of predictions intersecting k is compared with k, except that
    pixels lying on *other* ground-truth components are excluded from the
    denominator (covering a neighbor correctly costs nothing).  Components
    are pixel sets (any iterable of (row, col) pairs).
    """
    k = frozenset(map(tuple, np.asarray(k).tolist())) if not isinstance(k, frozenset) else k
    predictions = [frozenset(map(tuple, np.asarray(p).tolist())) if not isinstance(p, frozenset) else p
                   for p in predictions]
    gt = [frozenset(map(tuple, np.asarray(g).tolist())) if not isinstance(g, frozenset) else g
          for g in gt]
    hitting = [p for p in predictions if p & k]
    if not hitting:
        return 0.0
    k_hat = frozenset().union(*hitting)
    others = frozenset().union(*(g for g in gt if g != k)) if len(gt) > 1 else frozenset()
    denom = (k | k_hat) - others
    return len(k & k_hat) / len(denom)


def ppv(k_hat, gt) -> float:
    """Fraction of a predicted component's pixels that hit any ground truth."""
    k_hat = frozenset(map(tuple, np.asarray(k_hat).tolist())) if not isinstance(k_hat, frozenset) else k_hat
    if not k_hat:
        return 0.0
    gt_union = frozenset()
    for g in gt:
        gt_union |= frozenset(map(tuple, np.asarray(g).tolist())) if not isinstance(g, frozenset) else g
    return len(k_hat & gt_union) / len(k_hat)


def object_counts_siou(gt_mask: np.ndarray, pred_mask: np.ndarray,
                       tau: float) -> ObjectCounts:
    """Object counts of one frame under the adjusted-IoU rules.

    A ground-truth component is TP when its adjusted IoU exceeds tau, FN
    otherwise; a predicted component is FP when its positive predictive
    value is <= tau.
    """
    if not 0 <= tau < 1:
        raise DataError(f"tau must be in [0, 1), got {tau}")
    gt_comps = _as_sets(label_components(gt_mask))
    pred_comps = _as_sets(label_components(pred_mask))
    tp = sum(1 for k in gt_comps if siou(k, pred_comps, gt_comps) > tau)
    fn = len(gt_comps) - tp
    fp = sum(1 for p in pred_comps if ppv(p, gt_comps) <= tau)
    return ObjectCounts("siou", tp=tp, fn=fn, fp=fp, n_frames=1, tau=tau)


def object_counts_overlap(gt_masks: list[np.ndarray],
                          pred_masks: list[np.ndarray]) -> ObjectCounts:
    """Overlap-rule object counts over an aligned frame sequence.

    Predictions overlapping at least one positive pixel are TP (a matched
    ground-truth region is marked checked once and never becomes FN),
    zero-overlap predictions are FP, untouched ground-truth regions are FN.
    """
    if len(gt_masks) != len(pred_masks):
        raise ShapeError(
            f"sequence lengths differ: {len(gt_masks)} ground truth vs {len(pred_masks)} predictions"
        )
    counts = ObjectCounts("overlap")
    for gt, pred in zip(gt_masks, pred_masks):
        gt = np.asarray(gt, dtype=bool)
        pred = np.asarray(pred, dtype=bool)
        if gt.shape != pred.shape:
            raise ShapeError(f"frame shapes differ: {gt.shape} vs {pred.shape}")
        frame = ObjectCounts("overlap", n_frames=1)
        for comp in label_components(pred):
            if gt[comp[:, 0], comp[:, 1]].any():
                frame.tp += 1
            else:
                frame.fp += 1
        for comp in label_components(gt):
            if not pred[comp[:, 0], comp[:, 1]].any():
                frame.fn += 1
        counts = counts + frame
    return counts


def object_metrics(counts: ObjectCounts) -> dict[str, float]:
    """Precision/recall style metrics over object counts.

    The false positive rate is per frame (object-level true negatives have
    no meaning); PWC uses the three object counts.
    """
    pr = _ratio(counts.tp, counts.tp + counts.fp)
    re = _ratio(counts.tp, counts.tp + counts.fn)
    return {
        "precision": pr,
        "recall": re,
        "fpr": _ratio(counts.fp, counts.n_frames),
        "pwc": 100.0 * _ratio(counts.fn + counts.fp, counts.tp + counts.fn + counts.fp),
        "f1": _ratio(2.0 * pr * re, pr + re),
    }


def f1_siou(counts: ObjectCounts) -> float:
    return _ratio(counts.tp, counts.tp + counts.fn + counts.fp)


def siou_scores(gt_mask: np.ndarray, pred_mask: np.ndarray) -> list[float]:
    """Adjusted IoU of every ground-truth component of one frame."""
    gt_comps = _as_sets(label_components(gt_mask))
    pred_comps = _as_sets(label_components(pred_mask))
    return [siou(k, pred_comps, gt_comps) for k in gt_comps]


def relative_change(before: float, after: float) -> float:
    """Percent change (after - before) / before * 100."""
    if before == 0:
        raise DataError("relative change undefined for a zero baseline")
    return (after - before) / before * 100.0


def bucketize(values: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-width bin edges covering the data (single unit bin if constant)."""
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        return np.array([lo, lo + 1.0])
    return np.linspace(lo, hi, n_bins + 1)


def score_histograms(records: list[tuple[int, float, bool]],
                     n_bins: int = 20) -> list[tuple]:
    """TP/FP histogram rows over region size and over fused log NFA.

    ``records`` holds (size, fused_log_nfa, is_tp) per region.  Returns rows
    (axis, bucket_lo, bucket_hi, tp_count, fp_count); empty input gives no
    rows (header-only CSV downstream).
    """
    rows: list[tuple] = []
    if not records:
        return rows
    sizes = np.array([r[0] for r in records], dtype=np.float64)
    nfas = np.array([r[1] for r in records], dtype=np.float64)
    is_tp = np.array([r[2] for r in records], dtype=bool)
    for axis, values in (("size", sizes), ("log_nfa", nfas)):
        edges = bucketize(values, n_bins)
        idx = np.clip(np.digitize(values, edges) - 1, 0, len(edges) - 2)
        for b in range(len(edges) - 1):
            in_bin = idx == b
            rows.append((
                axis, float(edges[b]), float(edges[b + 1]),
                int(np.count_nonzero(in_bin & is_tp)),
                int(np.count_nonzero(in_bin & ~is_tp)),
            ))
    return rows


def evaluate_sequence(gts: list[GroundTruthMask],
                      preds: list[np.ndarray]) -> dict[str, float]:
    """All pixel and object metrics of one (ground truth, prediction) sequence.

    Predictions are restricted to the evaluated region before object
    analysis so detections inside ignored zones are neither rewarded nor
    punished.
    """
    if len(gts) != len(preds):
        raise ShapeError(f"sequence lengths differ: {len(gts)} vs {len(preds)}")
    conf = PixelConfusion()
    gt_pos_frames: list[np.ndarray] = []
    pred_frames: list[np.ndarray] = []
    for gt, pred in zip(gts, preds):
        conf = conf + pixel_confusion(pred, gt)
        keep = gt.evaluated()
        gt_pos_frames.append(gt.positive() & keep)
        pred_frames.append(np.asarray(pred, dtype=bool) & keep)

    out: dict[str, float] = {}
    out["evaluated_pixels"] = float(conf.total)
    for name, value in pixel_metrics(conf).items():
        out[f"{name}_px"] = value
    for name in ("tp", "fp", "fn", "tn"):
        out[f"{name}_px"] = float(getattr(conf, name))

    overlap = object_counts_overlap(gt_pos_frames, pred_frames)
    for name, value in object_metrics(overlap).items():
        out[f"{name}_ob"] = value
    for name in ("tp", "fp", "fn"):
        out[f"{name}_ob"] = float(getattr(overlap, name))

    f1_per_tau = []
    for tau in SIOU_TAUS:
        counts = ObjectCounts("siou", tau=tau)
        for gt_pos, pred in zip(gt_pos_frames, pred_frames):
            counts = counts + object_counts_siou(gt_pos, pred, tau)
        f1_per_tau.append(f1_siou(counts))
    out["f1_siou"] = float(np.mean(f1_per_tau))

    all_scores: list[float] = []
    for gt_pos, pred in zip(gt_pos_frames, pred_frames):
        all_scores.extend(siou_scores(gt_pos, pred))
    out["mean_siou"] = float(np.mean(all_scores)) if all_scores else 0.0
    return out


METRIC_COLUMNS = (
    "recall_px", "fpr_px", "pwc_px", "precision_px", "f1_px",
    "recall_ob", "fpr_ob", "pwc_ob", "precision_ob", "f1_ob",
    "mean_siou", "f1_siou",
)
