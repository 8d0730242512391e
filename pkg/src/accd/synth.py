"""Self-contained synthetic dataset generator.

Builds a sequence directory with planted ground truth: background features
drawn from a per-region Gaussian mixture, a handful of test frames carrying
rectangular anomalies (every channel shifted by ``delta`` standard
deviations), and candidate masks equal to the true rectangles plus planted
false blobs sitting on plain background, so their p-values are honest.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .config import RunConfig, save_config
from .model_io import save_feature_array, save_mask
from .validator import FOUR_CONNECTED

STAGE_GRIDS = {1: (64, 64), 2: (32, 32)}


@dataclass
class SynthSpec:
    n_train: int = 64
    n_test: int = 50
    n_rects: int = 5
    n_blobs: int = 20
    blob_size_range: tuple[int, int] = (1, 40)
    delta: float = 8.0
    dim: int = 8
    k_init: int = 8
    mask_size: tuple[int, int] = (256, 256)  # (width, height)
    n_background_regions: int = 3


def _region_map(h: int, w: int, n_regions: int) -> np.ndarray:
    cols = (np.arange(w) * n_regions) // w
    return np.broadcast_to(cols, (h, w))


def _draw_frames(rng, n_frames, grid, means, region_map, dim):
    h, w = grid
    base = means[region_map]  # (h, w, dim)
    noise = rng.standard_normal((n_frames, h, w, dim))
    return (base[None] + noise).astype(np.float32)


def _pick_rects(rng, spec: SynthSpec) -> list[dict]:
    """Anomaly rectangles in mask coordinates, aligned to 8 px so they map
    exactly onto whole cells of both stage grids."""
    width, height = spec.mask_size
    frames = sorted(int(f) for f in
                    rng.choice(spec.n_test, size=spec.n_rects, replace=False))
    rects = []
    for frame in frames:
        rw = 8 * int(rng.integers(3, 9))
        rh = 8 * int(rng.integers(3, 9))
        x0 = 8 * int(rng.integers(0, (width - rw) // 8 + 1))
        y0 = 8 * int(rng.integers(0, (height - rh) // 8 + 1))
        rects.append({"frame": frame, "x0": x0, "y0": y0, "w": rw, "h": rh})
    return rects


def _grow_blob(rng, occupied: np.ndarray, size: int) -> list[tuple[int, int]]:
    """Random 4-connected blob avoiding the occupied map."""
    h, w = occupied.shape
    for _ in range(200):
        r0, c0 = int(rng.integers(h)), int(rng.integers(w))
        if occupied[r0, c0]:
            continue
        blob = {(r0, c0)}
        frontier = []
        seen = {(r0, c0)}

        def push_neighbors(r, c):
            for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and (nr, nc) not in seen \
                        and not occupied[nr, nc]:
                    seen.add((nr, nc))
                    frontier.append((nr, nc))

        push_neighbors(r0, c0)
        while len(blob) < size and frontier:
            pick = frontier.pop(int(rng.integers(len(frontier))))
            blob.add(pick)
            push_neighbors(*pick)
        if len(blob) == size:
            return sorted(blob)
    raise RuntimeError(f"could not place a blob of {size} pixels")


def _dilate(mask: np.ndarray) -> np.ndarray:
    return ndimage.binary_dilation(mask, structure=FOUR_CONNECTED)


def generate_dataset(out_dir: str | Path, seed: int,
                     spec: SynthSpec | None = None) -> dict:
    """Write the full sequence layout under ``out_dir``; returns the manifest."""
    spec = spec or SynthSpec()
    out = Path(out_dir)
    rng = np.random.default_rng(seed)
    width, height = spec.mask_size
    dim = spec.dim

    # planted background mixture: one well-separated component per vertical band
    means = np.stack([
        np.full(dim, 10.0 * c) for c in range(spec.n_background_regions)
    ])
    rects = _pick_rects(rng, spec)
    rect_by_frame = {r["frame"]: r for r in rects}

    # ground-truth and candidate masks
    gt_frames = np.zeros((spec.n_test, height, width), dtype=bool)
    for r in rects:
        gt_frames[r["frame"], r["y0"]:r["y0"] + r["h"], r["x0"]:r["x0"] + r["w"]] = True

    blob_frames = np.zeros_like(gt_frames)
    occupied = [_dilate(gt_frames[t]) for t in range(spec.n_test)]
    blobs = []
    lo, hi = spec.blob_size_range
    for _ in range(spec.n_blobs):
        frame = int(rng.integers(spec.n_test))
        size = int(rng.integers(lo, hi + 1))
        pixels = _grow_blob(rng, occupied[frame], size)
        blob = np.zeros((height, width), dtype=bool)
        rows, cols = zip(*pixels)
        blob[list(rows), list(cols)] = True
        blob_frames[frame] |= blob
        occupied[frame] |= _dilate(blob)
        blobs.append({"frame": frame, "size": size})

    # feature tensors per stage; anomalous cells shifted by delta per channel
    (out / "gt").mkdir(parents=True, exist_ok=True)
    for stage, grid in STAGE_GRIDS.items():
        h, w = grid
        region_map = _region_map(h, w, spec.n_background_regions)
        stage_dir = out / "features" / f"stage{stage}"
        stage_dir.mkdir(parents=True, exist_ok=True)
        train = _draw_frames(rng, spec.n_train, grid, means, region_map, dim)
        save_feature_array(train, stage_dir / "train.npy")
        test = _draw_frames(rng, spec.n_test, grid, means, region_map, dim)
        sy, sx = height // h, width // w
        for r in rects:
            rows = slice(r["y0"] // sy, (r["y0"] + r["h"]) // sy)
            cols = slice(r["x0"] // sx, (r["x0"] + r["w"]) // sx)
            test[r["frame"], rows, cols, :] += spec.delta
        save_feature_array(test, stage_dir / "test.npy")

    mask_dir = out / "masks" / "planted"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for t in range(spec.n_test):
        save_mask(gt_frames[t], out / "gt" / f"gt_{t:04d}.png")
        save_mask(gt_frames[t] | blob_frames[t], mask_dir / f"mask_{t:04d}.png")

    cfg = RunConfig(
        k_init=spec.k_init,
        mask_width=width,
        mask_height=height,
        seed=seed,
        covariance_mode="full" if dim <= 64 else "diagonal",
    )
    save_config(cfg, out / "config.cfg")

    manifest = {
        "seed": seed,
        "spec": dataclasses.asdict(spec),
        "rects": rects,
        "rect_frames": sorted(rect_by_frame),
        "blobs": blobs,
    }
    (out / "synth_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest
