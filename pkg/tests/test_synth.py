import json

import numpy as np
from helpers import tree_bytes

from accd.model_io import load_feature_sequence, load_mask
from accd.synth import STAGE_GRIDS, SynthSpec, generate_dataset
from accd.validator import label_components

SMALL = SynthSpec(n_train=12, n_test=6, n_rects=2, n_blobs=4, dim=4, k_init=4)


def test_same_seed_same_bytes(tmp_path):
    generate_dataset(tmp_path / "a", seed=11, spec=SMALL)
    generate_dataset(tmp_path / "b", seed=11, spec=SMALL)
    assert tree_bytes(tmp_path / "a") == tree_bytes(tmp_path / "b")


def test_different_seed_differs(tmp_path):
    generate_dataset(tmp_path / "a", seed=1, spec=SMALL)
    generate_dataset(tmp_path / "b", seed=2, spec=SMALL)
    assert tree_bytes(tmp_path / "a") != tree_bytes(tmp_path / "b")


def test_layout_and_manifest(tmp_path):
    manifest = generate_dataset(tmp_path / "seq", seed=3, spec=SMALL)
    seq = tmp_path / "seq"
    assert (seq / "config.cfg").exists()
    assert len(manifest["rects"]) == 2
    assert len(manifest["blobs"]) == 4
    for blob in manifest["blobs"]:
        assert 1 <= blob["size"] <= 40
    saved = json.loads((seq / "synth_manifest.json").read_text())
    assert saved["rects"] == manifest["rects"]

    for stage, (h, w) in STAGE_GRIDS.items():
        for split, frames in (("train", SMALL.n_train), ("test", SMALL.n_test)):
            feats = load_feature_sequence(seq / "features" / f"stage{stage}" / f"{split}.npy",
                                          stage)
            assert feats.shape == (frames, h, w, SMALL.dim)


def test_blobs_disjoint_from_rectangles(tmp_path):
    manifest = generate_dataset(tmp_path / "seq", seed=4, spec=SMALL)
    seq = tmp_path / "seq"
    blob_count = 0
    for t in range(SMALL.n_test):
        gt = load_mask(seq / "gt" / f"gt_{t:04d}.png", "ground_truth")
        cand = load_mask(seq / "masks" / "planted" / f"mask_{t:04d}.png", "prediction")
        gt_pos = gt.positive()
        comps = label_components(cand.pixels)
        rect_here = int(t in manifest["rect_frames"])
        hit = sum(1 for c in comps if gt_pos[c[:, 0], c[:, 1]].any())
        assert hit == rect_here  # candidate components never merge with the truth
        blob_count += len(comps) - rect_here
    assert blob_count == SMALL.n_blobs


def test_anomaly_shifts_every_channel(tmp_path):
    manifest = generate_dataset(tmp_path / "seq", seed=5, spec=SMALL)
    seq = tmp_path / "seq"
    rect = manifest["rects"][0]
    feats = load_feature_sequence(seq / "features" / "stage1" / "test.npy", 1)
    h = STAGE_GRIDS[1][0]
    scale = SMALL.mask_size[1] // h
    rows = slice(rect["y0"] // scale, (rect["y0"] + rect["h"]) // scale)
    cols = slice(rect["x0"] // scale, (rect["x0"] + rect["w"]) // scale)
    inside = feats.frames[rect["frame"], rows, cols]
    train = load_feature_sequence(seq / "features" / "stage1" / "train.npy", 1)
    background = train.frames[:, rows, cols]
    shift = inside.mean(axis=(0, 1)) - background.mean(axis=(0, 1, 2))
    assert np.all(np.abs(shift - SMALL.delta) < 1.0)


def test_zero_delta_is_indistinguishable(tmp_path):
    from accd import pipeline
    from accd.config import load_config
    from accd.pvalue import pvalue_map

    spec = SynthSpec(n_train=12, n_test=4, n_rects=1, n_blobs=2, dim=4,
                     k_init=4, delta=0.0)
    manifest = generate_dataset(tmp_path / "seq", seed=6, spec=spec)
    seq = tmp_path / "seq"
    cfg = load_config(seq / "config.cfg")
    pipeline.run_fit(seq, cfg)
    from accd.model_io import load_feature_sequence, load_model
    model = load_model(seq / "models" / "stage1.accd")
    feats = load_feature_sequence(seq / "features" / "stage1" / "test.npy", 1)
    rect = manifest["rects"][0]
    res = pvalue_map(model, feats.frames[rect["frame"]], target=(64, 64),
                     logp_floor=cfg.logp_floor)
    grid = res.feature_values
    scale = spec.mask_size[1] // STAGE_GRIDS[1][0]
    rows = slice(rect["y0"] // scale, (rect["y0"] + rect["h"]) // scale)
    cols = slice(rect["x0"] // scale, (rect["x0"] + rect["w"]) // scale)
    inside = grid[rows, cols]
    outside = grid.copy()
    outside[rows, cols] = np.nan
    assert abs(np.mean(inside) - np.nanmean(outside)) < 0.5
