import numpy as np
import pytest
from helpers import make_model, random_spd, tree_bytes
from PIL import Image

from accd.config import RunConfig, load_config, save_config
from accd.errors import (ConfigError, DataError, FormatError, ReadError,
                         ShapeError)
from accd.model_io import (load_feature_sequence, load_mask, load_model,
                           save_feature_array, save_mask, save_model)


class TestFeatureSequences:
    def test_zero_tensor_round_trip(self, tmp_path):
        path = tmp_path / "feats.npy"
        save_feature_array(np.zeros((2, 4, 4, 8), dtype=np.float32), path)
        seq = load_feature_sequence(path, stage_id=1)
        assert seq.shape == (2, 4, 4, 8)
        assert seq.frame_ids == [0, 1]
        assert not seq.frames.any()

    def test_directory_order_is_bytewise(self, tmp_path):
        rng = np.random.default_rng(0)
        # byte-wise sort: "a10" < "a2" < "b", unlike natural ordering
        names = ["b.npy", "a10.npy", "a2.npy"]
        payload = {}
        for name in names:
            arr = rng.normal(size=(4, 4, 8)).astype(np.float32)
            save_feature_array(arr, tmp_path / name)
            payload[name] = arr
        seq = load_feature_sequence(tmp_path, stage_id=2)
        expected_order = sorted(names, key=lambda n: n.encode())
        assert expected_order == ["a10.npy", "a2.npy", "b.npy"]
        for i, name in enumerate(expected_order):
            assert np.array_equal(seq.frames[i], payload[name])

    def test_nan_rejected(self, tmp_path):
        arr = np.zeros((1, 2, 2, 2), dtype=np.float32)
        arr[0, 0, 0, 0] = np.nan
        np.save(tmp_path / "bad.npy", arr)
        with pytest.raises(DataError):
            load_feature_sequence(tmp_path / "bad.npy", stage_id=1)

    def test_rank_out_of_range(self, tmp_path):
        np.save(tmp_path / "flat.npy", np.zeros((3, 3), dtype=np.float32))
        with pytest.raises(ShapeError):
            load_feature_sequence(tmp_path / "flat.npy", stage_id=1)

    def test_rank3_file_is_one_frame(self, tmp_path):
        np.save(tmp_path / "one.npy", np.ones((2, 2, 3), dtype=np.float32))
        seq = load_feature_sequence(tmp_path / "one.npy", stage_id=1)
        assert seq.shape == (1, 2, 2, 3)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "junk.npy").write_bytes(b"NOTNUMPYDATA" * 4)
        with pytest.raises(FormatError):
            load_feature_sequence(tmp_path / "junk.npy", stage_id=1)

    def test_wrong_npy_version(self, tmp_path):
        path = tmp_path / "v2.npy"
        with open(path, "wb") as fh:
            np.lib.format.write_array(fh, np.zeros((1, 2, 2, 2), dtype=np.float32),
                                      version=(2, 0))
        with pytest.raises(FormatError):
            load_feature_sequence(path, stage_id=1)

    def test_wrong_dtype(self, tmp_path):
        np.save(tmp_path / "f64.npy", np.zeros((1, 2, 2, 2), dtype=np.float64))
        with pytest.raises(FormatError):
            load_feature_sequence(tmp_path / "f64.npy", stage_id=1)

    def test_mismatched_frame_shapes_in_directory(self, tmp_path):
        save_feature_array(np.zeros((2, 2, 2), dtype=np.float32), tmp_path / "a.npy")
        save_feature_array(np.zeros((3, 2, 2), dtype=np.float32), tmp_path / "b.npy")
        with pytest.raises(ShapeError):
            load_feature_sequence(tmp_path, stage_id=1)


class TestMasks:
    def test_all_zero_pgm_prediction(self, tmp_path):
        path = tmp_path / "empty.pgm"
        Image.fromarray(np.zeros((256, 256), dtype=np.uint8), mode="L").save(path)
        mask = load_mask(path, kind="prediction")
        assert mask.width == mask.height == 256
        assert mask.pixels.sum() == 0

    def test_half_positive_ground_truth(self, tmp_path):
        arr = np.zeros((64, 64), dtype=np.uint8)
        arr[:32] = 255
        path = tmp_path / "gt.png"
        Image.fromarray(arr, mode="L").save(path)
        gt = load_mask(path, kind="ground_truth")
        assert gt.positive().mean() == 0.5

    def test_unknown_code_rejected(self, tmp_path):
        arr = np.full((8, 8), 42, dtype=np.uint8)
        path = tmp_path / "gt.png"
        Image.fromarray(arr, mode="L").save(path)
        with pytest.raises(DataError):
            load_mask(path, kind="ground_truth")

    def test_multichannel_rejected(self, tmp_path):
        arr = np.zeros((8, 8, 3), dtype=np.uint8)
        path = tmp_path / "rgb.png"
        Image.fromarray(arr, mode="RGB").save(path)
        with pytest.raises(FormatError):
            load_mask(path, kind="prediction")

    def test_binarization_threshold(self, tmp_path):
        arr = np.array([[127, 128], [0, 255]], dtype=np.uint8)
        path = tmp_path / "mix.png"
        Image.fromarray(arr, mode="L").save(path)
        mask = load_mask(path, kind="prediction")
        assert mask.pixels.tolist() == [[False, True], [False, True]]

    def test_save_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        pixels = rng.random((32, 16)) < 0.4
        path = tmp_path / "mask.png"
        save_mask(pixels, path)
        again = load_mask(path, kind="prediction")
        assert np.array_equal(again.pixels, pixels)

    def test_code_mapping_is_total(self):
        from accd.model_io import GroundTruthMask
        arr = np.array([[0, 50, 85], [170, 255, 0]], dtype=np.uint8)
        gt = GroundTruthMask(labels=arr)
        pos, ign = gt.positive(), gt.ignored()
        neg = gt.evaluated() & ~pos
        assert np.array_equal(pos.astype(int) + ign.astype(int) + neg.astype(int),
                              np.ones_like(arr, dtype=int))


class TestModelContainer:
    def test_standard_normal_round_trip(self, tmp_path):
        model = make_model([1.0], [[0.0, 0.0]], covs=np.eye(2))
        path = tmp_path / "m.accd"
        save_model(model, path)
        back = load_model(path)
        save_model(back, tmp_path / "m2.accd")
        assert path.read_bytes() == (tmp_path / "m2.accd").read_bytes()
        assert back.global_mixture.weights.tolist() == [1.0]

    def test_random_model_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        k, d = 3, 4
        w = rng.random(k)
        w /= w.sum()
        spatial = rng.random((k, 5, 6))
        spatial /= spatial.sum(axis=0)
        model = make_model(w, rng.normal(size=(k, d)),
                           covs=np.stack([random_spd(rng, d) for _ in range(k)]),
                           spatial=spatial, grid=(5, 6), stage=2)
        path = tmp_path / "m.accd"
        save_model(model, path)
        back = load_model(path)
        for name in ("weights", "means", "factors", "log_dets"):
            assert getattr(back.global_mixture, name).tobytes() == \
                getattr(model.global_mixture, name).tobytes()
        assert back.spatial_weights.tobytes() == model.spatial_weights.tobytes()
        assert back.stage_id == 2

    def test_diagonal_and_pca_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        model = make_model([0.5, 0.5], rng.normal(size=(2, 3)),
                           variances=rng.random((2, 3)) + 0.1, grid=(2, 2))
        model.pca_mean = rng.normal(size=6)
        model.pca_basis = rng.normal(size=(6, 3))
        path = tmp_path / "m.accd"
        save_model(model, path)
        back = load_model(path)
        assert back.global_mixture.covariance_mode == "diagonal"
        assert back.pca_mean.tobytes() == model.pca_mean.tobytes()
        assert back.pca_basis.tobytes() == model.pca_basis.tobytes()

    def test_bad_magic(self, tmp_path):
        model = make_model([1.0], [[0.0]], covs=np.eye(1))
        path = tmp_path / "m.accd"
        save_model(model, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError):
            load_model(path)

    def test_truncated_file(self, tmp_path):
        model = make_model([1.0], [[0.0, 0.0]], covs=np.eye(2))
        path = tmp_path / "m.accd"
        save_model(model, path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(ReadError):
            load_model(path)

    def test_trailing_garbage(self, tmp_path):
        model = make_model([1.0], [[0.0, 0.0]], covs=np.eye(2))
        path = tmp_path / "m.accd"
        save_model(model, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError):
            load_model(path)


class TestConfig:
    def test_parse_with_comments(self, tmp_path):
        path = tmp_path / "config.cfg"
        path.write_text(
            "# run settings\n"
            "k_init = 12\n"
            "epsilon = 2.5   # looser threshold\n"
            "stages = 1\n"
            "pca_dim = none\n"
        )
        cfg = load_config(path)
        assert cfg.k_init == 12
        assert cfg.epsilon == 2.5
        assert cfg.stages == (1,)
        assert cfg.pca_dim is None

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "config.cfg"
        path.write_text("k_innit = 3\n")
        with pytest.raises(ConfigError):
            load_config(path)

    @pytest.mark.parametrize("kwargs", [
        {"epsilon": 0.0},
        {"alpha": -0.1},
        {"beta": 1.0},
        {"logp_floor": 0.0},
        {"c_f_stage1": 0.5},
        {"pca_dim": 7},
        {"median_window": 2},
        {"stages": (3,)},
    ])
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            RunConfig(**kwargs).validate()

    def test_save_load_round_trip(self, tmp_path):
        cfg = RunConfig(k_init=7, epsilon=0.5, pca_dim=4, stages=(2,), w_min=0.01)
        save_config(cfg, tmp_path / "c.cfg")
        back = load_config(tmp_path / "c.cfg")
        assert back == cfg


def test_tree_bytes_helper(tmp_path):
    (tmp_path / "sub").mkdir()
    (tmp_path / "a.txt").write_bytes(b"1")
    (tmp_path / "sub" / "b.txt").write_bytes(b"2")
    tree = tree_bytes(tmp_path)
    assert set(tree) == {"a.txt", "sub/b.txt"}
