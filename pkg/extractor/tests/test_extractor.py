import numpy as np
import pytest
import torch
from PIL import Image

from accd_extractor import (ConfigError, ExtractionJob, WeightsError,
                            expected_grid, extract, load_backbone,
                            median_prefilter)
from accd_extractor.cli import main


@pytest.fixture(scope="session")
def weights_file(tmp_path_factory):
    from torchvision.models import resnet50

    torch.manual_seed(0)
    model = resnet50(weights=None)
    path = tmp_path_factory.mktemp("weights") / "backbone.pt"
    torch.save(model.state_dict(), path)
    return path


@pytest.fixture(scope="session")
def backbone(weights_file):
    return load_backbone(weights_file)


@pytest.fixture()
def frames_dir(tmp_path):
    rng = np.random.default_rng(1)
    d = tmp_path / "frames"
    d.mkdir()
    for i, size in enumerate(((256, 256), (320, 240), (256, 256))):
        arr = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(arr, mode="RGB").save(d / f"frame_{i:03d}.png")
    return d


class TestMedianPrefilter:
    def test_static_scene_identity(self):
        frames = np.full((6, 4, 4, 3), 90, dtype=np.uint8)
        assert np.array_equal(median_prefilter(frames, 5), frames)

    def test_single_transient_removed(self):
        frames = np.zeros((7, 2, 2, 3), dtype=np.uint8)
        frames[3] = 255
        out = median_prefilter(frames, 5)
        assert out[3].max() == 0

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            median_prefilter(np.zeros((4, 2, 2, 3), dtype=np.uint8), 2)

    def test_outputs_are_observed_values(self):
        rng = np.random.default_rng(2)
        frames = rng.integers(0, 256, size=(5, 3, 3, 3), dtype=np.uint8)
        out = median_prefilter(frames, 3)
        for r in range(3):
            for c in range(3):
                for ch in range(3):
                    assert set(out[:, r, c, ch]) <= set(frames[:, r, c, ch])


class TestJobValidation:
    def test_empty_stages(self, tmp_path):
        with pytest.raises(ConfigError):
            ExtractionJob(tmp_path, tmp_path, stages=()).validate()

    def test_even_median(self, tmp_path):
        with pytest.raises(ConfigError):
            ExtractionJob(tmp_path, tmp_path, median_window=4).validate()


class TestWeightsLoading:
    def test_missing_file(self, tmp_path):
        with pytest.raises(WeightsError):
            load_backbone(tmp_path / "nope.pt")

    def test_incomplete_checkpoint(self, tmp_path):
        torch.manual_seed(0)
        partial = {"conv1.weight": torch.zeros(64, 3, 7, 7)}
        path = tmp_path / "partial.pt"
        torch.save(partial, path)
        with pytest.raises(WeightsError):
            load_backbone(path)

    def test_prefixed_keys_accepted(self, tmp_path, weights_file):
        state = torch.load(weights_file, weights_only=True)
        wrapped = {"state_dict": {f"module.{k}": v for k, v in state.items()}}
        path = tmp_path / "wrapped.pt"
        torch.save(wrapped, path)
        load_backbone(path)


class TestExtract:
    def test_shapes_and_finiteness(self, frames_dir, tmp_path, backbone):
        job = ExtractionJob(frames_dir, tmp_path / "out")
        result = extract(job, model=backbone)
        assert result.ok
        for stage, channels in ((1, 256), (2, 512)):
            paths = result.written[stage]
            assert len(paths) == 3
            for path in paths:
                arr = np.load(path)
                grid = expected_grid(256, 256, stage)
                assert arr.shape == (*grid, channels)
                assert arr.dtype == np.float32
                assert np.isfinite(arr).all()

    def test_stage_subset(self, frames_dir, tmp_path, backbone):
        job = ExtractionJob(frames_dir, tmp_path / "out", stages=(2,))
        result = extract(job, model=backbone)
        assert set(result.written) == {2}
        assert not (tmp_path / "out" / "stage1").exists()

    def test_stride_arithmetic_on_odd_size(self, frames_dir, tmp_path, backbone):
        job = ExtractionJob(frames_dir, tmp_path / "out", stages=(1, 2),
                            resize=(250, 250))
        result = extract(job, model=backbone)
        assert np.load(result.written[1][0]).shape == (*expected_grid(250, 250, 1), 256)
        assert np.load(result.written[2][0]).shape == (*expected_grid(250, 250, 2), 512)
        assert expected_grid(250, 250, 1) == (63, 63)
        assert expected_grid(250, 250, 2) == (32, 32)

    def test_unreadable_frame_skipped(self, frames_dir, tmp_path, backbone):
        (frames_dir / "frame_001a.png").write_bytes(b"this is not an image")
        job = ExtractionJob(frames_dir, tmp_path / "out")
        result = extract(job, model=backbone)
        assert not result.ok
        assert len(result.skipped) == 1
        assert len(result.written[1]) == 3  # the good frames still made it

    def test_median_window_applied(self, tmp_path, backbone):
        d = tmp_path / "frames"
        d.mkdir()
        base = np.full((256, 256, 3), 30, dtype=np.uint8)
        for i in range(5):
            frame = base.copy()
            if i == 2:
                frame[:] = 250  # transient that the median must erase
            Image.fromarray(frame, mode="RGB").save(d / f"f_{i}.png")
        plain = extract(ExtractionJob(d, tmp_path / "plain"), model=backbone)
        filtered = extract(ExtractionJob(d, tmp_path / "filtered", median_window=5),
                           model=backbone)
        a = np.load(plain.written[1][2])
        b = np.load(filtered.written[1][2])
        ref = np.load(plain.written[1][0])
        assert not np.allclose(a, ref)
        assert np.allclose(b, ref)


class TestCli:
    def test_no_weights_is_startup_error(self, frames_dir, tmp_path, monkeypatch, capsys):
        monkeypatch.delenv("ACCD_WEIGHTS", raising=False)
        assert main(["--in", str(frames_dir), "--out", str(tmp_path / "o")]) == 1
        assert "weights" in capsys.readouterr().err

    def test_env_weights(self, frames_dir, tmp_path, monkeypatch, weights_file):
        monkeypatch.setenv("ACCD_WEIGHTS", str(weights_file))
        code = main(["--in", str(frames_dir), "--out", str(tmp_path / "o"),
                     "--stages", "1"])
        assert code == 0
        assert len(list((tmp_path / "o" / "stage1").iterdir())) == 3
