"""ResNet-50 stage-1/stage-2 activation export for the change-detection core.

Frames are resized to 256x256 (bilinear), optionally cleaned with a
frame-space temporal median, pushed through a ResNet-50 loaded from a
user-supplied checkpoint (a self-supervised one in production; any state
dict with the standard torchvision key names works), and the activations
after the first and second residual block groups are written as
channel-last little-endian float32 NPY files, one per frame and stage.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision.models import resnet50

log = logging.getLogger("accd_extractor")

RESIZE = (256, 256)
STAGE_STRIDE = {1: 4, 2: 8}
STAGE_CHANNELS = {1: 256, 2: 512}
# ImageNet statistics used by the pretraining recipes
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".pgm", ".ppm")


class ExtractorError(Exception):
    pass


class ConfigError(ExtractorError):
    pass


class WeightsError(ExtractorError):
    """Checkpoint missing or incompatible with the backbone."""


@dataclass
class ExtractionJob:
    input_dir: Path
    output_dir: Path
    stages: tuple[int, ...] = (1, 2)
    resize: tuple[int, int] = RESIZE
    median_window: int | None = None
    device: str = "cpu"
    weights_path: Path | None = None

    def validate(self) -> "ExtractionJob":
        if not self.stages or any(s not in (1, 2) for s in self.stages):
            raise ConfigError(f"stages must be a nonempty subset of (1, 2), got {self.stages}")
        if self.median_window is not None and (
            self.median_window < 1 or self.median_window % 2 == 0
        ):
            raise ConfigError(f"median window must be odd, got {self.median_window}")
        return self


@dataclass
class ExtractionResult:
    written: dict[int, list[Path]] = field(default_factory=dict)
    skipped: list[Path] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.skipped


def expected_grid(height: int, width: int, stage: int) -> tuple[int, int]:
    """Output grid of a stage: input size over the stage stride, rounded up."""
    stride = STAGE_STRIDE[stage]
    return math.ceil(height / stride), math.ceil(width / stride)


def median_prefilter(frames: np.ndarray, window: int) -> np.ndarray:
    """Per-pixel temporal median over windows clamped to the sequence ends.

    Even-length border windows take the lower middle value, so every output
    pixel is a value that occurs in the input.
    """
    if window % 2 == 0:
        raise ConfigError(f"median window must be odd, got {window}")
    n = frames.shape[0]
    if window > n:
        raise ConfigError(f"median window {window} exceeds frame count {n}")
    if window == 1:
        return frames.copy()
    half = window // 2
    out = np.empty_like(frames)
    for i in range(n):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        win = np.sort(frames[lo:hi], axis=0)
        out[i] = win[(hi - lo - 1) // 2]
    return out


def _normalize_state_dict(raw: dict) -> dict:
    if "state_dict" in raw and isinstance(raw["state_dict"], dict):
        raw = raw["state_dict"]
    cleaned = {}
    for key, value in raw.items():
        for prefix in ("module.", "backbone.", "encoder."):
            if key.startswith(prefix):
                key = key[len(prefix):]
        cleaned[key] = value
    return cleaned


def load_backbone(weights_path: str | Path, device: str = "cpu") -> torch.nn.Module:
    """Build the backbone and load checkpoint weights (classifier head optional)."""
    path = Path(weights_path)
    if not path.exists():
        raise WeightsError(f"weights file {path} does not exist")
    try:
        raw = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise WeightsError(f"cannot read checkpoint {path}: {exc}") from exc
    state = _normalize_state_dict(raw)
    model = resnet50(weights=None)
    missing, unexpected = model.load_state_dict(state, strict=False)
    missing = [k for k in missing if not k.startswith("fc.")]
    if missing:
        raise WeightsError(
            f"checkpoint {path} is missing {len(missing)} backbone tensors, "
            f"e.g. {missing[:3]}"
        )
    if unexpected:
        log.debug("ignoring %d unexpected checkpoint keys", len(unexpected))
    model.eval()
    return model.to(torch.device(device))


def _frame_files(directory: Path) -> list[Path]:
    files = [p for p in directory.iterdir()
             if p.is_file() and p.suffix.lower() in _IMAGE_SUFFIXES]
    if not files:
        raise ExtractorError(f"no frame images found under {directory}")
    return sorted(files, key=lambda p: p.name.encode("utf-8"))


def _load_frame(path: Path, resize: tuple[int, int]) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize(resize, Image.BILINEAR)
    return np.asarray(rgb, dtype=np.uint8)


def _stage_activations(model, batch: torch.Tensor, stages) -> dict[int, torch.Tensor]:
    out = {}
    with torch.inference_mode():
        x = model.maxpool(model.relu(model.bn1(model.conv1(batch))))
        x = model.layer1(x)
        if 1 in stages:
            out[1] = x
        if 2 in stages:
            out[2] = model.layer2(x)
    return out


def extract(job: ExtractionJob, model: torch.nn.Module | None = None) -> ExtractionResult:
    """Run the export; unreadable frames are skipped with a logged warning.

    Returns the written paths per stage plus the skipped inputs; callers
    should treat a nonempty skip list as a failed run.
    """
    job.validate()
    if model is None:
        if job.weights_path is None:
            raise WeightsError("no weights path given")
        model = load_backbone(job.weights_path, job.device)
    torch.set_num_threads(1)  # keeps convolution reductions reproducible

    files = _frame_files(Path(job.input_dir))
    frames, kept_files, result = [], [], ExtractionResult()
    for path in files:
        try:
            frames.append(_load_frame(path, job.resize))
        except OSError as exc:
            log.warning("skipping unreadable frame %s: %s", path, exc)
            result.skipped.append(path)
            continue
        kept_files.append(path)
    if not frames:
        return result

    stack = np.stack(frames)
    if job.median_window is not None and job.median_window > 1:
        stack = median_prefilter(stack, job.median_window)

    device = torch.device(job.device)
    for stage in job.stages:
        (Path(job.output_dir) / f"stage{stage}").mkdir(parents=True, exist_ok=True)
        result.written[stage] = []
    for path, frame in zip(kept_files, stack):
        arr = (frame.astype(np.float32) / 255.0 - _MEAN) / _STD
        batch = torch.from_numpy(arr.transpose(2, 0, 1)[None]).to(device)
        activations = _stage_activations(model, batch, job.stages)
        for stage, tensor in activations.items():
            channel_last = tensor[0].permute(1, 2, 0).cpu().numpy()
            out_path = Path(job.output_dir) / f"stage{stage}" / f"{path.stem}.npy"
            np.save(out_path, np.ascontiguousarray(channel_last, dtype="<f4"))
            result.written[stage].append(out_path)
    return result
