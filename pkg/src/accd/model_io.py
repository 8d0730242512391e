"""Deterministic ingestion and serialization of tensors, masks and models.

On-disk formats:

* feature tensors: NPY v1.0, dtype ``<f4``, C order, shape ``[T, H, W, d]``
  (a directory of per-frame ``[H, W, d]`` files is also accepted),
* masks: 8-bit single-channel PNG or PGM,
* trained models: a single ``ACCD`` binary container (see ``save_model``).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError, FormatError, ReadError, ShapeError

GT_POSITIVE = 255
GT_NEGATIVE_CODES = (0, 50)
GT_IGNORED_CODES = (85, 170)
GT_VALID_CODES = frozenset((0, 50, 85, 170, 255))

_NPY_MAGIC = b"\x93NUMPY"


@dataclass
class FeatureSequence:
    """T frames of H x W x d backbone activations for one stage."""

    stage_id: int
    frames: np.ndarray  # (T, H, W, d) float32
    frame_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.frames.ndim != 4:
            raise ShapeError(f"feature frames must be 4-d, got rank {self.frames.ndim}")
        t, h, w, d = self.frames.shape
        if t < 1 or d < 1 or h < 1 or w < 1:
            raise ShapeError(f"degenerate feature shape {self.frames.shape}")
        if not np.isfinite(self.frames).all():
            raise DataError("feature tensor contains NaN or Inf")
        if not self.frame_ids:
            self.frame_ids = list(range(t))

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape

    @property
    def grid(self) -> tuple[int, int, int]:
        return self.frames.shape[1:]


@dataclass
class BinaryMask:
    """Boolean change mask; True marks changed pixels."""

    pixels: np.ndarray  # (height, width) bool
    label_source: str = "prediction"

    def __post_init__(self):
        if self.pixels.ndim != 2:
            raise ShapeError(f"mask must be 2-d, got rank {self.pixels.ndim}")
        self.pixels = self.pixels.astype(bool)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass
class GroundTruthMask:
    """Annotation mask with the 5-code convention.

    255 counts as positive, 0 and 50 (shadow) as negative, 85 (outside
    region of interest) and 170 (unknown) are excluded from evaluation.
    """

    labels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        if self.labels.ndim != 2:
            raise ShapeError(f"mask must be 2-d, got rank {self.labels.ndim}")
        codes = np.unique(self.labels)
        bad = [int(c) for c in codes if int(c) not in GT_VALID_CODES]
        if bad:
            raise DataError(f"unexpected ground-truth codes {bad}")

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    def positive(self) -> np.ndarray:
        return self.labels == GT_POSITIVE

    def ignored(self) -> np.ndarray:
        return np.isin(self.labels, GT_IGNORED_CODES)

    def evaluated(self) -> np.ndarray:
        return ~self.ignored()


def _read_npy_array(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(8)
    if len(head) < 8 or head[:6] != _NPY_MAGIC:
        raise FormatError(f"{path}: not an NPY file")
    if head[6:8] != b"\x01\x00":
        raise FormatError(f"{path}: NPY version {head[6]}.{head[7]} unsupported, need 1.0")
    try:
        arr = np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise FormatError(f"{path}: malformed NPY payload: {exc}") from exc
    if arr.dtype != np.float32 or arr.dtype.byteorder == ">":
        raise FormatError(f"{path}: dtype must be little-endian float32, got {arr.dtype.str}")
    if not arr.flags["C_CONTIGUOUS"]:
        raise FormatError(f"{path}: Fortran-order arrays are not supported")
    return arr


def save_feature_array(arr: np.ndarray, path: str | Path) -> None:
    """Write a float32 C-order NPY v1.0 file."""
    arr = np.ascontiguousarray(arr, dtype=np.float32)
    np.save(Path(path), arr)


def sorted_frame_files(directory: Path, suffix: str = ".npy") -> list[Path]:
    """Files of a directory in byte-wise (locale independent) name order."""
    entries = [p for p in directory.iterdir() if p.is_file() and p.suffix == suffix]
    return sorted(entries, key=lambda p: p.name.encode("utf-8"))


def load_feature_sequence(path: str | Path, stage_id: int) -> FeatureSequence:
    """Load a feature tensor file or a directory of per-frame files.

    A single file holds ``[T, H, W, d]`` (rank 3 is read as one frame);
    a directory holds per-frame ``[H, W, d]`` files stacked in byte-wise
    filename order.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted_frame_files(path)
        if not files:
            raise FormatError(f"{path}: no .npy frame files found")
        frames = []
        for f in files:
            arr = _read_npy_array(f)
            if arr.ndim != 3:
                raise ShapeError(f"{f}: per-frame files must be rank 3, got {arr.ndim}")
            if frames and arr.shape != frames[0].shape:
                raise ShapeError(
                    f"{f}: frame shape {arr.shape} differs from {frames[0].shape}"
                )
            frames.append(arr)
        stacked = np.stack(frames, axis=0)
    else:
        arr = _read_npy_array(path)
        if arr.ndim == 3:
            stacked = arr[None]
        elif arr.ndim == 4:
            stacked = arr
        else:
            raise ShapeError(f"{path}: expected rank 3 or 4, got rank {arr.ndim}")
    stacked.flags.writeable = False
    return FeatureSequence(stage_id=stage_id, frames=stacked)


def _load_gray_image(path: Path) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: cannot decode image: {exc}") from exc
    if img.mode != "L":
        raise FormatError(f"{path}: need an 8-bit single-channel image, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)


def load_mask(path: str | Path, kind: str = "prediction") -> BinaryMask | GroundTruthMask:
    """Load a mask image.

    Prediction masks binarize at threshold 128; ground-truth masks keep
    their label codes and reject anything outside the 5-code set.
    """
    arr = _load_gray_image(Path(path))
    if kind == "prediction":
        return BinaryMask(pixels=arr >= 128, label_source="prediction")
    if kind == "ground_truth":
        return GroundTruthMask(labels=arr)
    raise ValueError(f"kind must be 'prediction' or 'ground_truth', got {kind!r}")


def save_mask(pixels: np.ndarray, path: str | Path) -> None:
    """Write a boolean mask as a 0/255 grayscale PNG (or PGM by extension)."""
    arr = np.where(np.asarray(pixels, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(Path(path))


# --- model container -------------------------------------------------------
#
# Layout (little endian):
#   header:  magic "ACCD" | u16 version | u16 cov_mode (0 full, 1 diagonal)
#            | u32 stage_id | u32 K | u32 d | u32 H_f | u32 W_f | u32 pca_in
#   payload: float64 blocks, C order, in this exact order:
#            weights [K], means [K,d],
#            covariance factors [K,d,d] (Cholesky, full) or [K,d] (variances),
#            spatial weights [K,H_f,W_f],
#            pca mean [pca_in] and pca basis [pca_in,d]   (only if pca_in > 0)

_MODEL_MAGIC = b"ACCD"
_MODEL_VERSION = 1
_HEADER = struct.Struct("<4sHH6I")
_COV_MODE_CODE = {"full": 0, "diagonal": 1}
_COV_MODE_NAME = {v: k for k, v in _COV_MODE_CODE.items()}


def save_model(model, path: str | Path) -> None:
    """Serialize a localized mixture model; round trips bit exactly."""
    mix = model.global_mixture
    k, d = mix.means.shape
    h_f, w_f = model.spatial_weights.shape[1:]
    pca_in = 0 if model.pca_basis is None else model.pca_basis.shape[0]
    header = _HEADER.pack(
        _MODEL_MAGIC,
        _MODEL_VERSION,
        _COV_MODE_CODE[mix.covariance_mode],
        model.stage_id,
        k,
        d,
        h_f,
        w_f,
        pca_in,
    )
    blocks = [mix.weights, mix.means, mix.factors, model.spatial_weights]
    if pca_in:
        blocks += [model.pca_mean, model.pca_basis]
    with open(Path(path), "wb") as fh:
        fh.write(header)
        for block in blocks:
            fh.write(np.ascontiguousarray(block, dtype="<f8").tobytes())


def _read_block(fh, shape) -> np.ndarray:
    count = int(np.prod(shape))
    raw = fh.read(count * 8)
    if len(raw) != count * 8:
        raise ReadError(f"truncated model file: expected {count * 8} bytes, got {len(raw)}")
    return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def load_model(path: str | Path):
    """Read an ``ACCD`` container back into a localized mixture model."""
    from .background import GlobalMixture, LocalizedMixtureModel

    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) != _HEADER.size:
            raise ReadError(f"{path}: file shorter than the container header")
        magic, version, cov_code, stage_id, k, d, h_f, w_f, pca_in = _HEADER.unpack(raw)
        if magic != _MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != _MODEL_VERSION:
            raise FormatError(f"{path}: unsupported container version {version}")
        if cov_code not in _COV_MODE_NAME:
            raise FormatError(f"{path}: unknown covariance mode code {cov_code}")
        mode = _COV_MODE_NAME[cov_code]
        weights = _read_block(fh, (k,))
        means = _read_block(fh, (k, d))
        factor_shape = (k, d, d) if mode == "full" else (k, d)
        factors = _read_block(fh, factor_shape)
        spatial = _read_block(fh, (k, h_f, w_f))
        pca_mean = pca_basis = None
        if pca_in:
            pca_mean = _read_block(fh, (pca_in,))
            pca_basis = _read_block(fh, (pca_in, d))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after the payload")
    mix = GlobalMixture(weights=weights, means=means, factors=factors,
                        covariance_mode=mode)
    return LocalizedMixtureModel(
        global_mixture=mix,
        spatial_weights=spatial,
        stage_id=stage_id,
        pca_mean=pca_mean,
        pca_basis=pca_basis,
    )
