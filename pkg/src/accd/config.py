"""Run configuration: defaults, validation and the line-oriented config file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError

DEFAULT_MASK_SIZE = (256, 256)


@dataclass
class RunConfig:
    """All tunables of the pipeline with their default values.

    ``c_f_stage1``/``c_f_stage2`` are the receptive-field correction
    exponents of the two backbone stages.  ``alpha`` and ``beta`` are the
    constants of the 4-connected-region count estimate ``alpha * beta**n / n``
    used to size the number of tests.
    """

    k_init: int = 1000
    epsilon: float = 1.0
    c_f_stage1: float = 35.0
    c_f_stage2: float = 91.0
    alpha: float = 0.317
    beta: float = 4.06
    covariance_mode: str = "auto"  # auto | full | diagonal
    reg_lambda: float = 1e-2
    pca_dim: int | None = None
    logp_floor: float = -700.0
    em_max_iters: int = 100
    em_tol: float = 1e-6
    median_window: int = 1
    w_min: float | None = None  # default resolves to 0.1 / k_init
    smooth_radius: int = 1
    stages: tuple[int, ...] = (1, 2)
    mask_width: int = DEFAULT_MASK_SIZE[0]
    mask_height: int = DEFAULT_MASK_SIZE[1]
    seed: int = 0

    def validate(self) -> "RunConfig":
        if self.k_init < 1:
            raise ConfigError(f"k_init must be >= 1, got {self.k_init}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        for name in ("c_f_stage1", "c_f_stage2"):
            if not getattr(self, name) >= 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if not 0 < self.alpha:
            raise ConfigError(f"alpha must be > 0, got {self.alpha}")
        if not 1 < self.beta:
            raise ConfigError(f"beta must be > 1, got {self.beta}")
        if not self.logp_floor < 0:
            raise ConfigError(f"logp_floor must be < 0, got {self.logp_floor}")
        if self.reg_lambda < 0:
            raise ConfigError(f"reg_lambda must be >= 0, got {self.reg_lambda}")
        if self.covariance_mode not in ("auto", "full", "diagonal"):
            raise ConfigError(f"unknown covariance_mode {self.covariance_mode!r}")
        if self.pca_dim is not None:
            if self.pca_dim < 2 or self.pca_dim % 2 != 0:
                raise ConfigError(
                    f"pca_dim must be a positive even integer, got {self.pca_dim}"
                )
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ConfigError(f"median_window must be odd, got {self.median_window}")
        if self.w_min is not None and not 0 <= self.w_min < 1:
            raise ConfigError(f"w_min must be in [0, 1), got {self.w_min}")
        if self.smooth_radius < 0:
            raise ConfigError(f"smooth_radius must be >= 0, got {self.smooth_radius}")
        if self.em_max_iters < 1:
            raise ConfigError(f"em_max_iters must be >= 1, got {self.em_max_iters}")
        bad = [s for s in self.stages if s not in (1, 2)]
        if bad or not self.stages:
            raise ConfigError(f"stages must be a nonempty subset of (1, 2), got {self.stages}")
        if self.mask_width < 1 or self.mask_height < 1:
            raise ConfigError("mask dimensions must be positive")
        return self

    def c_f(self, stage: int) -> float:
        if stage == 1:
            return self.c_f_stage1
        if stage == 2:
            return self.c_f_stage2
        raise ConfigError(f"unknown stage {stage}")

    def resolved_w_min(self) -> float:
        return self.w_min if self.w_min is not None else 0.1 / self.k_init

    def resolve_covariance_mode(self, d: int) -> str:
        """Pick full covariances for small d, diagonal for high-dimensional fits."""
        if self.covariance_mode != "auto":
            return self.covariance_mode
        return "full" if d <= 64 else "diagonal"


_INT_KEYS = {"k_init", "em_max_iters", "median_window", "smooth_radius",
             "mask_width", "mask_height", "seed", "pca_dim"}
_FLOAT_KEYS = {"epsilon", "c_f_stage1", "c_f_stage2", "alpha", "beta",
               "reg_lambda", "logp_floor", "em_tol", "w_min"}
_STR_KEYS = {"covariance_mode"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key == "stages":
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    if key in _INT_KEYS:
        if raw.lower() in ("none", ""):
            return None
        return int(raw)
    if key in _FLOAT_KEYS:
        if raw.lower() in ("none", ""):
            return None
        return float(raw)
    if key in _STR_KEYS:
        return raw
    raise ConfigError(f"unknown config key {key!r}")


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    """Parse a ``key = value`` config file on top of ``base`` (or the defaults).

    Blank lines and ``#`` comments are skipped.  Unknown keys raise
    :class:`ConfigError` so typos do not silently fall back to defaults.
    """
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        try:
            value = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
        setattr(cfg, key, value)
    return cfg.validate()


def save_config(cfg: RunConfig, path: str | Path) -> None:
    """Write the config as the same line-oriented format ``load_config`` reads."""
    lines = []
    for field in dataclasses.fields(cfg):
        value = getattr(cfg, field.name)
        if field.name == "stages":
            value = ",".join(str(s) for s in value)
        elif value is None:
            value = "none"
        lines.append(f"{field.name} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
