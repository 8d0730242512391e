"""Per-pixel log p-value upper bounds for the localized mixture.

The tail mass of the mixture beyond a query point is bounded by replacing
the (intractable) sublevel set of the mixture density with one ellipsoid
per component; each ellipsoid integral is a chi-square survival value with
a closed form.  All accumulation happens in the natural-log domain because
the squared radii routinely exceed 1000 and the survival values underflow
double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfcx, gammaln, logsumexp

from .background import LocalizedMixtureModel
from .errors import ShapeError

_LOG_2PI = float(np.log(2.0 * np.pi))
_LOG_SQRT_2_OVER_PI = 0.5 * float(np.log(2.0 / np.pi))
_CELL_CHUNK = 1 << 14


@dataclass
class LogPValueMap:
    """Natural-log p-value bounds at mask resolution for one stage."""

    stage_id: int
    values: np.ndarray          # (Y, X) after nearest-neighbor upsampling
    feature_values: np.ndarray  # (H_f, W_f) source grid

    def validate(self, logp_floor: float) -> "LogPValueMap":
        for arr in (self.values, self.feature_values):
            if arr.max(initial=-np.inf) > 0 or arr.min(initial=0.0) < logp_floor:
                raise ShapeError("log p-values must lie in [logp_floor, 0]")
        return self


def log_chi2_sf_even(m: int, x) -> np.ndarray | float:
    """log of the chi-square survival function for 2m degrees of freedom.

    Uses the exact finite sum sum_{j<m} (x/2)^j e^{-x/2} / j!, accumulated
    as a log-sum-exp so it stays finite for x up to ~1e7.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    x = np.asarray(x, dtype=np.float64)
    half = 0.5 * x
    with np.errstate(divide="ignore"):
        log_half = np.log(half)
    acc = np.zeros_like(half)  # j = 0 term before the common e^{-x/2} factor
    for j in range(1, m):
        acc = np.logaddexp(acc, j * log_half - gammaln(j + 1))
    out = np.minimum(acc - half, 0.0)
    return out if out.ndim else float(out)


def log_chi2_sf_odd(m: int, x) -> np.ndarray | float:
    """log survival function for 2m+1 degrees of freedom (m >= 0).

    Closed form: erfc(sqrt(x/2)) plus, for m >= 1, the finite sum
    sqrt(2/pi) * sum_{j=1..m} 2^j j!/(2j)! x^{j-1/2} e^{-x/2}.
    The erfc term is evaluated through its scaled variant so it never
    underflows.
    """
    if m < 0:
        raise ValueError(f"m must be >= 0, got {m}")
    x = np.asarray(x, dtype=np.float64)
    half = 0.5 * x
    z = np.sqrt(half)
    with np.errstate(divide="ignore"):
        acc = np.log(erfcx(z)) - half
        log_x = np.log(x)
    for j in range(1, m + 1):
        term = (
            _LOG_SQRT_2_OVER_PI
            + j * np.log(2.0)
            + gammaln(j + 1)
            - gammaln(2 * j + 1)
            + (j - 0.5) * log_x
            - half
        )
        acc = np.logaddexp(acc, term)
    out = np.minimum(acc, 0.0)
    return out if out.ndim else float(out)


def log_chi2_sf(d: int, x) -> np.ndarray | float:
    """log survival function of chi-square with d degrees of freedom."""
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    if d % 2 == 0:
        return log_chi2_sf_even(d // 2, x)
    return log_chi2_sf_odd((d - 1) // 2, x)


def chi2_sf_even(m: int, x) -> np.ndarray | float:
    """Chi-square survival function for even dimension d = 2m."""
    return np.exp(log_chi2_sf_even(m, x))


def chi2_sf_odd(m: int, x) -> np.ndarray | float:
    """Chi-square survival function for odd dimension d = 2m+1."""
    return np.exp(log_chi2_sf_odd(m, x))


def _radii_and_logw(model: LocalizedMixtureModel, pts: np.ndarray,
                    logw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared ellipsoid radii for each (point, component) pair.

    ``logw`` holds the local log weights aligned with ``pts`` rows.
    Components with zero weight get radius 0 (their term is later killed
    by the -inf log weight).
    """
    mix = model.global_mixture
    comp_ld = mix.component_log_density(pts)  # (N, K)
    joint = comp_ld + logw
    log_p = logsumexp(joint, axis=1)
    maha_sq = -2.0 * comp_ld - mix.log_dets - mix.dim * _LOG_2PI
    with np.errstate(invalid="ignore"):
        radii = np.maximum(0.0, maha_sq - 2.0 * (log_p[:, None] - joint))
    return radii, joint


def ellipsoid_radius_sq(model: LocalizedMixtureModel, p: np.ndarray,
                        x: int, y: int, i: int) -> float:
    """Squared radius of the component-i ellipsoid enclosing the sublevel set.

    Equals max(0, -2 log P(p | local mixture) + 2 log w_i(x,y)
    - log|Sigma_i| - d log 2pi).
    """
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    logw = model.log_spatial_weights()[:, y, x][None, :]
    radii, _ = _radii_and_logw(model, pts, logw)
    return float(radii[0, i])


def _log_pvalue_points(model: LocalizedMixtureModel, pts: np.ndarray,
                       logw: np.ndarray, logp_floor: float) -> np.ndarray:
    radii, _ = _radii_and_logw(model, pts, logw)
    log_sf = log_chi2_sf(model.dim, radii)
    bound = logsumexp(logw + log_sf, axis=1)
    return np.clip(bound, logp_floor, 0.0)


def log_pvalue(model: LocalizedMixtureModel, p: np.ndarray, x: int, y: int,
               logp_floor: float = -700.0) -> float:
    """Natural-log upper bound of the p-value of feature p at position (x, y)."""
    h, w, _ = model.grid
    if not (0 <= x < w and 0 <= y < h):
        raise ShapeError(f"position ({x}, {y}) outside the {w}x{h} feature grid")
    pts = np.atleast_2d(np.asarray(p, dtype=np.float64))
    logw = model.log_spatial_weights()[:, y, x][None, :]
    return float(_log_pvalue_points(model, pts, logw, logp_floor)[0])


def nearest_index_map(n_out: int, n_in: int) -> np.ndarray:
    """Source index for every output position of the nearest-neighbor upsample."""
    return (np.arange(n_out) * n_in) // n_out


def pvalue_map(model: LocalizedMixtureModel, frame: np.ndarray,
               target: tuple[int, int], logp_floor: float = -700.0) -> LogPValueMap:
    """Score a whole feature frame and upsample to mask resolution.

    ``frame`` has the raw feature dimension (projection is applied here if
    the model carries one); ``target`` is (width, height) of the mask grid.
    """
    h, w, _ = model.grid
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[:2] != (h, w):
        raise ShapeError(
            f"frame grid {frame.shape[:2]} does not match model grid {(h, w)}"
        )
    pts = model.project(frame.reshape(h * w, frame.shape[2]))
    if pts.shape[1] != model.dim:
        raise ShapeError(
            f"feature dimension {pts.shape[1]} does not match model dimension {model.dim}"
        )
    logw_grid = model.log_spatial_weights().reshape(model.global_mixture.n_components, h * w).T
    out = np.empty(h * w, dtype=np.float64)
    for lo in range(0, h * w, _CELL_CHUNK):
        hi = lo + _CELL_CHUNK
        out[lo:hi] = _log_pvalue_points(model, pts[lo:hi], logw_grid[lo:hi], logp_floor)
    feature_values = out.reshape(h, w)
    x_size, y_size = target
    rows = nearest_index_map(y_size, h)
    cols = nearest_index_map(x_size, w)
    values = feature_values[np.ix_(rows, cols)]
    return LogPValueMap(stage_id=model.stage_id, values=values,
                        feature_values=feature_values)


def save_logp_map(map_: LogPValueMap, path) -> None:
    """Debug dump of the mask-resolution map as float32 NPY."""
    np.save(path, map_.values.astype(np.float32))
