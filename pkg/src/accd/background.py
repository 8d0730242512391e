"""Global-to-local Gaussian mixture modeling of background features.

A mixture is first fitted on all training feature vectors regardless of
position, then localized by giving every grid position its own component
weights (the responsibility of each component for the features observed
there, box-smoothed and renormalized).  Means and covariances stay shared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .config import RunConfig
from .errors import ConfigError, InsufficientDataError, NumericError, ShapeError
from .model_io import FeatureSequence

_LOG_2PI = float(np.log(2.0 * np.pi))
# Relative regularization turns absolute via the mean sample variance; this
# floor keeps it nonzero for constant inputs.
_VARIANCE_FLOOR = 1e-12
_EM_CHUNK = 1 << 16


@dataclass
class GaussianComponent:
    """One mixture component; covariance kept as its Cholesky factor
    (full mode) or as a variance vector (diagonal mode)."""

    mean: np.ndarray
    factor: np.ndarray  # (d, d) lower triangular, or (d,) variances
    covariance_mode: str
    log_det: float

    @property
    def factor_diagonal(self) -> np.ndarray:
        if self.covariance_mode == "full":
            return np.diagonal(self.factor)
        return np.sqrt(self.factor)


class GlobalMixture:
    """K Gaussians with position-independent parameters and global weights."""

    def __init__(self, weights: np.ndarray, means: np.ndarray, factors: np.ndarray,
                 covariance_mode: str, em_log_likelihoods: list[float] | None = None):
        if covariance_mode not in ("full", "diagonal"):
            raise ConfigError(f"unknown covariance mode {covariance_mode!r}")
        self.weights = np.asarray(weights, dtype=np.float64)
        self.means = np.asarray(means, dtype=np.float64)
        self.factors = np.asarray(factors, dtype=np.float64)
        self.covariance_mode = covariance_mode
        self.em_log_likelihoods = em_log_likelihoods
        if covariance_mode == "full":
            diag = np.diagonal(self.factors, axis1=1, axis2=2)
            self.log_dets = 2.0 * np.sum(np.log(diag), axis=1)
        else:
            self.log_dets = np.sum(np.log(self.factors), axis=1)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(self.means[i], self.factors[i],
                              self.covariance_mode, float(self.log_dets[i]))
            for i in range(self.n_components)
        ]

    def validate(self) -> "GlobalMixture":
        if self.weights.min(initial=0.0) < 0 or abs(self.weights.sum() - 1.0) > 1e-9:
            raise NumericError("mixture weights must be nonnegative and sum to 1")
        if self.covariance_mode == "full":
            diag = np.diagonal(self.factors, axis1=1, axis2=2)
        else:
            diag = self.factors
        if not (diag > 0).all():
            raise NumericError("covariance factors must have a positive diagonal")
        return self

    def component_log_density(self, points: np.ndarray) -> np.ndarray:
        """Per-component Gaussian log densities, shape (N, K)."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        n, d = pts.shape
        if d != self.dim:
            raise ShapeError(f"points have dimension {d}, mixture has {self.dim}")
        if self.covariance_mode == "full":
            maha = np.empty((n, self.n_components), dtype=np.float64)
            for i in range(self.n_components):
                sol = solve_triangular(self.factors[i], (pts - self.means[i]).T,
                                       lower=True, check_finite=False)
                maha[:, i] = np.einsum("dn,dn->n", sol, sol)
        else:
            # expand (p - mu)^2 / var into three matrix products to avoid
            # materializing an (N, K, d) intermediate
            inv_var = 1.0 / self.factors  # (K, d)
            maha = (pts ** 2) @ inv_var.T
            maha -= 2.0 * pts @ (self.means * inv_var).T
            maha += np.sum(self.means ** 2 * inv_var, axis=1)
        return -0.5 * (maha + self.log_dets + self.dim * _LOG_2PI)

    def log_density(self, points: np.ndarray) -> np.ndarray:
        """Mixture log density under the global weights, shape (N,)."""
        comp = self.component_log_density(points)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return logsumexp(comp + logw, axis=1)


@dataclass
class LocalizedMixtureModel:
    """Global mixture plus a per-position weight field over the feature grid."""

    global_mixture: GlobalMixture
    spatial_weights: np.ndarray  # (K, H_f, W_f)
    stage_id: int
    pca_mean: np.ndarray | None = None
    pca_basis: np.ndarray | None = None  # (d_in, d)
    _log_spatial: np.ndarray = field(init=False, repr=False, default=None)

    def __post_init__(self):
        self.spatial_weights = np.asarray(self.spatial_weights, dtype=np.float64)
        if self.spatial_weights.ndim != 3:
            raise ShapeError("spatial weights must have shape (K, H, W)")
        if self.spatial_weights.shape[0] != self.global_mixture.n_components:
            raise ShapeError("spatial weight count does not match the mixture size")

    @property
    def grid(self) -> tuple[int, int, int]:
        return (*self.spatial_weights.shape[1:], self.global_mixture.dim)

    @property
    def dim(self) -> int:
        return self.global_mixture.dim

    def validate(self) -> "LocalizedMixtureModel":
        self.global_mixture.validate()
        w = self.spatial_weights
        if w.min(initial=0.0) < 0:
            raise NumericError("spatial weights must be nonnegative")
        sums = w.sum(axis=0)
        if np.abs(sums - 1.0).max() > 1e-6:
            raise NumericError("spatial weights must sum to 1 at every position")
        return self

    def log_spatial_weights(self) -> np.ndarray:
        if self._log_spatial is None:
            with np.errstate(divide="ignore"):
                self._log_spatial = np.log(self.spatial_weights)
        return self._log_spatial

    def project(self, points: np.ndarray) -> np.ndarray:
        """Apply the stored feature-space projection, if any."""
        if self.pca_basis is None:
            return np.asarray(points, dtype=np.float64)
        return (np.asarray(points, dtype=np.float64) - self.pca_mean) @ self.pca_basis


def temporal_median_features(seq: FeatureSequence, window: int) -> FeatureSequence:
    """Median filter along time with windows clamped at the sequence ends.

    Even-length clamped windows at the borders take the lower of the two
    middle values, so outputs are always values seen in the input.
    """
    t = seq.frames.shape[0]
    if window % 2 == 0:
        raise ConfigError(f"median window must be odd, got {window}")
    if window > t:
        raise ConfigError(f"median window {window} exceeds sequence length {t}")
    if window == 1:
        return FeatureSequence(seq.stage_id, seq.frames.copy(), list(seq.frame_ids))
    half = window // 2
    out = np.empty_like(seq.frames)
    for i in range(t):
        lo, hi = max(0, i - half), min(t, i + half + 1)
        win = np.sort(seq.frames[lo:hi], axis=0)
        out[i] = win[(hi - lo - 1) // 2]
    return FeatureSequence(seq.stage_id, out, list(seq.frame_ids))


def _kmeanspp_centers(samples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ center selection; degenerate ties fall back to index order."""
    n = samples.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((samples - samples[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            candidates = (i for i in range(n) if i not in set(chosen))
            idx = next(candidates, chosen[-1])
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((samples - samples[idx]) ** 2, axis=1))
    return samples[np.asarray(chosen)]


def _assign_hard(samples: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # argmin picks the lowest index on ties
    d2 = (
        np.sum(samples ** 2, axis=1)[:, None]
        - 2.0 * samples @ centers.T
        + np.sum(centers ** 2, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


def _cholesky_factors(covs: np.ndarray, reg: float) -> np.ndarray:
    """Cholesky of each covariance, retrying with extra jitter if needed."""
    k, d = covs.shape[0], covs.shape[1]
    factors = np.empty_like(covs)
    for i in range(k):
        cov = 0.5 * (covs[i] + covs[i].T)
        jitter = 0.0
        for attempt in range(6):
            try:
                factors[i] = np.linalg.cholesky(cov + jitter * np.eye(d))
                break
            except np.linalg.LinAlgError:
                jitter = max(reg, _VARIANCE_FLOOR) * 10.0 ** attempt
        else:
            raise NumericError(f"covariance of component {i} is not positive definite")
    return factors


def _m_step(samples, nk, sum_x, sum_xx, mode, reg):
    n = samples.shape[0]
    d = samples.shape[1]
    weights = nk / n
    nk_safe = np.maximum(nk, np.finfo(np.float64).tiny)
    means = sum_x / nk_safe[:, None]
    if mode == "diagonal":
        variances = sum_xx / nk_safe[:, None] - means ** 2
        factors = np.maximum(variances, 0.0) + reg
    else:
        covs = sum_xx / nk_safe[:, None, None] - means[:, :, None] * means[:, None, :]
        covs += reg * np.eye(d)
        factors = _cholesky_factors(covs, reg)
    return weights, means, factors


def fit_global_gmm(samples: np.ndarray, cfg: RunConfig, seed: int) -> GlobalMixture:
    """Fit the position-agnostic mixture by EM with k-means++ initialization.

    Every M step adds ``reg_lambda * tr(S)/d`` times the identity to each
    covariance, S being the global sample covariance, so components never
    collapse.  Iteration stops when the mean log-likelihood improves by
    less than ``em_tol`` or after ``em_max_iters`` rounds; the recorded
    trace is available as ``em_log_likelihoods`` on the result.
    """
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ShapeError(f"samples must be (N, d), got rank {samples.ndim}")
    n, d = samples.shape
    k = cfg.k_init
    if n < k:
        raise InsufficientDataError(f"need at least k_init={k} samples, got {n}")
    mode = cfg.resolve_covariance_mode(d)
    mean_var = float(np.mean(np.var(samples, axis=0)))
    reg = cfg.reg_lambda * max(mean_var, _VARIANCE_FLOOR)

    rng = np.random.default_rng(seed)
    centers = _kmeanspp_centers(samples, k, rng)
    assign = _assign_hard(samples, centers)
    nk = np.bincount(assign, minlength=k).astype(np.float64)
    sum_x = np.zeros((k, d))
    np.add.at(sum_x, assign, samples)
    if mode == "diagonal":
        sum_xx = np.zeros((k, d))
        np.add.at(sum_xx, assign, samples ** 2)
    else:
        sum_xx = np.zeros((k, d, d))
        for i in range(k):
            member = samples[assign == i]
            if member.size:
                sum_xx[i] = member.T @ member
    weights, means, factors = _m_step(samples, nk, sum_x, sum_xx, mode, reg)
    empty = nk == 0
    if empty.any():
        means[empty] = centers[empty]

    with np.errstate(divide="ignore"):
        trace: list[float] = []
        previous = (weights, means, factors)
        for iteration in range(cfg.em_max_iters):
            mix = GlobalMixture(weights, means, factors, mode)
            logw = np.log(mix.weights)
            ll_sum = 0.0
            nk = np.zeros(k)
            sum_x = np.zeros((k, d))
            sum_xx = np.zeros((k, d) if mode == "diagonal" else (k, d, d))
            for lo in range(0, n, _EM_CHUNK):
                chunk = samples[lo:lo + _EM_CHUNK]
                joint = mix.component_log_density(chunk) + logw
                lse = logsumexp(joint, axis=1)
                ll_sum += float(lse.sum())
                resp = np.exp(joint - lse[:, None])
                nk += resp.sum(axis=0)
                sum_x += resp.T @ chunk
                if mode == "diagonal":
                    sum_xx += resp.T @ (chunk ** 2)
                else:
                    for i in range(k):
                        sum_xx[i] += (chunk * resp[:, i:i + 1]).T @ chunk
            ll = ll_sum / n
            if not np.isfinite(ll):
                raise NumericError(f"non-finite log-likelihood at EM iteration {iteration}")
            if trace and ll < trace[-1]:
                # the covariance ridge can make a late step non-improving;
                # keep the better parameters and stop
                weights, means, factors = previous
                break
            trace.append(ll)
            if iteration > 0 and ll - trace[-2] < cfg.em_tol:
                break
            previous = (weights, means, factors)
            weights, means, factors = _m_step(samples, nk, sum_x, sum_xx, mode, reg)

    return GlobalMixture(weights, means, factors, mode, em_log_likelihoods=trace).validate()


def prune_components(mix: GlobalMixture, w_min: float) -> GlobalMixture:
    """Drop components with weight below ``w_min`` and renormalize.

    The largest-weight component is exempt, so at least one survives.
    """
    if not 0 <= w_min < 1:
        raise ConfigError(f"w_min must be in [0, 1), got {w_min}")
    keep = mix.weights >= w_min
    keep[np.argmax(mix.weights)] = True
    weights = mix.weights[keep]
    return GlobalMixture(
        weights / weights.sum(),
        mix.means[keep],
        mix.factors[keep],
        mix.covariance_mode,
        em_log_likelihoods=mix.em_log_likelihoods,
    ).validate()


def _box_filter(values: np.ndarray, radius: int) -> np.ndarray:
    """Mean over square windows clamped to the grid, batched on axis 0."""
    if radius == 0:
        return values.copy()

    def axis_sum(a, axis):
        cs = np.cumsum(a, axis=axis)
        n = a.shape[axis]
        zeros = np.zeros_like(np.take(cs, [0], axis=axis))
        cs = np.concatenate([zeros, cs], axis=axis)
        hi = np.minimum(np.arange(n) + radius + 1, n)
        lo = np.maximum(np.arange(n) - radius, 0)
        return np.take(cs, hi, axis=axis) - np.take(cs, lo, axis=axis), hi - lo

    summed, rows = axis_sum(values, 1)
    summed, cols = axis_sum(summed, 2)
    counts = rows[:, None] * cols[None, :]
    return summed / counts


def localize(mix: GlobalMixture, training: FeatureSequence,
             smooth_radius: int) -> LocalizedMixtureModel:
    """Derive position-dependent weights from mean training responsibilities.

    Per position the responsibilities of all components are averaged over
    the training frames, box-smoothed with the given radius (windows
    clamped at the borders) and renormalized.
    """
    t, h, w, d = training.frames.shape
    if d != mix.dim:
        raise ShapeError(f"training dimension {d} does not match mixture dimension {mix.dim}")
    k = mix.n_components
    with np.errstate(divide="ignore"):
        logw = np.log(mix.weights)
    resp_sum = np.zeros((h * w, k))
    for frame in training.frames:
        pts = frame.reshape(h * w, d).astype(np.float64)
        joint = mix.component_log_density(pts) + logw
        joint -= logsumexp(joint, axis=1)[:, None]
        resp_sum += np.exp(joint)
    field_kxy = (resp_sum / t).T.reshape(k, h, w)
    field_kxy = _box_filter(field_kxy, smooth_radius)
    field_kxy /= field_kxy.sum(axis=0)
    return LocalizedMixtureModel(
        global_mixture=mix, spatial_weights=field_kxy,
        stage_id=training.stage_id,
    ).validate()


def local_log_density(model: LocalizedMixtureModel, p: np.ndarray, x: int, y: int) -> float:
    """Log mixture density at grid position (x, y); x is the column index."""
    h, w, _ = model.grid
    if not (0 <= x < w and 0 <= y < h):
        raise ShapeError(f"position ({x}, {y}) outside the {w}x{h} feature grid")
    comp = model.global_mixture.component_log_density(np.asarray(p, dtype=np.float64))
    logw = model.log_spatial_weights()[:, y, x]
    return float(logsumexp(comp[0] + logw))


def fit_pca(samples: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Principal directions of the samples: returns (mean, basis of shape (d_in, dim))."""
    samples = np.asarray(samples, dtype=np.float64)
    d_in = samples.shape[1]
    if not 1 <= dim <= d_in:
        raise ConfigError(f"pca_dim must be in [1, {d_in}], got {dim}")
    mean = samples.mean(axis=0)
    centered = samples - mean
    cov = centered.T @ centered / samples.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    basis = eigvecs[:, ::-1][:, :dim]
    # fix signs so serialized models do not depend on LAPACK conventions
    flip = basis[np.argmax(np.abs(basis), axis=0), np.arange(dim)] < 0
    basis[:, flip] *= -1.0
    return mean, np.ascontiguousarray(basis)
