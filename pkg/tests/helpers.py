"""Shared construction helpers for the tests."""

from __future__ import annotations

import numpy as np

from accd.background import GlobalMixture, LocalizedMixtureModel


def make_mixture(weights, means, covs=None, variances=None) -> GlobalMixture:
    """Build a mixture from covariance matrices or variance vectors."""
    weights = np.asarray(weights, dtype=np.float64)
    means = np.atleast_2d(np.asarray(means, dtype=np.float64))
    if variances is not None:
        return GlobalMixture(weights, means, np.atleast_2d(variances), "diagonal")
    covs = np.asarray(covs, dtype=np.float64)
    if covs.ndim == 2:
        covs = np.repeat(covs[None], means.shape[0], axis=0)
    factors = np.linalg.cholesky(covs)
    return GlobalMixture(weights, means, factors, "full")


def make_model(weights, means, covs=None, variances=None, spatial=None,
               grid=(1, 1), stage=1) -> LocalizedMixtureModel:
    """Localized model; spatial weights default to the global ones everywhere."""
    mix = make_mixture(weights, means, covs=covs, variances=variances)
    h, w = grid
    if spatial is None:
        spatial = np.broadcast_to(
            mix.weights[:, None, None], (mix.n_components, h, w)
        ).copy()
    return LocalizedMixtureModel(global_mixture=mix, spatial_weights=np.asarray(spatial, dtype=np.float64),
                                 stage_id=stage)


def random_spd(rng, d: int) -> np.ndarray:
    a = rng.standard_normal((d, d))
    return a @ a.T + (0.3 + rng.random()) * np.eye(d)


def tree_bytes(root) -> dict[str, bytes]:
    """Relative path -> file bytes for a whole directory tree."""
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = path.read_bytes()
    return out
