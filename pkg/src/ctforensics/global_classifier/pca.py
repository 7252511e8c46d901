from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateDataError, InsufficientDataError, ShapeError


class ReducedRankWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray  # (d,)
    components: np.ndarray  # (k, d), orthonormal rows
    explained_variance: np.ndarray  # (k,), nonincreasing

    @property
    def dims(self) -> int:
        return self.components.shape[0]

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]


def fit_pca(features, dims: int = 256, rel_tol: float = 1e-10) -> PcaModel:
    """Top principal axes of the centred data.

    The eigenproblem is solved on whichever of the covariance (d x d) or the Gram
    matrix (n x n) is smaller; both give the same axes. Requests beyond the rank
    of the centred data warn and return only the available axes.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected an (n, d) feature matrix, got shape {x.shape}")
    n, d = x.shape
    if n < 2:
        raise InsufficientDataError("PCA needs at least two samples")
    if dims < 1 or dims > d:
        raise ShapeError(f"dims must lie in [1, {d}], got {dims}")
    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(xc):
        raise DegenerateDataError("all feature rows are identical")

    if n < d:
        gram = xc @ xc.T
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        keep = evals > rel_tol * evals[0]
        evals, evecs = evals[keep], evecs[:, keep]
        comps = (xc.T @ evecs / np.sqrt(evals)).T
    else:
        cov = xc.T @ xc
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals, evecs = evals[order], evecs[:, order]
        keep = evals > rel_tol * evals[0]
        evals, comps = evals[keep], evecs[:, keep].T

    rank = len(evals)
    if dims > rank:
        warnings.warn(f"requested {dims} PCA dims but the centred data has rank {rank}; using {rank}",
                      ReducedRankWarning, stacklevel=2)
        dims = rank
    comps = comps[:dims]
    # one re-orthonormalisation pass removes the round-off of the Gram route
    q, r = np.linalg.qr(comps.T)
    comps = (q * np.sign(np.diag(r))).T
    # deterministic signs: largest-magnitude loading positive
    pivots = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(dims), pivots])
    comps = comps * signs[:, None]
    return PcaModel(mean, comps, evals[:dims] / (n - 1))


def transform_pca(model: PcaModel, features) -> np.ndarray:
    """components . (x - mean); accepts one vector or a row stack."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != model.n_features:
        raise ShapeError(f"feature length {x.shape[-1]} does not match the PCA model ({model.n_features})")
    return (x - model.mean) @ model.components.T


def inverse_pca(model: PcaModel, projected) -> np.ndarray:
    return np.asarray(projected) @ model.components + model.mean
