"""Finite-sample Lipschitz class, distances, and data-driven smoothness.

The function class constrains outcome values only at the observed points:
|f(x_i, d) - f(x_j, d)| <= L * ||x_i - x_j||_2 for every pair and each arm.
The Lipschitz level L is either supplied directly or contextualized from a
regressor fitted on the overlap region via quantiles of pairwise slopes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .core_data import Dataset, ValidationError


def pairwise_distances(x) -> np.ndarray:
    """Symmetric matrix of ell-2 distances with an exactly zero diagonal."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    np.fill_diagonal(dist, 0.0)
    return dist


@dataclass(eq=False)
class LipschitzClass:
    """Lipschitz constant together with the sample distance matrix."""

    L: float
    dist: np.ndarray

    def __post_init__(self):
        self.dist = np.asarray(self.dist, dtype=float)
        if self.L < 0:
            raise ValidationError("L must be nonnegative")
        n = self.dist.shape[0]
        if self.dist.shape != (n, n):
            raise ValidationError("dist must be a square matrix")

    @classmethod
    def from_points(cls, x, L: float) -> "LipschitzClass":
        return cls(L=float(L), dist=pairwise_distances(x))


class RegressorLike(Protocol):
    """Per-arm outcome regressor interface.

    Implementations must be deterministic given their training data and
    configuration.
    """

    def fit(self, x: np.ndarray, y: np.ndarray, z: np.ndarray) -> "RegressorLike": ...

    def predict(self, x: np.ndarray, arm: int) -> np.ndarray: ...


class KNNRegressor:
    """Per-arm k-nearest-neighbor mean predictor.

    The default outcome learner: dependency-free and deterministic.  Ties in
    neighbor distance break toward the lowest training index.  If an arm has
    fewer than k training units, all of them are used.
    """

    def __init__(self, k: int = 5):
        if k < 1:
            raise ValidationError("k must be a positive integer")
        self.k = int(k)
        self._train: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def clone(self) -> "KNNRegressor":
        return KNNRegressor(k=self.k)

    def fit(self, x, y, z):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(y, dtype=float)
        z = np.asarray(z)
        self._train = {}
        for arm in (0, 1):
            mask = z == arm
            if not mask.any():
                raise ValidationError(f"arm {arm} has no training units")
            self._train[arm] = (x[mask], y[mask])
        return self

    def predict(self, x, arm: int) -> np.ndarray:
        if arm not in self._train:
            raise ValidationError("regressor is not fitted")
        xt, yt = self._train[arm]
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        k = min(self.k, xt.shape[0])
        diff = x[:, None, :] - xt[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        order = np.argsort(dist, axis=1, kind="stable")[:, :k]
        return yt[order].mean(axis=1)


def fit_default_regressor(overlap_data: Dataset, k: int = 5) -> KNNRegressor:
    """Fit the default k-NN regressor on overlap-region data."""
    return KNNRegressor(k=k).fit(overlap_data.x, overlap_data.y, overlap_data.z)


def contextualize_L(overlap_data: Dataset, regressor: RegressorLike, p: float):
    """Quantile-based Lipschitz estimates from a fitted overlap regressor.

    For each arm and each overlap unit i, take the p-th quantile over j != i
    of |mu_hat(x_i) - mu_hat(x_j)| / ||x_i - x_j||; the arm constant is the
    max over i, and the uniform constant the max over arms.  The quantile is
    the lower empirical quantile: order statistic ceil(p * m) of the m
    slopes.  Duplicate covariate rows contribute slope 0 when the predictions
    agree and are an error otherwise.

    Returns (L0, L1, L), the two per-arm constants and their max.
    """
    if not 0.0 < p < 1.0:
        raise ValidationError(f"p must lie in (0, 1), got {p}")
    n = overlap_data.n
    if n < 2:
        raise ValidationError("need at least 2 overlap units")
    dist = pairwise_distances(overlap_data.x)
    per_arm = []
    for arm in (0, 1):
        mu = np.asarray(regressor.predict(overlap_data.x, arm), dtype=float)
        num = np.abs(mu[:, None] - mu[None, :])
        zero = dist <= 0.0
        np.fill_diagonal(zero, False)
        bad = zero & (num > 1e-12 * (1.0 + np.abs(mu[:, None]) + np.abs(mu[None, :])))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise ValidationError(
                f"units {i} and {j} share covariates but predictions differ "
                f"in arm {arm}: slope is infinite"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            slope = np.where(zero, 0.0, num / np.where(dist == 0.0, np.inf, dist))
        np.fill_diagonal(slope, np.nan)
        m = n - 1
        order = int(np.ceil(p * m)) - 1
        rows = np.sort(slope, axis=1)[:, :m]  # NaN diagonal sorts last
        per_arm.append(float(np.max(rows[:, order])))
    L0, L1 = per_arm
    return L0, L1, max(L0, L1)
