"""Asymptotic baselines: AIPW, its overlap-trimmed variant, and threshold
selection.

The trimmed variant targets the unnormalized overlap estimand tau_plus
(the per-overlap-unit average scaled by the overlap fraction), so that
tau = tau_plus + tau_minus composes with the minimax non-overlap interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_data import Dataset, ValidationError, partition
from .lipschitz import KNNRegressor, RegressorLike
from .minimax_ci import cv_quantile


@dataclass(frozen=True)
class AsymptoticCI:
    estimate: float
    se: float
    lower: float
    upper: float
    alpha: float
    epsilon_used: float | None
    n_used: int

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def half_length(self) -> float:
        return 0.5 * self.length

    def to_dict(self) -> dict:
        return dict(estimate=self.estimate, se=self.se, lower=self.lower,
                    upper=self.upper, alpha=self.alpha,
                    epsilon_used=self.epsilon_used, n_used=self.n_used)


def _fitted_on(regressor: RegressorLike | None, data: Dataset):
    reg = KNNRegressor() if regressor is None else regressor
    if hasattr(reg, "clone"):
        reg = reg.clone()
    if hasattr(reg, "fit"):
        reg = reg.fit(data.x, data.y, data.z) or reg
    return reg


def aipw(dataset: Dataset, regressor, alpha: float) -> AsymptoticCI:
    """Augmented inverse propensity weighting with a normal interval.

    ``regressor`` must already be fitted.  The standard error is the sample
    standard deviation of the influence values over sqrt(n).
    """
    pi = dataset.pi
    extreme = (pi <= 0.0) | (pi >= 1.0)
    if extreme.any():
        i = int(np.flatnonzero(extreme)[0])
        raise ValidationError(
            f"unit {i} has propensity {pi[i]!r}; trim before calling aipw")
    mu1 = np.asarray(regressor.predict(dataset.x, 1), dtype=float)
    mu0 = np.asarray(regressor.predict(dataset.x, 0), dtype=float)
    z = dataset.z
    y = dataset.y
    psi = (mu1 - mu0
           + z * (y - mu1) / pi
           - (1 - z) * (y - mu0) / (1.0 - pi))
    n = dataset.n
    estimate = float(psi.mean())
    se = float(psi.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    zq = cv_quantile(0.0, alpha)
    return AsymptoticCI(estimate=estimate, se=se,
                        lower=estimate - zq * se, upper=estimate + zq * se,
                        alpha=alpha, epsilon_used=None, n_used=n)


def aipw_partial(dataset: Dataset, epsilon: float, regressor=None,
                 alpha: float = 0.05) -> AsymptoticCI:
    """AIPW restricted to the overlap region, targeting tau_plus.

    The regressor (a prototype with fit/clone, or an already fitted object)
    is fitted on the overlap units; estimate and standard error are scaled by
    the overlap fraction so the target is the unnormalized tau_plus.
    """
    part = partition(dataset, epsilon)
    if part.n_overlap == 0:
        raise ValidationError(f"no overlap units at epsilon = {epsilon}")
    sub = dataset.subset(part.s)
    fitted = _fitted_on(regressor, sub)
    inner = aipw(sub, fitted, alpha)
    scale = part.n_overlap / dataset.n
    estimate = inner.estimate * scale
    se = inner.se * scale
    zq = cv_quantile(0.0, alpha)
    return AsymptoticCI(estimate=estimate, se=se,
                        lower=estimate - zq * se, upper=estimate + zq * se,
                        alpha=alpha, epsilon_used=float(epsilon),
                        n_used=part.n_overlap)


def select_epsilon(dataset: Dataset, candidates, regressor=None,
                   alpha: float = 0.05) -> float:
    """Threshold from the candidate set minimizing the trimmed CI length.

    Ties break toward the smaller epsilon.  Candidates whose overlap region
    is empty are skipped; if all are, a ValidationError is raised.
    """
    candidates = sorted(float(e) for e in candidates)
    if not candidates:
        raise ValidationError("candidate set is empty")
    best = None
    best_len = np.inf
    for eps in candidates:
        try:
            ci = aipw_partial(dataset, eps, regressor, alpha)
        except ValidationError:
            continue
        if ci.length < best_len:
            best, best_len = eps, ci.length
    if best is None:
        raise ValidationError("every candidate epsilon leaves an empty "
                              "overlap region")
    return best
