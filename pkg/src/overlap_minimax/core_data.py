"""Datasets, overlap partitioning, estimand decomposition, noise estimation.

A dataset is a fixed finite population of units: covariates, realized
outcome, binary treatment, known propensity, and per-unit Gaussian noise
standard deviation.  Overlap is measured through q(x) = min(pi, 1 - pi);
units below a threshold epsilon form the non-overlap region, which carries
the weights used by the minimax machinery.
"""

from __future__ import annotations

import csv
import re
from dataclasses import dataclass, field

import numpy as np


class ValidationError(ValueError):
    """Raised when inputs violate a documented precondition or schema."""


def _as_float_vector(v, n: int | None, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim == 0:
        if n is None:
            raise ValidationError(f"{name}: scalar given but length unknown")
        arr = np.full(n, float(arr))
    if arr.ndim != 1:
        raise ValidationError(f"{name}: expected a vector, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValidationError(f"{name}: length {arr.shape[0]} != n = {n}")
    return arr


@dataclass(eq=False)
class Dataset:
    """Fixed population of n units.

    Fields
    ------
    x : (n, d) float array of covariates.
    y : (n,) outcomes.
    z : (n,) treatments in {0, 1}.
    pi : (n,) known propensity scores in [0, 1].
    sigma : (n,) positive noise standard deviations; a scalar broadcasts.
    """

    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    pi: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim == 1:
            self.x = self.x[:, None]
        if self.x.ndim != 2 or self.x.shape[0] < 1 or self.x.shape[1] < 1:
            raise ValidationError(f"x: expected (n, d) with n,d >= 1, got {self.x.shape}")
        n = self.x.shape[0]
        self.y = _as_float_vector(self.y, n, "y")
        z = np.asarray(self.z)
        if not np.isin(z, (0, 1)).all():
            raise ValidationError("z: entries must be 0 or 1")
        self.z = z.astype(np.int64)
        if self.z.shape != (n,):
            raise ValidationError(f"z: length {self.z.shape} != n = {n}")
        self.pi = _as_float_vector(self.pi, n, "pi")
        if np.any(self.pi < 0) or np.any(self.pi > 1):
            raise ValidationError("pi: entries must lie in [0, 1]")
        self.sigma = _as_float_vector(self.sigma, n, "sigma")
        if np.any(self.sigma <= 0) or not np.all(np.isfinite(self.sigma)):
            raise ValidationError("sigma: entries must be positive and finite")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.y))
                and np.all(np.isfinite(self.pi))):
            raise ValidationError("x, y, pi must be finite")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, mask: np.ndarray) -> "Dataset":
        """Dataset restricted to the units selected by ``mask``."""
        mask = np.asarray(mask)
        return Dataset(self.x[mask], self.y[mask], self.z[mask],
                       self.pi[mask], self.sigma[mask])

    def replace(self, **kw) -> "Dataset":
        """Copy with some fields replaced."""
        data = dict(x=self.x, y=self.y, z=self.z, pi=self.pi, sigma=self.sigma)
        data.update(kw)
        return Dataset(**data)


@dataclass(eq=False)
class OverlapPartition:
    """Overlap split at threshold epsilon.

    s[i] is True iff unit i has q(x_i) >= epsilon (overlap); w[i] = 1/n on
    non-overlap units and 0 elsewhere, the weighting of the non-overlap
    estimand.
    """

    epsilon: float
    s: np.ndarray
    w: np.ndarray

    @property
    def n_overlap(self) -> int:
        return int(self.s.sum())

    @property
    def n_non_overlap(self) -> int:
        return int((~self.s).sum())


@dataclass(frozen=True)
class EstimandDecomposition:
    tau: float
    tau_plus: float
    tau_minus: float


def overlap_measure(pi):
    """q(pi) = min(pi, 1 - pi)."""
    pi = np.asarray(pi, dtype=float)
    if np.any(pi < 0) or np.any(pi > 1):
        raise ValidationError("pi must lie in [0, 1]")
    q = np.minimum(pi, 1.0 - pi)
    return float(q) if q.ndim == 0 else q


def partition(dataset: Dataset, epsilon: float) -> OverlapPartition:
    """Split units at q(x_i) >= epsilon and attach non-overlap weights.

    If every unit is in the overlap region the partition is still returned
    with an all-zero weight vector; callers decide how to treat that
    degenerate case.
    """
    if not 0.0 < epsilon < 0.5:
        raise ValidationError(f"epsilon must lie in (0, 1/2), got {epsilon}")
    q = overlap_measure(dataset.pi)
    s = q >= epsilon
    w = np.where(s, 0.0, 1.0 / dataset.n)
    return OverlapPartition(epsilon=float(epsilon), s=s, w=w)


def decompose_estimand(true_tau_per_unit, part: OverlapPartition) -> EstimandDecomposition:
    """Split the sample ATE into overlap and non-overlap components.

    Uses unnormalized 1/n weights on both sides, so tau_plus + tau_minus
    recovers the full sample ATE exactly.
    """
    tau_i = np.asarray(true_tau_per_unit, dtype=float)
    if tau_i.shape != part.s.shape:
        raise ValidationError("true_tau_per_unit length does not match partition")
    n = tau_i.shape[0]
    tau_plus = float(np.sum(tau_i[part.s]) / n)
    tau_minus = float(np.sum(tau_i[~part.s]) / n)
    return EstimandDecomposition(tau=tau_plus + tau_minus,
                                 tau_plus=tau_plus, tau_minus=tau_minus)


def estimate_noise_sd(dataset: Dataset, J: int = 2) -> float:
    """Nearest-neighbor estimate of a homoscedastic noise sd.

    For each unit, the J nearest units within the same treatment arm
    (ell-2 distance on covariates, ties broken by lowest index) provide a
    local mean; the J/(J+1)-scaled squared residuals average into the
    variance estimate.
    """
    if J < 1:
        raise ValidationError("J must be a positive integer")
    total = 0.0
    for arm in (0, 1):
        idx = np.flatnonzero(dataset.z == arm)
        if idx.size <= J:
            raise ValidationError(
                f"treatment arm {arm} has {idx.size} units; need more than J = {J}"
            )
        xa = dataset.x[idx]
        ya = dataset.y[idx]
        diff = xa[:, None, :] - xa[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        np.fill_diagonal(dist, np.inf)
        order = np.argsort(dist, axis=1, kind="stable")[:, :J]
        local_mean = ya[order].mean(axis=1)
        total += float(np.sum((J / (J + 1)) * (ya - local_mean) ** 2))
    return float(np.sqrt(total / dataset.n))


# ---------------------------------------------------------------------------
# CSV ingestion: header columns x1..xd, y, z, pi, and optional sigma.

def load_dataset_csv(path, J: int = 2) -> Dataset:
    """Read a dataset from CSV.

    Expected header: x1..xd, y, z, pi, optionally sigma.  A missing sigma
    column triggers the nearest-neighbor noise estimate with the given J,
    broadcast to every unit.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError("schema: empty CSV file") from None
        rows = [row for row in reader if row]

    header = [h.strip() for h in header]
    xcols = [h for h in header if re.fullmatch(r"x\d+", h)]
    expected_x = [f"x{i + 1}" for i in range(len(xcols))]
    if not xcols or sorted(xcols, key=lambda s: int(s[1:])) != expected_x:
        raise ValidationError(f"schema: covariate columns must be x1..xd, got {xcols}")
    for required in ("y", "z", "pi"):
        if required not in header:
            raise ValidationError(f"schema: missing required column '{required}'")
    has_sigma = "sigma" in header
    col = {name: header.index(name) for name in header}

    def parse(row, name, kind=float):
        try:
            return kind(row[col[name]])
        except (ValueError, IndexError) as exc:
            raise ValidationError(f"schema: bad value for '{name}': {exc}") from None

    n = len(rows)
    if n == 0:
        raise ValidationError("schema: no data rows")
    d = len(xcols)
    x = np.empty((n, d))
    y = np.empty(n)
    z = np.empty(n, dtype=np.int64)
    pi = np.empty(n)
    sigma = np.empty(n) if has_sigma else None
    for i, row in enumerate(rows):
        for j in range(d):
            x[i, j] = parse(row, f"x{j + 1}")
        y[i] = parse(row, "y")
        zval = parse(row, "z", float)
        if zval not in (0.0, 1.0):
            raise ValidationError(f"schema: z must be 0 or 1, got {zval!r} in row {i + 1}")
        z[i] = int(zval)
        pi[i] = parse(row, "pi")
        if has_sigma:
            sigma[i] = parse(row, "sigma")

    if sigma is None:
        ds = Dataset(x, y, z, pi, np.ones(n))
        sigma_hat = estimate_noise_sd(ds, J=J)
        if sigma_hat <= 0:
            raise ValidationError("estimated noise sd is zero; supply a sigma column")
        sigma = np.full(n, sigma_hat)
    return Dataset(x, y, z, pi, sigma)


def save_dataset_csv(dataset: Dataset, path) -> None:
    """Write a dataset in the schema understood by :func:`load_dataset_csv`."""
    header = [f"x{j + 1}" for j in range(dataset.d)] + ["y", "z", "pi", "sigma"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(v)) for v in dataset.x[i]]
                + [repr(float(dataset.y[i])), str(int(dataset.z[i])),
                   repr(float(dataset.pi[i])), repr(float(dataset.sigma[i]))]
            )
