"""Bias-corrected minimax confidence intervals.

Given the modulus curve of a weighted estimand, each delta yields an
outcome-linear estimator with worst-case bias (omega - delta omega') / 2 and
standard deviation omega'.  The interval half-length cv(maxbias/sd) * sd is
minimized over delta; the critical value cv_alpha(b) is the 1 - alpha
quantile of |N(b, 1)| and absorbs the standardized worst-case bias.  The
interval length never depends on the observed outcomes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .ball_program import SolverConvergenceError
from .core_data import Dataset, ValidationError, partition
from .lipschitz import LipschitzClass
from .modulus import (DegenerateProblemError, ModulusProblem, ModulusSolution,
                      solve_modulus)


class InternalConsistencyError(RuntimeError):
    """Two algebraically equivalent evaluations disagreed beyond tolerance."""


_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _norm_cdf(t: float) -> float:
    return 0.5 * (1.0 + math.erf(t / math.sqrt(2.0)))


def _norm_pdf(t: float) -> float:
    return math.exp(-0.5 * t * t) * _INV_SQRT_2PI


def cv_quantile(b: float, alpha: float) -> float:
    """1 - alpha quantile of |N(b, 1)| for b >= 0.

    Solves Phi(c - b) - Phi(-c - b) = 1 - alpha by safeguarded Newton
    iteration on the analytic normal CDF; accurate to ~1e-12 in c.
    """
    b = float(b)
    if not (b >= 0.0 and math.isfinite(b)):
        raise ValidationError(f"b must be nonnegative and finite, got {b}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")

    def g(c):
        return _norm_cdf(c - b) - _norm_cdf(-c - b) - (1.0 - alpha)

    def gp(c):
        return _norm_pdf(c - b) + _norm_pdf(c + b)

    lo, hi = 0.0, b + 12.0
    while g(hi) < 0.0:  # only for extreme alpha
        hi += 12.0
    c = min(hi, b + 2.0)
    for _ in range(200):
        val = g(c)
        if val > 0.0:
            hi = c
        else:
            lo = c
        deriv = gp(c)
        step_ok = deriv > 0.0 and math.isfinite(deriv)
        c_new = c - val / deriv if step_ok else 0.5 * (lo + hi)
        if not (lo <= c_new <= hi):
            c_new = 0.5 * (lo + hi)
        if abs(c_new - c) <= 1e-13 * (1.0 + abs(c_new)):
            return c_new
        c = c_new
    return c


@dataclass
class IntervalReport:
    """A bias-corrected interval: estimate +/- cv * sd.

    ``degenerate`` marks the exact point interval {0} returned when the
    weighted estimand is an empty sum; ``delta_search_warning`` marks a
    delta search that never bracketed an interior minimum and fell back to
    the best grid point.
    """

    estimate: float
    maxbias: float
    sd: float
    cv: float
    lower: float
    upper: float
    delta_star: float
    alpha: float
    degenerate: bool = False
    delta_search_warning: bool = False

    @property
    def half_length(self) -> float:
        return 0.5 * (self.upper - self.lower)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return dict(estimate=self.estimate, maxbias=self.maxbias, sd=self.sd,
                    cv=self.cv, lower=self.lower, upper=self.upper,
                    delta_star=self.delta_star, alpha=self.alpha,
                    degenerate=self.degenerate,
                    delta_search_warning=self.delta_search_warning)


@dataclass(frozen=True)
class CombinedInterval:
    """Union-bound sum of two intervals; alpha adds across the parts."""

    lower: float
    upper: float
    alpha: float

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @property
    def half_length(self) -> float:
        return 0.5 * self.length

    def to_dict(self) -> dict:
        return dict(lower=self.lower, upper=self.upper, alpha=self.alpha)


def maxbias(solution: ModulusSolution) -> float:
    """Worst-case bias (omega - delta * omega') / 2 of the delta-estimator."""
    value = 0.5 * (solution.omega - solution.delta * solution.omega_prime)
    floor = 1e-9 * max(1.0, abs(solution.omega))
    if value < -floor:
        raise InternalConsistencyError(
            f"negative worst-case bias {value!r}: omega is not concave "
            "through the origin, the solve is inconsistent")
    return max(value, 0.0)


def estimator_value(solution: ModulusSolution, problem: ModulusProblem,
                    y) -> float:
    """Outcome-linear minimax estimate at the solution's delta.

    Evaluates both coefficient forms (the omega'-scaled form and the
    weight-normalized form) and insists they agree to 1e-8.
    """
    y = np.asarray(y, dtype=float)
    ds = problem.dataset
    if y.shape != (ds.n,):
        raise ValidationError("y has the wrong length")
    fobs = solution.f_observed(ds.z)
    base = fobs / ds.sigma ** 2
    coef1 = (2.0 * solution.omega_prime / solution.delta) * base
    treated_sum = float(np.sum(solution.f1[ds.z == 1] / ds.sigma[ds.z == 1] ** 2))
    coef2 = problem.sum_w * base / treated_sum
    t1 = float(coef1 @ y)
    t2 = float(coef2 @ y)
    if abs(t1 - t2) > 1e-8 * (1.0 + max(abs(t1), abs(t2))):
        raise InternalConsistencyError(
            f"estimator forms disagree: {t1!r} vs {t2!r}")
    return t1


@dataclass
class DeltaOptimum:
    delta_star: float
    half_length: float
    cv: float
    maxbias: float
    sd: float
    solution: ModulusSolution
    warning: bool = False


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def optimize_delta(problem: ModulusProblem, alpha: float, *,
                   rtol: float = 1e-4, max_doublings: int = 60) -> DeltaOptimum:
    """Minimize the interval half-length cv(maxbias/sd) * sd over delta.

    A doubling grid from delta_lo = 1e-3 sqrt(n) min(sigma) brackets the
    minimum (stopping after three consecutive increases), then golden
    section refines in log-delta.  If no bracket emerges within the doubling
    budget, the best grid point is returned with ``warning`` set.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    ds = problem.dataset
    delta_lo = 1e-3 * math.sqrt(ds.n) * float(ds.sigma.min())

    evals: dict[float, tuple] = {}

    def G(delta: float) -> float:
        if delta in evals:
            return evals[delta][0]
        sol = solve_modulus(problem, delta)
        bias = maxbias(sol)
        sd = sol.omega_prime
        cv = cv_quantile(bias / sd, alpha)
        evals[delta] = (cv * sd, cv, bias, sd, sol)
        return cv * sd

    # Doubling scan.  The modulus is exactly affine in delta below the first
    # constraint kink, so G starts exactly flat: that region must be crossed,
    # not mistaken for the large-delta asymptote, which G approaches with
    # small but nonzero steps.
    grid = [delta_lo]
    values = [G(delta_lo)]
    rises = 0
    strikes = 0
    warning = False
    for k in range(1, max_doublings + 1):
        delta = delta_lo * (2.0 ** k)
        try:
            val = G(delta)
        except SolverConvergenceError:
            warning = True  # past the numerically explorable range
            break
        grid.append(delta)
        values.append(val)
        change = val - values[-2]
        rel = abs(change) / (1.0 + abs(val))
        rises = rises + 1 if change > 1e-11 * (1.0 + abs(val)) else 0
        if rises >= 3:
            break
        if 1e-11 < rel <= 3e-4:
            strikes += 1
            if strikes >= 3:  # asymptote: no interior bracket to refine
                warning = True
                break
        elif rel > 3e-4:
            strikes = 0
    else:
        warning = True

    i_best = int(np.argmin(values))
    lo = grid[max(i_best - 1, 0)]
    hi = grid[min(i_best + 1, len(grid) - 1)]

    if not warning and hi > lo:
        a, b = math.log(lo), math.log(hi)
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        yc, yd = G(math.exp(c)), G(math.exp(d))
        while b - a > rtol:
            if yc < yd:
                b, d, yd = d, c, yc
                c = b - _GOLDEN * (b - a)
                yc = G(math.exp(c))
            else:
                a, c, yc = c, d, yd
                d = a + _GOLDEN * (b - a)
                yd = G(math.exp(d))

    delta_star = min(evals, key=lambda t: (evals[t][0], t))
    half, cv, bias, sd, sol = evals[delta_star]
    return DeltaOptimum(delta_star=delta_star, half_length=half, cv=cv,
                        maxbias=bias, sd=sd, solution=sol, warning=warning)


def _degenerate_report(alpha: float) -> IntervalReport:
    return IntervalReport(estimate=0.0, maxbias=0.0, sd=0.0, cv=0.0,
                          lower=0.0, upper=0.0, delta_star=0.0, alpha=alpha,
                          degenerate=True)


def minimax_interval(dataset: Dataset, w, L: float, alpha: float, y=None, *,
                     lip: LipschitzClass | None = None,
                     problem: ModulusProblem | None = None) -> IntervalReport:
    """Minimax interval for the w-weighted treatment effect.

    The full-sample interval is this with w = 1/n everywhere; the
    non-overlap interval passes the partition weights.  ``y`` defaults to
    the dataset outcomes; the interval limits around the estimate do not
    depend on it.
    """
    if problem is None:
        problem = ModulusProblem.build(dataset, w, L, lip)
    opt = optimize_delta(problem, alpha)
    y = dataset.y if y is None else y
    estimate = estimator_value(opt.solution, problem, y)
    return IntervalReport(
        estimate=estimate, maxbias=opt.maxbias, sd=opt.sd, cv=opt.cv,
        lower=estimate - opt.cv * opt.sd, upper=estimate + opt.cv * opt.sd,
        delta_star=opt.delta_star, alpha=alpha,
        delta_search_warning=opt.warning)


def mp_interval(dataset: Dataset, epsilon: float, L: float, alpha: float,
                y=None, *, lip: LipschitzClass | None = None,
                problem: ModulusProblem | None = None) -> IntervalReport:
    """Minimax interval for the non-overlap estimand at threshold epsilon.

    With no non-overlap units the estimand is an empty sum and the exact
    point interval {0} is returned, flagged degenerate.
    """
    if problem is not None:
        return minimax_interval(dataset, problem.w, L, alpha, y, problem=problem)
    part = partition(dataset, epsilon)
    if part.n_non_overlap == 0:
        return _degenerate_report(alpha)
    return minimax_interval(dataset, part.w, L, alpha, y, lip=lip)


def m_interval(dataset: Dataset, L: float, alpha: float, y=None, *,
               lip: LipschitzClass | None = None) -> IntervalReport:
    """Minimax interval for the full sample ATE (weights 1/n everywhere)."""
    w = np.full(dataset.n, 1.0 / dataset.n)
    return minimax_interval(dataset, w, L, alpha, y, lip=lip)


def metric_T(report, mode: str = "endpoint_max") -> float:
    """Uncertainty metric of an interval: largest |endpoint| or its length."""
    if mode == "endpoint_max":
        return max(abs(report.lower), abs(report.upper))
    if mode == "length":
        return report.upper - report.lower
    raise ValidationError(f"unknown metric mode {mode!r}")


def combine_intervals(a, b) -> CombinedInterval:
    """Union-bound sum: endpoints add, miscoverage levels add."""
    if not math.isclose(a.alpha, b.alpha, rel_tol=1e-12, abs_tol=0.0):
        raise ValidationError(
            f"combined intervals must share a level: {a.alpha} != {b.alpha}")
    return CombinedInterval(lower=a.lower + b.lower, upper=a.upper + b.upper,
                            alpha=a.alpha + b.alpha)


@dataclass(frozen=True)
class ConfidenceSequenceEntry:
    t: int
    estimate: float
    maxbias: float
    sd: float
    alpha: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return dict(t=self.t, estimate=self.estimate, maxbias=self.maxbias,
                    sd=self.sd, alpha=self.alpha, lower=self.lower,
                    upper=self.upper)


@dataclass
class ConfidenceSequence:
    entries: list[ConfidenceSequenceEntry] = field(default_factory=list)

    def to_records(self) -> list[dict]:
        return [e.to_dict() for e in self.entries]


def alpha_schedule(alpha: float, t: int) -> float:
    """alpha_t = 6 alpha / (pi^2 t^2); sums to alpha over all t >= 1."""
    return 6.0 * alpha / (math.pi ** 2 * t ** 2)


def confidence_sequence(step_problems, alpha: float) -> ConfidenceSequence:
    """Anytime-valid intervals across a sequence of weighted problems.

    ``step_problems`` is an ordered iterable of (ModulusProblem, y) pairs.
    Step t runs the delta optimization at level alpha_t = 6 alpha /
    (pi^2 t^2); the union bound then gives uniform 1 - alpha coverage of
    every tau_{w_t} simultaneously.  Steps whose weights are an empty sum
    contribute the exact degenerate interval {0}.
    """
    seq = ConfidenceSequence()
    for t, (problem, y) in enumerate(step_problems, start=1):
        a_t = alpha_schedule(alpha, t)
        if problem.sum_w <= 0.0:
            seq.entries.append(ConfidenceSequenceEntry(
                t=t, estimate=0.0, maxbias=0.0, sd=0.0, alpha=a_t,
                lower=0.0, upper=0.0))
            continue
        try:
            opt = optimize_delta(problem, a_t)
            estimate = estimator_value(opt.solution, problem, y)
        except (DegenerateProblemError, InternalConsistencyError,
                RuntimeError) as exc:
            raise type(exc)(f"confidence sequence step {t}: {exc}") from exc
        seq.entries.append(ConfidenceSequenceEntry(
            t=t, estimate=estimate, maxbias=opt.maxbias, sd=opt.sd,
            alpha=a_t, lower=estimate - opt.cv * opt.sd,
            upper=estimate + opt.cv * opt.sd))
    return seq
