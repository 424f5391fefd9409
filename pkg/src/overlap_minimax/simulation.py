"""Data-generating processes and experiment harnesses.

Everything here is seeded through numpy SeedSequence spawning, so
experiment outputs are reproducible bit for bit from (seed, reps, spec).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .asymptotic import aipw, aipw_partial, select_epsilon
from .core_data import Dataset, ValidationError, decompose_estimand, partition
from .lipschitz import KNNRegressor, LipschitzClass
from .minimax_ci import (ConfidenceSequence, alpha_schedule, combine_intervals,
                         confidence_sequence, metric_T, minimax_interval,
                         mp_interval, optimize_delta)
from .modulus import DegenerateProblemError, ModulusProblem, ToyConfig


# ---------------------------------------------------------------------------
# running one-dimensional example

@dataclass(frozen=True)
class Example1Params:
    """Piecewise DGP with limited overlap near both ends of [0, 1].

    o scales the extreme propensities, eta_dgp the width of the limited
    overlap region, H the effect size.  Defaults follow the simulation
    setup: o = eta_dgp = 0.05, H = 0.25, sigma = 0.06.
    """

    n: int = 1000
    o: float = 0.05
    eta_dgp: float = 0.05
    H: float = 0.25
    sigma: float = 0.06
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.o < 0.5 and 0.0 < self.eta_dgp < 0.5):
            raise ValidationError("o and eta_dgp must lie in (0, 1/2)")
        if self.n < 1 or self.sigma <= 0:
            raise ValidationError("n must be >= 1 and sigma > 0")

    def sample(self, rng=None):
        return simulate_example1(self, rng=rng)


def example1_propensity(x, o: float, eta: float):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    b1 = x <= eta
    b2 = (x > eta) & (x <= 2 * eta)
    b3 = x > 2 * eta
    out[b1] = (o / eta) * x[b1]
    out[b2] = -(o / eta) * (x[b2] - eta) + (1.0 - o)
    out[b3] = (1.0 - 2 * o) / (1.0 - 2 * eta) * (x[b3] - 2 * eta) + o
    return out


def example1_baseline(x, eta: float, H: float):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    b1 = x <= eta / 2
    b2 = (x > eta / 2) & (x <= eta)
    b3 = (x > eta) & (x <= eta + 0.5)
    b4 = x > eta + 0.5
    out[b1] = (4 * H / eta ** 2) * (x[b1] - eta / 2) ** 2 + H
    out[b2] = -(4 * H / eta ** 2) * x[b2] * (x[b2] - eta)
    out[b3] = 32 * H * (x[b3] - eta) * (x[b3] - eta - 0.5)
    out[b4] = (-16 * H / (2 * eta - 1.0) ** 2
               * (x[b4] - eta - 0.5) * (x[b4] - 1.0))
    return out


def example1_effect(x, H: float):
    x = np.asarray(x, dtype=float)
    return 8 * H * (x - 0.5) ** 2


def example1_outcome(x, z, eta: float, H: float):
    return example1_baseline(x, eta, H) + np.asarray(z) * example1_effect(x, H)


def example1_lipschitz_bound(params: Example1Params) -> float:
    """Exact Lipschitz constant of the true outcome pair.

    Both the baseline and the treated arm are piecewise quadratic, so their
    slopes are piecewise linear and extremal at branch endpoints.
    """
    eta, H = params.eta_dgp, params.H

    def fprime(x):  # one-sided slopes evaluated inside each branch
        if x <= eta / 2:
            return (8 * H / eta ** 2) * (x - eta / 2)
        if x <= eta:
            return -(4 * H / eta ** 2) * (2 * x - eta)
        if x <= eta + 0.5:
            return 32 * H * (2 * x - 2 * eta - 0.5)
        return -16 * H / (2 * eta - 1.0) ** 2 * (2 * x - eta - 1.5)

    def hprime(x):
        return 16 * H * (x - 0.5)

    best = 0.0
    shift = 1e-12
    for lo, hi in [(0.0, eta / 2), (eta / 2, eta), (eta, eta + 0.5),
                   (eta + 0.5, 1.0)]:
        for x in (lo + shift, hi - shift):
            best = max(best, abs(fprime(x)), abs(fprime(x) + hprime(x)))
    return best


@dataclass
class SimulatedDraw:
    dataset: Dataset
    tau_per_unit: np.ndarray

    @property
    def tau(self) -> float:
        return float(self.tau_per_unit.mean())


def simulate_example1(params: Example1Params, rng=None) -> SimulatedDraw:
    """One draw: X uniform, Z Bernoulli(pi(X)), Y = f(X, Z) + noise."""
    if rng is None:
        rng = np.random.default_rng(params.seed)
    x = rng.uniform(0.0, 1.0, params.n)
    pi = example1_propensity(x, params.o, params.eta_dgp)
    z = (rng.random(params.n) < pi).astype(np.int64)
    y = example1_outcome(x, z, params.eta_dgp, params.H) \
        + params.sigma * rng.standard_normal(params.n)
    ds = Dataset(x[:, None], y, z, pi, np.full(params.n, params.sigma))
    return SimulatedDraw(ds, example1_effect(x, params.H))


# ---------------------------------------------------------------------------
# four-site analytic configuration

def build_toy_dataset(config: ToyConfig, seed=None) -> Dataset:
    """2(k+1)n units on the four analytic sites.

    Propensities are 1/2 on the overlap sites and 0/1 on the outer sites, so
    any partition threshold below 1/2 reproduces the intended weighting.
    Outcomes are standard normal draws around a zero truth if a seed is
    given (the zero function lies in every Lipschitz class), else zeros.
    """
    kn_f = config.k * config.n
    kn = int(round(kn_f))
    if abs(kn_f - kn) > 1e-9:
        raise ValidationError("k * n must be an integer")
    x = np.concatenate([
        np.full(kn, -config.xi - config.eta),
        np.full(config.n, -config.xi),
        np.full(config.n, config.xi),
        np.full(kn, config.xi + config.eta),
    ])
    z = np.concatenate([
        np.zeros(kn, dtype=np.int64), np.zeros(config.n, dtype=np.int64),
        np.ones(config.n, dtype=np.int64), np.ones(kn, dtype=np.int64),
    ])
    pi = np.concatenate([
        np.zeros(kn), np.full(config.n, 0.5),
        np.full(config.n, 0.5), np.ones(kn),
    ])
    total = 2 * (kn + config.n)
    if seed is None:
        y = np.zeros(total)
    else:
        y = np.random.default_rng(seed).standard_normal(total)
    return Dataset(x[:, None], y, z, pi, np.ones(total))


def toy_modulus_problem(config: ToyConfig, seed=None) -> ModulusProblem:
    """Modulus problem matching the analytic closed forms.

    Uses the closed forms' weight normalization, 1 / ((k+1) n) on each of
    the 2kn outer units (twice the 1/N partition weighting), so the solver
    value is directly comparable to :func:`analytic_modulus_oracle`.
    """
    ds = build_toy_dataset(config, seed=seed)
    q = np.minimum(ds.pi, 1.0 - ds.pi)
    w = np.where(q < 0.5, 1.0 / ((config.k + 1.0) * config.n), 0.0)
    return ModulusProblem.build(ds, w, config.L)


# ---------------------------------------------------------------------------
# RCT thinning and the extreme-propensity map

def thin_rct(rct: Dataset, target_pi, p: float, seed=None) -> Dataset:
    """Bernoulli thinning of an RCT into an observational dataset.

    Keeps unit i iff its realized treatment matches an independent
    Bernoulli(target_pi_i) draw and an acceptance coin O_i = 1; the kept
    subsample has P(z = 1 | kept, x) = target_pi(x) and keep probability
    min(p, 1 - p), where p is the trial's treatment rate.
    """
    if not 0.0 < p < 1.0:
        raise ValidationError("p must lie in (0, 1)")
    target_pi = np.asarray(target_pi, dtype=float)
    if target_pi.shape != (rct.n,):
        raise ValidationError("target_pi has the wrong length")
    if np.any(target_pi < 0) or np.any(target_pi > 1):
        raise ValidationError("target_pi must lie in [0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    c = (rng.random(rct.n) < target_pi).astype(np.int64)
    coin = rng.random(rct.n)
    if p <= 0.5:
        o = np.where(rct.z == 1, True, coin < p / (1.0 - p))
    else:
        o = np.where(rct.z == 0, True, coin < (1.0 - p) / p)
    keep = (rct.z == c) & o
    kept = rct.subset(keep)
    return kept.replace(pi=target_pi[keep])


def propensity_map_E(percentile: float, kappa: float, rng) -> float:
    """Extreme-propensity assignment by outcome-effect percentile.

    The four-branch rule pushes the tails of the percentile range to very
    small propensities; kappa widens the affected bands.  kappa = -1 is the
    no-limited-overlap control: every unit gets 1/2.
    """
    x = float(percentile)
    if not 0.0 <= x <= 1.0:
        raise ValidationError("percentile must lie in [0, 1]")
    if x <= 0.075 + kappa or 1.0 - x <= 0.075 + kappa:
        return float(rng.uniform(0.005, 0.03))
    if x <= 0.1 + kappa or 1.0 - x <= 0.1 + kappa:
        return float(rng.uniform(0.03, 0.05))
    if x <= 0.15 + kappa:
        return float(rng.uniform(0.05, 0.1))
    return 0.5


# ---------------------------------------------------------------------------
# synthetic RCT stand-in for the case study

@dataclass(frozen=True)
class SyntheticRctParams:
    n: int = 539
    d: int = 10
    p_treat: float = 0.483
    sigma: float = 0.5
    seed: int = 0


def _rct_baseline(x: np.ndarray) -> np.ndarray:
    coefs = 0.3 * np.linspace(1.0, 0.2, x.shape[1]) / math.sqrt(x.shape[1])
    return x @ coefs


def _rct_effect(x: np.ndarray) -> np.ndarray:
    return -0.2 + 0.3 * np.tanh(x[:, 0])


def simulate_synthetic_rct(params: SyntheticRctParams, rng=None) -> SimulatedDraw:
    """Gaussian-covariate randomized trial with a known outcome function."""
    if rng is None:
        rng = np.random.default_rng(params.seed)
    x = rng.standard_normal((params.n, params.d))
    z = (rng.random(params.n) < params.p_treat).astype(np.int64)
    tau = _rct_effect(x)
    y = _rct_baseline(x) + z * tau + params.sigma * rng.standard_normal(params.n)
    ds = Dataset(x, y, z, np.full(params.n, params.p_treat),
                 np.full(params.n, params.sigma))
    return SimulatedDraw(ds, tau)


def rct_to_observational(rct: Dataset, p_treat: float, kappa: float,
                         rng=None, cate_regressor=None) -> Dataset:
    """Thin an RCT into an observational dataset with extreme propensities.

    A T-learner fitted on the whole trial supplies effect estimates whose
    percentiles feed the extreme-propensity map; the thinning then realizes
    those propensities exactly.
    """
    rng = rng if isinstance(rng, np.random.Generator) \
        else np.random.default_rng(rng)
    reg = cate_regressor if cate_regressor is not None else KNNRegressor()
    if hasattr(reg, "fit"):
        reg = reg.fit(rct.x, rct.y, rct.z) or reg
    tau_hat = np.asarray(reg.predict(rct.x, 1)) - np.asarray(reg.predict(rct.x, 0))
    ranks = np.argsort(np.argsort(tau_hat, kind="stable"), kind="stable")
    pct = (ranks + 0.5) / rct.n
    pi = np.array([propensity_map_E(pc, kappa, rng) for pc in pct])
    return thin_rct(rct, pi, p_treat, rng)


# ---------------------------------------------------------------------------
# data-collection scenario

@dataclass(frozen=True)
class CollectionParams:
    """Initial draw for the sampling-option and continual-sampling studies.

    Three limited-overlap regions: deep clusters hugging the support ends
    (fraction f_edge within edge_depth of 0 and 1, propensity pi_edge) and a
    sparse middle band on (0.4, 0.6) at the more extreme pi_mid; the rest of
    the sample sits in the well-overlapped bands at propensity 1/2.  The
    edge clusters can only be extrapolated from one side, which is what
    separates the sampling options.  The outcome pair is smooth with known
    Lipschitz constant below the contextualized grid.
    """

    n: int = 500
    sigma: float = 0.1
    pi_edge: float = 0.03
    pi_mid: float = 0.01
    f_edge: float = 0.10
    f_mid: float = 0.03
    edge_depth: float = 0.05
    seed: int = 0

    def sample(self, rng=None):
        return simulate_collection(self, rng=rng)


def collection_propensity(x, pi_edge: float, pi_mid: float):
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, 0.5)
    out[(x < 0.1) | (x > 0.9)] = pi_edge
    out[(x > 0.4) & (x < 0.6)] = pi_mid
    return out


def collection_effect(x):
    return 0.8 + 0.5 * np.cos(2.0 * np.asarray(x, dtype=float))


def collection_outcome(x, z):
    x = np.asarray(x, dtype=float)
    return np.sin(2.5 * x) + np.asarray(z) * collection_effect(x)


def simulate_collection(params: CollectionParams, rng=None) -> SimulatedDraw:
    if rng is None:
        rng = np.random.default_rng(params.seed)
    n = params.n
    n_edge = int(params.f_edge * n)
    n_mid = int(params.f_mid * n)
    n_rest = n - n_edge - n_mid
    half = n_edge // 2
    nb = n_rest // 2
    x = np.concatenate([
        rng.uniform(0.0, params.edge_depth, half),
        rng.uniform(1.0 - params.edge_depth, 1.0, n_edge - half),
        rng.uniform(0.4, 0.6, n_mid),
        rng.uniform(0.1, 0.4, nb),
        rng.uniform(0.6, 0.9, n_rest - nb),
    ])
    rng.shuffle(x)
    pi = collection_propensity(x, params.pi_edge, params.pi_mid)
    z = (rng.random(n) < pi).astype(np.int64)
    y = collection_outcome(x, z) + params.sigma * rng.standard_normal(n)
    ds = Dataset(x[:, None], y, z, pi, np.full(n, params.sigma))
    return SimulatedDraw(ds, collection_effect(x))


# ---------------------------------------------------------------------------
# sampling options

@dataclass(frozen=True)
class SamplingOption:
    """A data-collection action: set pi = new_propensity on a region.

    ``region`` maps a covariate matrix to a boolean membership mask;
    ``sample_prob`` optionally thins the region by an independent coin per
    unit and draw.
    """

    name: str
    region: object  # callable (n, d) array -> (n,) bool mask
    sample_prob: float = 1.0
    new_propensity: float = 0.5

    @classmethod
    def from_intervals(cls, name: str, intervals, sample_prob: float = 1.0,
                       new_propensity: float = 0.5) -> "SamplingOption":
        spans = [(float(lo), float(hi)) for lo, hi in intervals]

        def member(x):
            v = np.asarray(x)[:, 0]
            mask = np.zeros(v.shape, dtype=bool)
            for lo, hi in spans:
                mask |= (v > lo) & (v < hi)
            return mask

        return cls(name=name, region=member, sample_prob=sample_prob,
                   new_propensity=new_propensity)


def evaluate_sampling_option(dataset: Dataset, option: SamplingOption,
                             epsilon: float, L: float, alpha: float,
                             n_mc: int, seed=None) -> float:
    """Expected non-overlap interval length after acting on the option.

    For each Monte Carlo draw the treatments are redrawn under the updated
    propensities and the length of the non-overlap interval is computed; no
    outcome data enters, since the interval length is outcome-free.
    """
    if n_mc < 1:
        raise ValidationError("n_mc must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) \
        else np.random.default_rng(seed)
    lip = LipschitzClass.from_points(dataset.x, L)
    n = dataset.n
    zeros = np.zeros(n)
    total = 0.0
    for _ in range(n_mc):
        mask = np.asarray(option.region(dataset.x), dtype=bool)
        if option.sample_prob < 1.0:
            mask = mask & (rng.random(n) < option.sample_prob)
        pi_new = np.where(mask, option.new_propensity, dataset.pi)
        z_new = (rng.random(n) < pi_new).astype(np.int64)
        ds_new = dataset.replace(pi=pi_new, z=z_new, y=zeros)
        rep = mp_interval(ds_new, epsilon, L, alpha, lip=lip)
        total += metric_T(rep, "length")
    return total / n_mc


# ---------------------------------------------------------------------------
# coverage experiments

_METHOD_TARGETS = {"AIPW": "tau", "AIPWP": "tau", "MP": "tau_minus",
                   "M": "tau", "MC": "tau"}


@dataclass
class MethodStats:
    method: str
    target: str
    n_ok: int = 0
    n_fail: int = 0
    hits: int = 0
    half_lengths: list = field(default_factory=list)

    @property
    def coverage(self) -> float:
        return self.hits / self.n_ok if self.n_ok else float("nan")

    @property
    def coverage_se(self) -> float:
        if not self.n_ok:
            return float("nan")
        p = self.coverage
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.n_ok)

    @property
    def mean_half_length(self) -> float:
        return float(np.mean(self.half_lengths)) if self.half_lengths else float("nan")

    @property
    def half_length_se(self) -> float:
        if len(self.half_lengths) < 2:
            return float("nan")
        return float(np.std(self.half_lengths, ddof=1)
                     / math.sqrt(len(self.half_lengths)))

    def to_dict(self) -> dict:
        return dict(method=self.method, target=self.target,
                    coverage=self.coverage, coverage_se=self.coverage_se,
                    mean_half_length=self.mean_half_length,
                    half_length_se=self.half_length_se,
                    n_ok=self.n_ok, n_fail=self.n_fail)


@dataclass
class CoverageResult:
    stats: dict
    mean_tau: float
    mean_tau_minus: float
    reps: int

    def to_dict(self) -> dict:
        return dict(stats={k: v.to_dict() for k, v in self.stats.items()},
                    mean_tau=self.mean_tau,
                    mean_tau_minus=self.mean_tau_minus, reps=self.reps)


def coverage_experiment(dgp, methods, reps: int, alpha: float, seed: int, *,
                        epsilon_set=(0.01, 0.02, 0.03, 0.04, 0.05),
                        L: float = 14.0, regressor=None) -> CoverageResult:
    """Replicated coverage and length comparison of the interval methods.

    Each replication draws fresh data, picks the trimming threshold that
    minimizes the trimmed asymptotic interval, and scores every requested
    method against its own target: the trimmed methods against the full ATE
    (exposing their bias), the non-overlap interval against tau_minus, and
    the full minimax and combined intervals against the full ATE.
    Per-replication failures are recorded and excluded, never fatal.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    methods = list(methods)
    unknown = set(methods) - set(_METHOD_TARGETS)
    if unknown:
        raise ValidationError(f"unknown methods: {sorted(unknown)}")
    stats = {m: MethodStats(method=m, target=_METHOD_TARGETS[m])
             for m in methods}
    taus, tau_minuses = [], []
    children = np.random.SeedSequence(seed).spawn(reps)

    for child in children:
        rng = np.random.default_rng(child)
        draw = dgp.sample(rng)
        ds, tau_units = draw.dataset, draw.tau_per_unit
        try:
            eps_star = select_epsilon(ds, epsilon_set, regressor, alpha)
        except ValidationError:
            for st in stats.values():
                st.n_fail += 1
            continue
        part = partition(ds, eps_star)
        dec = decompose_estimand(tau_units, part)
        taus.append(dec.tau)
        tau_minuses.append(dec.tau_minus)

        lip = None
        mp_problem = None
        if {"MP", "MC"} & set(methods) and part.n_non_overlap > 0:
            lip = LipschitzClass.from_points(ds.x, L)
            mp_problem = ModulusProblem.build(ds, part.w, L, lip)

        def run(name):
            if name == "AIPW":
                fitted = KNNRegressor() if regressor is None else regressor
                if hasattr(fitted, "clone"):
                    fitted = fitted.clone()
                fitted = fitted.fit(ds.x, ds.y, ds.z) or fitted
                ci = aipw(ds, fitted, alpha)
                return ci.lower, ci.upper, ci.half_length, dec.tau
            if name == "AIPWP":
                ci = aipw_partial(ds, eps_star, regressor, alpha)
                return ci.lower, ci.upper, ci.half_length, dec.tau
            if name == "MP":
                rep = mp_interval(ds, eps_star, L, alpha, problem=mp_problem) \
                    if mp_problem is not None else \
                    mp_interval(ds, eps_star, L, alpha)
                return rep.lower, rep.upper, rep.half_length, dec.tau_minus
            if name == "M":
                nonlocal_lip = lip if lip is not None \
                    else LipschitzClass.from_points(ds.x, L)
                rep = minimax_interval(ds, np.full(ds.n, 1.0 / ds.n), L,
                                       alpha, lip=nonlocal_lip)
                return rep.lower, rep.upper, rep.half_length, dec.tau
            if name == "MC":
                half_alpha = alpha / 2.0
                a = aipw_partial(ds, eps_star, regressor, half_alpha)
                b = mp_interval(ds, eps_star, L, half_alpha,
                                problem=mp_problem) \
                    if mp_problem is not None else \
                    mp_interval(ds, eps_star, L, half_alpha)
                comb = combine_intervals(a, b)
                return comb.lower, comb.upper, comb.half_length, dec.tau
            raise AssertionError(name)

        for name in methods:
            st = stats[name]
            try:
                lower, upper, half, target = run(name)
            except (ValidationError, DegenerateProblemError, RuntimeError):
                st.n_fail += 1
                continue
            st.n_ok += 1
            st.hits += int(lower <= target <= upper)
            st.half_lengths.append(half)

    return CoverageResult(
        stats=stats,
        mean_tau=float(np.mean(taus)) if taus else float("nan"),
        mean_tau_minus=float(np.mean(tau_minuses)) if tau_minuses else float("nan"),
        reps=reps)


# ---------------------------------------------------------------------------
# continual sampling / confidence sequence experiment

DEFAULT_EPOCHS = ((0.40, 0.47), (0.47, 0.53), (0.53, 0.60),
                  (0.00, 0.03), (0.03, 0.07), (0.07, 0.10))


@dataclass
class ConfseqRun:
    sequence: ConfidenceSequence
    targets: list
    covered: list

    @property
    def jointly_covered(self) -> bool:
        return all(self.covered)


def run_collection_confseq(params: CollectionParams, epochs=DEFAULT_EPOCHS,
                           L: float = 5.48, epsilon: float = 0.04,
                           alpha: float = 0.05, rng=None) -> ConfseqRun:
    """Continual sampling over the epoch regions with anytime-valid intervals.

    Each epoch sets pi = 1/2 on its region, redraws those treatments, and
    collects fresh outcomes there; after each epoch the non-overlap interval
    at level alpha_t is recorded along with its moving target tau_{w_t}.
    """
    rng = rng if isinstance(rng, np.random.Generator) \
        else np.random.default_rng(rng)
    draw = simulate_collection(params, rng=rng)
    ds, tau_units = draw.dataset, draw.tau_per_unit
    x = ds.x[:, 0]
    lip = LipschitzClass.from_points(ds.x, L)

    steps = []
    targets = []
    current = ds
    for lo, hi in epochs:
        mask = (x >= lo) & (x < hi)
        pi_new = np.where(mask, 0.5, current.pi)
        z_new = current.z.copy()
        y_new = current.y.copy()
        idx = np.flatnonzero(mask)
        if idx.size:
            z_new[idx] = (rng.random(idx.size) < 0.5).astype(np.int64)
            y_new[idx] = collection_outcome(x[idx], z_new[idx]) \
                + params.sigma * rng.standard_normal(idx.size)
        current = current.replace(pi=pi_new, z=z_new, y=y_new)
        part = partition(current, epsilon)
        problem = ModulusProblem.build(current, part.w, L, lip)
        steps.append((problem, y_new))
        targets.append(float(np.sum(part.w * tau_units)))

    seq = confidence_sequence(steps, alpha)
    covered = [bool(e.lower <= t <= e.upper)
               for e, t in zip(seq.entries, targets)]
    return ConfseqRun(sequence=seq, targets=targets, covered=covered)


def confseq_coverage_study(params: CollectionParams, n_designs: int,
                           noise_reps: int, epochs=DEFAULT_EPOCHS,
                           L: float = 5.48, epsilon: float = 0.04,
                           alpha: float = 0.05, seed: int = 0) -> float:
    """Joint-coverage rate of the continual-sampling confidence sequence.

    Each design draws covariates and the treatment-update path; each noise
    replication redraws every Gaussian disturbance with the design held
    fixed.  The interval geometry is outcome-free, so each design solves its
    delta searches once and the noise replications reduce to dot products.
    Returns the fraction of (design, noise) pairs whose entire sequence
    covers its moving targets.
    """
    children = np.random.SeedSequence(seed).spawn(n_designs)
    joint = 0
    total = 0
    for child in children:
        rng = np.random.default_rng(child)
        draw = simulate_collection(params, rng=rng)
        ds, tau_units = draw.dataset, draw.tau_per_unit
        x = ds.x[:, 0]
        lip = LipschitzClass.from_points(ds.x, L)

        current_z = ds.z
        current_pi = ds.pi
        masks, mean_y, targets, coefs, halves = [], [], [], [], []
        for t, (lo, hi) in enumerate(epochs, start=1):
            mask = (x >= lo) & (x < hi)
            idx = np.flatnonzero(mask)
            current_pi = np.where(mask, 0.5, current_pi)
            if idx.size:
                current_z = current_z.copy()
                current_z[idx] = (rng.random(idx.size) < 0.5).astype(np.int64)
            dsn = ds.replace(pi=current_pi, z=current_z)
            part = partition(dsn, epsilon)
            problem = ModulusProblem.build(dsn, part.w, L, lip)
            opt = optimize_delta(problem, alpha_schedule(alpha, t))
            sol = opt.solution
            coef = (2.0 * sol.omega_prime / sol.delta) \
                * sol.f_observed(current_z) / ds.sigma ** 2
            masks.append(idx)
            mean_y.append(collection_outcome(x, current_z))
            targets.append(float(np.sum(part.w * tau_units)))
            coefs.append(coef)
            halves.append(opt.half_length)

        for _ in range(noise_reps):
            eps_vec = rng.standard_normal(ds.n)
            noise_path = []
            for idx in masks:
                if idx.size:
                    eps_vec = eps_vec.copy()
                    eps_vec[idx] = rng.standard_normal(idx.size)
                noise_path.append(eps_vec)
            covered = True
            for t in range(len(masks)):
                y_t = mean_y[t] + params.sigma * noise_path[t]
                est = float(coefs[t] @ y_t)
                if abs(est - targets[t]) > halves[t]:
                    covered = False
                    break
            joint += covered
            total += 1
    return joint / total
