"""The modulus-of-continuity program and its diagnostics.

omega(delta; w) is the value of

    maximize    2 sum_i w_i (f(x_i, 1) - f(x_i, 0))
    subject to  sum_i f(x_i, z_i)^2 / sigma_i^2 <= delta^2 / 4
                |f(x_i, d) - f(x_j, d)| <= L ||x_i - x_j||  for all i, j, d

over the 2n free values f(x_i, d).  Its optimal value and derivative drive
the bias-corrected confidence intervals; its dual variables have a matching
interpretation that exposes which overlap units each non-overlap unit
borrows from.

Before solving, units sharing a covariate row are merged (their values are
forced equal by zero-distance constraints) and Lipschitz constraints implied
through a third point by the triangle inequality are pruned; neither step
changes the optimal value.  On sorted one-dimensional data the surviving
constraints form a chain, which the backend turns into banded linear
algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .ball_program import solve_ball_program
from .core_data import Dataset, ValidationError
from .lipschitz import LipschitzClass
from .maxflow import MaxFlowInfeasibleError, max_flow_matrix

__all__ = [
    "DegenerateProblemError", "ModulusProblem", "ModulusSolution", "ToyConfig",
    "solve_modulus", "omega_derivative", "matching_weights",
    "analytic_modulus_oracle", "monotone_extrapolation_check",
    "max_flow_matrix",
]


class DegenerateProblemError(ValueError):
    """The modulus program has no weight mass or no usable treatment arm."""


@dataclass(eq=False)
class ModulusProblem:
    """Inputs of the modulus program: data, estimand weights, function class."""

    dataset: Dataset
    w: np.ndarray
    lip: LipschitzClass
    _compiled: dict = field(default_factory=dict, repr=False)
    _solutions: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        n = self.dataset.n
        if self.w.shape != (n,):
            raise ValidationError(f"w: length {self.w.shape} != n = {n}")
        if np.any(self.w < 0):
            raise ValidationError("w must be nonnegative")
        if self.lip.dist.shape != (n, n):
            raise ValidationError("lip.dist shape does not match dataset")

    @classmethod
    def build(cls, dataset: Dataset, w, L: float,
              lip: LipschitzClass | None = None) -> "ModulusProblem":
        if lip is None:
            lip = LipschitzClass.from_points(dataset.x, L)
        return cls(dataset=dataset, w=np.asarray(w, dtype=float), lip=lip)

    @property
    def sum_w(self) -> float:
        return float(self.w.sum())


@dataclass(eq=False)
class ModulusSolution:
    """Primal/dual solution of the modulus program at one delta.

    f0/f1 hold the optimizer f*(x_i, 0) and f*(x_i, 1) per unit; ``mu`` is
    the dual scalar on the quadratic constraint in the normalization in
    which the imputation weights are Lambda / mu.  The Lambda matrices are
    populated by :func:`matching_weights`.
    """

    delta: float
    omega: float
    omega_prime: float
    f0: np.ndarray
    f1: np.ndarray
    mu: float
    lambda0: sp.csr_matrix | None = None
    lambda1: sp.csr_matrix | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def f_star(self) -> np.ndarray:
        """All 2n optimizer values, arm-0 block then arm-1 block."""
        return np.concatenate([self.f0, self.f1])

    def f_observed(self, z: np.ndarray) -> np.ndarray:
        """f*(x_i, z_i) for every unit."""
        return np.where(z == 1, self.f1, self.f0)


@dataclass(frozen=True)
class ToyConfig:
    """Four-site analytic configuration.

    n control units at -xi and n treated at +xi form the overlap cluster;
    k*n controls at -(xi + eta) and k*n treated at xi + eta sit in the
    non-overlap region.  All noise sds are one.
    """

    n: int
    k: float
    xi: float
    eta: float
    L: float

    def __post_init__(self):
        if self.n < 1 or self.xi <= 0 or self.eta <= 0 or self.L <= 0:
            raise ValidationError("ToyConfig fields must be positive")

    @property
    def delta_c(self) -> float:
        if self.k <= 1:
            raise ValidationError("closed forms require k > 1")
        return (2.0 * np.sqrt(2.0 * self.n * self.k * (self.k + 1.0))
                / (self.k - 1.0)) * self.L * self.eta


# ---------------------------------------------------------------------------
# compilation: merge duplicate sites, prune implied constraints

def _prune_pairs_1d(x_groups: np.ndarray) -> np.ndarray:
    m = x_groups.shape[0]
    out = np.empty((m - 1, 2), dtype=np.int64)
    out[:, 0] = np.arange(m - 1)
    out[:, 1] = np.arange(1, m)
    return out


def _prune_pairs_general(D: np.ndarray) -> np.ndarray:
    m = D.shape[0]
    keep = np.triu(np.ones((m, m), dtype=bool), k=1)
    if m > 2000:  # pruning is a solve-time optimization, never required
        return np.argwhere(keep)
    scale = float(D.max()) if m else 0.0
    tol = 1e-12 * (1.0 + scale)
    for i in range(m):
        S = D[i][:, None] + D
        S[i, :] = np.inf
        np.fill_diagonal(S, np.inf)
        implied = S.min(axis=0) <= D[i] * (1.0 + 1e-12) + tol
        keep[i, implied] = False
    return np.argwhere(keep)


def _compile(problem: ModulusProblem) -> dict:
    cache = problem._compiled
    if cache:
        return cache
    ds = problem.dataset
    n = ds.n
    L = float(problem.lip.L)

    if L == 0.0:
        m = 1
        ginv = np.zeros(n, dtype=np.int64)
        pairs = np.empty((0, 2), dtype=np.int64)
        bounds = np.empty(0)
    else:
        _, reps, ginv = np.unique(ds.x, axis=0, return_index=True,
                                  return_inverse=True)
        ginv = ginv.reshape(-1)
        m = reps.size
        if m == 1:
            pairs = np.empty((0, 2), dtype=np.int64)
        elif ds.d == 1:
            pairs = _prune_pairs_1d(ds.x[reps])
        else:
            pairs = _prune_pairs_general(problem.lip.dist[np.ix_(reps, reps)])
        Dg = problem.lip.dist[np.ix_(reps, reps)] if m > 1 else np.zeros((1, 1))
        bounds = L * Dg[pairs[:, 0], pairs[:, 1]] if pairs.size else np.empty(0)

    M = 2 * m
    obs = ginv + m * ds.z
    dball = np.zeros(M)
    np.add.at(dball, obs, 1.0 / ds.sigma ** 2)
    c = np.zeros(M)
    np.add.at(c, ginv, -2.0 * problem.w)
    np.add.at(c, m + ginv, 2.0 * problem.w)

    npair = pairs.shape[0]
    pos = np.empty(4 * npair, dtype=np.int64)
    neg = np.empty(4 * npair, dtype=np.int64)
    b = np.empty(4 * npair)
    for arm in (0, 1):
        off = arm * m
        sl = slice(2 * npair * arm, 2 * npair * arm + npair)
        pos[sl] = off + pairs[:, 0]
        neg[sl] = off + pairs[:, 1]
        b[sl] = bounds
        sl = slice(2 * npair * arm + npair, 2 * npair * (arm + 1))
        pos[sl] = off + pairs[:, 1]
        neg[sl] = off + pairs[:, 0]
        b[sl] = bounds

    cache.update(m=m, ginv=ginv, dball=dball, c=c,
                 pos=pos, neg=neg, b=b, n_pairs=npair)
    return cache


def _validate_problem(problem: ModulusProblem) -> None:
    if problem.sum_w <= 0.0:
        raise DegenerateProblemError("sum of weights is zero: the modulus "
                                     "program has no estimand mass")
    z = problem.dataset.z
    if not (z == 1).any() or not (z == 0).any():
        raise DegenerateProblemError(
            "need at least one treated and one control unit; otherwise the "
            "program is unbounded")


def solve_modulus(problem: ModulusProblem, delta: float, *,
                  extra_upper=None, use_cache: bool = True) -> ModulusSolution:
    """Solve the modulus program at a given delta.

    ``extra_upper`` optionally appends rows v[pos] - v[neg] <= bound in
    unit/arm coordinates as ``(unit_hi, unit_lo, arm, bound)`` tuples; these
    solves bypass the per-problem solution cache.
    """
    delta = float(delta)
    if not np.isfinite(delta) or delta <= 0:
        raise ValidationError(f"delta must be positive, got {delta}")
    _validate_problem(problem)

    cacheable = use_cache and extra_upper is None
    if cacheable and delta in problem._solutions:
        return problem._solutions[delta]

    comp = _compile(problem)
    ds = problem.dataset
    m, ginv = comp["m"], comp["ginv"]
    pos, neg, b = comp["pos"], comp["neg"], comp["b"]
    if extra_upper:
        pos_x, neg_x, b_x = [], [], []
        for unit_hi, unit_lo, arm, bound in extra_upper:
            chi = arm * m + ginv[unit_hi]
            clo = arm * m + ginv[unit_lo]
            if chi != clo:
                pos_x.append(chi)
                neg_x.append(clo)
                b_x.append(float(bound))
        pos = np.concatenate([pos, np.asarray(pos_x, dtype=np.int64)])
        neg = np.concatenate([neg, np.asarray(neg_x, dtype=np.int64)])
        b = np.concatenate([b, np.asarray(b_x)])

    r2 = delta * delta / 4.0
    res = solve_ball_program(comp["c"], comp["dball"], r2, pos, neg, b)

    v = res.v
    nrm2 = float(v @ (comp["dball"] * v))
    if nrm2 > r2:
        v = v * np.sqrt(r2 / nrm2)

    f0 = v[ginv]
    f1 = v[m + ginv]
    omega = float(2.0 * np.sum(problem.w * (f1 - f0)))
    treated_sum = float(np.sum(f1[ds.z == 1] / ds.sigma[ds.z == 1] ** 2))
    control_sum = float(-np.sum(f0[ds.z == 0] / ds.sigma[ds.z == 0] ** 2))
    sum_w = problem.sum_w
    mu = treated_sum / sum_w

    lip_viol = float(np.max(v[pos] - v[neg] - b)) if pos.size else 0.0
    sol = ModulusSolution(
        delta=delta, omega=omega, omega_prime=np.nan, f0=f0, f1=f1, mu=mu,
        diagnostics=dict(
            gap=res.gap, iterations=res.iterations, mu_ipm=res.mu,
            mu_control_side=(control_sum / sum_w),
            ball_slack=r2 - float(v @ (comp["dball"] * v)),
            lipschitz_violation=max(lip_viol, 0.0),
        ),
    )
    omega_derivative(sol, problem)
    if cacheable:
        problem._solutions[delta] = sol
    return sol


def omega_derivative(solution: ModulusSolution, problem: ModulusProblem) -> float:
    """omega'(delta) from the optimizer.

    Equates the two coefficient forms of the minimax estimator:
    omega'(delta) = delta * sum(w) / (2 * sum over treated of
    f*(x_j, 1) / sigma_j^2).  The result is stored on the solution.
    """
    z = problem.dataset.z
    sigma = problem.dataset.sigma
    treated_sum = float(np.sum(solution.f1[z == 1] / sigma[z == 1] ** 2))
    scale = float(np.sum(np.abs(solution.f1[z == 1]) / sigma[z == 1] ** 2))
    if treated_sum <= 1e-14 * max(scale, 1e-300):
        raise DegenerateProblemError(
            "no treated mass in the solution: the estimator-coefficient "
            "denominator is zero")
    omega_prime = solution.delta * problem.sum_w / (2.0 * treated_sum)
    solution.omega_prime = omega_prime
    return omega_prime


# ---------------------------------------------------------------------------
# dual recovery: transportation of binding-pair mass

def _binding_adjacency(vals, dist, L, tol_rel):
    """Directed binding graph: edge u -> v iff vals[v] - vals[u] = L d_uv.

    In the arm-1 network dual mass flows uphill along binding constraints
    from observed donors toward the weighted counterfactuals riding their
    upper envelope; negating the values gives the arm-0 mirror.
    """
    d = L * dist
    gap = np.abs(vals[None, :] - vals[:, None] - d)
    scale = 1.0 + d + np.abs(vals[:, None]) + np.abs(vals[None, :])
    adj = gap <= tol_rel * scale
    np.fill_diagonal(adj, False)
    return adj


def _reachable(adj, sources, targets):
    """Boolean (len(sources), len(targets)) reachability over directed adj."""
    n = adj.shape[0]
    out = np.zeros((sources.size, targets.size), dtype=bool)
    for a, s in enumerate(sources):
        seen = np.zeros(n, dtype=bool)
        seen[s] = True
        frontier = np.array([s])
        while frontier.size:
            nxt = adj[frontier].any(axis=0) & ~seen
            seen |= nxt
            frontier = np.flatnonzero(nxt)
        out[a] = seen[targets]
    return out


def _route_arm(vals, dist, L, supply, demand, tol) -> np.ndarray:
    """Transport supply to demand over binding chains; (n, n) mass matrix.

    Supplies sit at observed units, demands at weighted units; mass may pass
    through intermediate units along binding constraints (chains occur on
    collinear data and whenever same-arm constraints bind), so feasibility
    is checked on the reachability relation of the binding graph.  Entry
    (s, k) is the mass unit k draws from donor s.
    """
    n = vals.size
    net = supply - demand
    p = np.clip(net, 0.0, None)
    q = np.clip(-net, 0.0, None)
    total_p, total_q = float(p.sum()), float(q.sum())
    if total_q <= 0.0:
        return np.zeros((n, n))
    if total_p <= 0.0:
        raise MaxFlowInfeasibleError("dual mass balance is empty on one side")
    p = p * (total_q / total_p)
    keep_r = np.flatnonzero(p > 1e-12 * total_q)
    keep_c = np.flatnonzero(q > 1e-12 * total_q)
    adj = _binding_adjacency(vals, dist, L, tol)
    edges = _reachable(adj, keep_r, keep_c)
    A_small = max_flow_matrix(p[keep_r], q[keep_c], edges)
    A = np.zeros((n, n))
    A[np.ix_(keep_r, keep_c)] = A_small
    return A


def matching_weights(solution: ModulusSolution, problem: ModulusProblem,
                     tol_ladder=(1e-8, 1e-7, 1e-6, 1e-5, 1e-4)) -> sp.csr_matrix:
    """Imputation weights W with w_k * fhat(x_k, 1 - z_k) = sum_j W[j, k] y_j.

    W[j, k] = Lambda1[j, k] / mu when z_k = 0 and Lambda0[k, j] / mu when
    z_k = 1, where the Lambda are duals on binding Lipschitz constraints.
    They are recovered by routing the stationarity mass of the optimizer
    over the binding graph with the max-flow transportation construction;
    column sums then reproduce the weights w_k exactly, exposing which
    donors each weighted unit's counterfactual borrows from.  Also populates
    ``solution.lambda0`` and ``solution.lambda1`` (the cross-arm entries).
    """
    ds = problem.dataset
    z, sigma, w = ds.z, ds.sigma, problem.w
    L = float(problem.lip.L)
    dist = problem.lip.dist
    treated = z == 1
    control = z == 0
    sum_w = problem.sum_w

    mu1 = float(np.sum(solution.f1[treated] / sigma[treated] ** 2)) / sum_w
    mu0 = float(-np.sum(solution.f0[control] / sigma[control] ** 2)) / sum_w
    scale = abs(mu1) + abs(mu0)
    if mu1 <= 1e-12 * max(scale, 1e-300) or mu0 <= 1e-12 * max(scale, 1e-300):
        raise DegenerateProblemError(
            "quadratic-constraint dual is zero; the ball does not bind")

    supply1 = np.where(treated, solution.f1 / sigma ** 2, 0.0)
    supply0 = np.where(control, -solution.f0 / sigma ** 2, 0.0)

    A1 = A0 = None
    last_exc: Exception | None = None
    for tol in tol_ladder:
        try:
            A1 = _route_arm(solution.f1, dist, L, supply1, mu1 * w, tol)
            A0 = _route_arm(-solution.f0, dist, L, supply0, mu0 * w, tol)
            break
        except MaxFlowInfeasibleError as exc:
            last_exc = exc
            A1 = A0 = None
    if A1 is None:
        raise MaxFlowInfeasibleError(
            f"could not route dual mass over binding constraints: {last_exc}")

    n = ds.n
    lam1 = sp.lil_matrix((n, n))
    lam1[np.ix_(np.flatnonzero(treated), np.flatnonzero(control))] = \
        A1[np.ix_(np.flatnonzero(treated), np.flatnonzero(control))]
    lam0 = sp.lil_matrix((n, n))
    # paper indexing for the arm-0 duals: rows treated, columns control
    lam0[np.ix_(np.flatnonzero(treated), np.flatnonzero(control))] = \
        A0[np.ix_(np.flatnonzero(control), np.flatnonzero(treated))].T
    solution.lambda1 = lam1.tocsr()
    solution.lambda0 = lam0.tocsr()

    # a unit's counterfactual lives in the opposite arm: only those columns
    # constitute imputation weights (same-arm flows are self-absorption)
    W1 = A1 / mu1
    W1[:, treated] = 0.0
    W0 = A0 / mu0
    W0[:, control] = 0.0
    return sp.csr_matrix(W1 + W0)


# ---------------------------------------------------------------------------
# analytic oracle for the four-site configuration

def analytic_modulus_oracle(config: ToyConfig, delta: float):
    """Closed-form (omega, maxbias, sd, regime) for the four-site geometry.

    Regime 1 (delta <= delta_c): the within-cluster Lipschitz bounds are
    slack and omega grows linearly in delta.  Regime 2: both bind, and the
    square-root term takes over.  Requires k > 1.
    """
    if config.k <= 1:
        raise ValidationError("analytic oracle requires k > 1")
    if delta <= 0:
        raise ValidationError("delta must be positive")
    n, k, xi, eta, L = config.n, config.k, config.xi, config.eta, config.L
    gamma = (2.0 / n) * (1.0 + 1.0 / k)
    front = 2.0 * k / (k + 1.0)
    const = 2.0 * L * (2.0 * xi + eta)
    delta_c = config.delta_c
    if delta <= delta_c:
        omega = front * (delta * np.sqrt(gamma) / 2.0 + const)
        sd = front * np.sqrt(gamma) / 2.0
        maxbias = front * const / 2.0
        regime = 1
    else:
        C = (2.0 * k * n / (k + 1.0)) * (L * eta) ** 2
        s = np.sqrt(delta * delta / 4.0 - C)
        root = np.sqrt(8.0 / (n * (k + 1.0)))
        omega = front * (const + 2.0 * (k - 1.0) / (k + 1.0) * L * eta + root * s)
        sd = front * root * (delta / 4.0) / s
        maxbias = (omega - delta * sd) / 2.0
        regime = 2
    return float(omega), float(maxbias), float(sd), regime


# ---------------------------------------------------------------------------
# monotone extrapolation diagnostic

def monotone_extrapolation_check(problem: ModulusProblem, delta: float,
                                 tol: float = 1e-6) -> bool:
    """Check that some optimizer decays monotonically away from the weights.

    For one-dimensional two-cluster weights, re-solves with the arm-1 values
    of the zero-weight units constrained to be nonincreasing in their
    distance to the weighted cluster.  Because a monotone optimizer exists,
    the constrained value must match omega within tolerance.
    """
    ds = problem.dataset
    if ds.d != 1:
        raise ValidationError("monotone extrapolation check supports only "
                              "1-D covariates")
    w = problem.w
    zero = np.flatnonzero(w == 0)
    posw = np.flatnonzero(w > 0)
    if zero.size == 0 or posw.size == 0:
        return True
    x = ds.x[:, 0]
    lo, hi = x[zero].max(), x[posw].min()
    lo2, hi2 = x[posw].max(), x[zero].min()
    if not (lo < hi or lo2 < hi2):
        raise ValidationError("weights do not form a two-cluster structure "
                              "separated along x")

    base = solve_modulus(problem, delta)
    eta = np.min(np.abs(x[zero][:, None] - x[posw][None, :]), axis=1)
    order = zero[np.lexsort((zero, eta))]  # ascending distance, stable
    extra = [(order[a + 1], order[a], 1, 0.0) for a in range(order.size - 1)]
    if not extra:
        return True
    constrained = solve_modulus(problem, delta, extra_upper=extra)
    return abs(constrained.omega - base.omega) <= tol * max(1.0, abs(base.omega))
