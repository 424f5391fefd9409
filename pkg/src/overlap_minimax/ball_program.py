"""Linear maximization over an ellipsoidal ball cut by difference bounds.

Solves
    maximize    c . v
    subject to  v[pos_r] - v[neg_r] <= b_r      (r = 1..m)
                sum_j d_j v_j^2     <= r2

with d >= 0, b >= 0, r2 > 0.  This is the shape of every modulus program
after duplicate covariate sites are merged: the quadratic picks up the
observed coordinates, the difference bounds carry the Lipschitz
constraints.

A primal-dual interior-point method with Mehrotra predictor-corrector
steps takes the iterate near the optimum; an active-set Newton polish then
solves the KKT equalities to machine precision, which keeps the returned
values reliable even at degenerate points where constraint activity
changes.  The Newton normal matrix is
    H = 2 mu diag(d) + A^T diag(lam/s) A + (4 mu / s_q) u u^T,  u = d * v,
a banded or dense symmetric core plus a rank-one ball term handled by a
Sherman-Morrison update; sorted one-dimensional problems with pruned
constraints give a bandwidth-one core, which keeps desk-scale sweeps fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverConvergenceError(RuntimeError):
    """Optimization could not certify the requested accuracy.

    Carries the final relative duality gap and feasibility residuals.
    """

    def __init__(self, message, gap=None, primal_resid=None, dual_resid=None):
        super().__init__(message)
        self.gap = gap
        self.primal_resid = primal_resid
        self.dual_resid = dual_resid


@dataclass
class BallProgramResult:
    v: np.ndarray
    objective: float
    lam: np.ndarray          # duals on the difference rows
    mu: float                # dual on the quadratic ball
    gap: float               # relative duality-gap bound
    primal_resid: float
    dual_resid: float
    iterations: int
    converged: bool


def _alpha_to_boundary(x: np.ndarray, dx: np.ndarray) -> float:
    neg = dx < 0
    if not neg.any():
        return np.inf
    with np.errstate(over="ignore", divide="ignore"):
        return float(np.min(-x[neg] / dx[neg]))


class _KKT:
    """Factorization of H0 = 2 mu diag(d) + A^T W A + reg I."""

    def __init__(self, M, pos, neg, dvec):
        self.M = M
        self.pos = pos
        self.neg = neg
        self.dvec = dvec
        self.m = pos.size
        self.bandwidth = int(np.max(np.abs(pos - neg))) if self.m else 0
        self.mode = "banded" if self.bandwidth <= 4 else (
            "dense" if M <= 1600 else "sparse")
        if self.mode == "banded":
            self._lo = np.minimum(pos, neg)
            self._off = np.abs(pos - neg)
        elif self.mode == "sparse":
            rows = np.concatenate([pos, neg, pos, neg, np.arange(M)])
            cols = np.concatenate([pos, neg, neg, pos, np.arange(M)])
            self._pattern = (rows, cols)

    def factor(self, mu, w, reg):
        diag = 2.0 * mu * self.dvec + reg
        if self.mode == "banded":
            ab = np.zeros((self.bandwidth + 1, self.M))
            ab[0] = diag
            if self.m:
                np.add.at(ab[0], self.pos, w)
                np.add.at(ab[0], self.neg, w)
                np.add.at(ab, (self._off, self._lo), -w)
            self._fac = sla.cholesky_banded(ab, lower=True, check_finite=False)
        elif self.mode == "dense":
            H = np.zeros((self.M, self.M))
            if self.m:
                np.add.at(H, (self.pos, self.pos), w)
                np.add.at(H, (self.neg, self.neg), w)
                np.add.at(H, (self.pos, self.neg), -w)
                np.add.at(H, (self.neg, self.pos), -w)
            H[np.diag_indices(self.M)] += diag
            self._fac = sla.cho_factor(H, lower=True, check_finite=False)
        else:
            data = np.concatenate([w, w, -w, -w, diag])
            H = sp.coo_matrix((data, self._pattern), shape=(self.M, self.M)).tocsc()
            self._fac = spla.splu(H)

    def solve(self, rhs):
        if self.mode == "banded":
            return sla.cho_solve_banded((self._fac, True), rhs, check_finite=False)
        if self.mode == "dense":
            return sla.cho_solve(self._fac, rhs, check_finite=False)
        return self._fac.solve(rhs)


def _certify(cs, dvec, r2, pos, neg, b, v, lam, mu, bscale):
    """Weak-duality certificate at a candidate point.

    Scales the primal point into the ball, evaluates the Lagrangian dual at
    (lam, mu) in closed form, and returns (gap, violation, feasible point):
    the relative gap between the dual value and the feasible primal value,
    and the residual violation of the difference rows.
    """
    nrm2 = float(v @ (dvec * v))
    if nrm2 > r2 > 0:
        v = v * np.sqrt(r2 / nrm2)
    viol = float(np.max(v[pos] - v[neg] - b)) / (1.0 + bscale) if pos.size else 0.0
    viol = max(viol, 0.0)
    primal = float(cs @ v)

    g = cs.copy()
    if pos.size:
        np.subtract.at(g, pos, lam)
        np.add.at(g, neg, lam)
    obs = dvec > 0
    if mu <= 0:
        return np.inf, viol, v
    dual = float(b @ lam) + mu * r2 \
        + float(np.sum(g[obs] ** 2 / (4.0 * mu * dvec[obs])))
    # coordinates outside the ball must have zero reduced gradient; charge
    # any residual against the certificate at the point's own magnitude
    free = ~obs
    if free.any():
        dual += float(np.abs(g[free]) @ (np.abs(v[free]) + 1.0))
    gap = max(dual - primal, 0.0) / (1.0 + abs(primal))
    return gap, viol, v


def _polish(cs, dvec, r2, pos, neg, b, v, lam, mu):
    """Newton solve of the KKT equalities on the apparent active set.

    Returns a refined (v, lam, mu) or None if refinement fails to improve.
    Dual degeneracy (dependent active rows) is absorbed by a small Tikhonov
    term; duals that come out negative drop the row and retry.
    """
    M = cs.size
    if pos.size:
        slack = b - (v[pos] - v[neg])
        active = (slack < lam) | (slack <= 1e-9 * (1.0 + b))
    else:
        active = np.zeros(0, dtype=bool)
    mu = max(mu, 1e-14)

    for _ in range(8):
        act = np.flatnonzero(active)
        if act.size:
            # both directions of a pair cannot bind unless the bound is zero;
            # keep the direction carrying the larger dual
            seen: dict = {}
            drop = []
            for r in act:
                key = (min(pos[r], neg[r]), max(pos[r], neg[r]))
                other = seen.get(key)
                if other is None:
                    seen[key] = r
                elif lam[r] > lam[other]:
                    drop.append(other)
                    seen[key] = r
                else:
                    drop.append(r)
            if drop:
                active[np.asarray(drop)] = False
                act = np.flatnonzero(active)
        k = act.size
        N = M + k + 1
        pa, na = pos[act], neg[act]
        rho = 1e-12 * (1.0 + 2.0 * mu * float(dvec.max() if M else 0.0))

        vv, ll, mm = v.copy(), np.maximum(lam[act], 0.0), mu
        ok = True
        for _ in range(6):
            u = dvec * vv
            F1 = -cs + 2.0 * mm * u
            if k:
                np.add.at(F1, pa, ll)
                np.add.at(F1, na, -ll)
            F2 = (vv[pa] - vv[na]) - b[act] if k else np.zeros(0)
            F3 = float(vv @ u) - r2
            Fnorm = max(float(np.max(np.abs(F1))),
                        float(np.max(np.abs(F2))) if k else 0.0, abs(F3))
            if Fnorm <= 1e-14 * (1.0 + float(np.max(np.abs(cs)))):
                break
            rows, cols, data = [], [], []
            idx = np.arange(M)
            rows.append(idx); cols.append(idx)
            data.append(2.0 * mm * dvec + rho)
            if k:
                jj = np.arange(k)
                rows.append(pa); cols.append(M + jj); data.append(np.ones(k))
                rows.append(na); cols.append(M + jj); data.append(-np.ones(k))
                rows.append(M + jj); cols.append(pa); data.append(np.ones(k))
                rows.append(M + jj); cols.append(na); data.append(-np.ones(k))
                rows.append(M + jj); cols.append(M + jj)
                data.append(np.full(k, -rho))
            border = 2.0 * u
            nz = np.flatnonzero(border)
            rows.append(nz); cols.append(np.full(nz.size, M + k))
            data.append(border[nz])
            rows.append(np.full(nz.size, M + k)); cols.append(nz)
            data.append(border[nz])
            rows.append(np.array([M + k])); cols.append(np.array([M + k]))
            data.append(np.array([-rho]))
            J = sp.coo_matrix(
                (np.concatenate(data),
                 (np.concatenate(rows), np.concatenate(cols))),
                shape=(N, N)).tocsc()
            rhs = np.concatenate([-F1, -F2, [-F3]])
            try:
                step = spla.splu(J).solve(rhs)
            except RuntimeError:
                ok = False
                break
            if not np.all(np.isfinite(step)):
                ok = False
                break
            vv = vv + step[:M]
            if k:
                ll = ll + step[M:M + k]
            mm = max(mm + step[M + k], 1e-300)
        if not ok:
            return None
        changed = False
        if k and np.min(ll) < -1e-10 * (1.0 + float(np.max(np.abs(ll)))):
            active[act[ll < 0]] = False
            changed = True
        if pos.size:
            resid = (vv[pos] - vv[neg]) - b
            violated = resid > 1e-11 * (1.0 + b)
            violated &= ~active
            if violated.any():
                active |= violated
                changed = True
        if changed:
            continue
        lam_full = np.zeros(pos.size)
        if k:
            lam_full[act] = np.maximum(ll, 0.0)
        return vv, lam_full, mm
    return None


def solve_ball_program(c, dvec, r2, pos, neg, b, *, max_iter=100,
                       accept_gap=1e-7, accept_feas=1e-8) -> BallProgramResult:
    """Interior-point solve followed by an active-set KKT polish.

    Raises :class:`SolverConvergenceError` if the certified relative duality
    gap exceeds ``accept_gap`` or primal feasibility cannot be restored to
    ``accept_feas``.
    """
    c = np.asarray(c, dtype=float)
    dvec = np.asarray(dvec, dtype=float)
    pos = np.asarray(pos, dtype=np.int64)
    neg = np.asarray(neg, dtype=np.int64)
    b_orig = np.asarray(b, dtype=float)
    M = c.size
    m = pos.size
    r2_orig = float(r2)
    if r2_orig <= 0:
        raise ValueError("r2 must be positive")
    if np.any(b_orig < 0):
        raise ValueError("difference bounds must be nonnegative")
    if np.any(dvec < 0):
        raise ValueError("ball diagonal must be nonnegative")

    # measure v in ball radii: keeps the ball dual O(1) at every delta
    vscale = np.sqrt(r2_orig)
    b = b_orig / vscale
    r2 = 1.0

    cscale = max(1.0, float(np.max(np.abs(c))) if M else 1.0)
    cs = c / cscale
    bscale = max(float(b.max()) if m else 0.0, 1.0)

    v = np.zeros(M)
    s = np.maximum(b, 0.05 * bscale) if m else np.zeros(0)
    lam = np.clip(1.0 / s, 1e-6, 1e6) if m else np.zeros(0)
    s_q = r2
    mu = 1.0 / r2

    best = None
    stall = 0
    prev_measure = np.inf
    kkt = _KKT(M, pos, neg, dvec)

    it = 0
    for it in range(1, max_iter + 1):
        u = dvec * v
        r_d = -cs + 2.0 * mu * u
        if m:
            np.add.at(r_d, pos, lam)
            np.add.at(r_d, neg, -lam)
            r_pl = v[pos] - v[neg] + s - b
        else:
            r_pl = np.zeros(0)
        r_pq = float(v @ u) + s_q - r2
        comp = (float(s @ lam) if m else 0.0) + s_q * mu
        nu = comp / (m + 1)
        obj = float(cs @ v)
        gap_rel = comp / (1.0 + abs(obj))
        pinf = max(float(np.max(np.abs(r_pl))) / (1.0 + bscale) if m else 0.0,
                   abs(r_pq) / (1.0 + r2))
        dscale = 1.0 + (float(np.max(lam)) if m else 0.0) + 2.0 * mu * float(
            np.max(np.abs(u)) if M else 0.0)
        dinf = float(np.max(np.abs(r_d))) / dscale

        measure = max(gap_rel, pinf, dinf)
        if best is None or measure < best[0]:
            best = (measure, v.copy(), lam.copy(), mu, gap_rel, pinf, dinf)
        if (gap_rel <= 1e-10 and pinf <= 1e-9 and dinf <= 1e-8) \
                or gap_rel <= 1e-13:
            break
        # infeasible starts can grind slowly for a stretch before superlinear
        # convergence kicks in; only give up on a long run of no progress
        if measure > 0.97 * prev_measure:
            stall += 1
            if stall >= 15 and it >= 30:
                break
        else:
            stall = 0
        prev_measure = measure

        w = lam / s if m else np.zeros(0)
        beta = 4.0 * mu / s_q
        reg = 1e-12 * (1.0 + 2.0 * mu * float(dvec.max() if M else 0.0)
                       + (float(w.max()) if m else 0.0))
        for _ in range(4):
            try:
                kkt.factor(mu, w, reg)
                xu = kkt.solve(u)
                denom = 1.0 + beta * float(u @ xu)
                if np.isfinite(denom) and denom > 0:
                    break
            except np.linalg.LinAlgError:
                pass
            reg *= 1e3
        else:
            break  # fall through to polish from the best iterate

        def newton(rc_l, rc_q):
            rhs = -r_d - (2.0 * (rc_q + mu * r_pq) / s_q) * u
            if m:
                np.add.at(rhs, pos, -(rc_l + lam * r_pl) / s)
                np.add.at(rhs, neg, (rc_l + lam * r_pl) / s)
            x0 = kkt.solve(rhs)
            dv = x0 - (beta * float(u @ x0) / denom) * xu
            if m:
                Adv = dv[pos] - dv[neg]
                ds = -r_pl - Adv
                dlam = (rc_l - lam * ds) / s
            else:
                ds = np.zeros(0)
                dlam = np.zeros(0)
            ds_q = -r_pq - 2.0 * float(u @ dv)
            dmu = (rc_q - mu * ds_q) / s_q
            return dv, ds, dlam, ds_q, dmu

        # the linearized ball does not control step length by itself: cap the
        # step so the quadratic residual cannot blow up along ball-free
        # directions, and cap the growth of the ball dual
        trust = 8.0 * r2

        def cap_primal(alpha, dv):
            dquad = float(dv @ (dvec * dv))
            if dquad > trust:
                alpha = min(alpha, np.sqrt(trust / dquad))
            return alpha

        def cap_dual(alpha, dmu):
            if dmu > 0:
                alpha = min(alpha, (9.0 * mu + 1.0) / dmu)
            return alpha

        rc_l = -lam * s if m else np.zeros(0)
        rc_q = -mu * s_q
        dv_a, ds_a, dlam_a, ds_q_a, dmu_a = newton(rc_l, rc_q)
        ap = min(1.0, _alpha_to_boundary(s, ds_a) if m else np.inf,
                 -s_q / ds_q_a if ds_q_a < 0 else np.inf)
        ap = cap_primal(ap, dv_a)
        ad = min(1.0, _alpha_to_boundary(lam, dlam_a) if m else np.inf,
                 -mu / dmu_a if dmu_a < 0 else np.inf)
        ad = cap_dual(ad, dmu_a)
        comp_aff = (float((s + ap * ds_a) @ (lam + ad * dlam_a)) if m else 0.0) \
            + (s_q + ap * ds_q_a) * (mu + ad * dmu_a)
        sigma = min(0.999, max(1e-8, (max(comp_aff, 0.0) / comp) ** 3))

        rc_l = sigma * nu - lam * s - ds_a * dlam_a if m else np.zeros(0)
        rc_q = sigma * nu - mu * s_q - ds_q_a * dmu_a
        dv, ds, dlam, ds_q, dmu = newton(rc_l, rc_q)

        gamma = 0.9995 if gap_rel < 1e-6 else (0.999 if gap_rel < 1e-3 else 0.99)
        ap = min(1.0, gamma * (_alpha_to_boundary(s, ds) if m else np.inf),
                 gamma * (-s_q / ds_q) if ds_q < 0 else np.inf)
        ap = cap_primal(ap, dv)
        ad = min(1.0, gamma * (_alpha_to_boundary(lam, dlam) if m else np.inf),
                 gamma * (-mu / dmu) if dmu < 0 else np.inf)
        ad = cap_dual(ad, dmu)
        if not (np.isfinite(ap) and np.isfinite(ad)):
            break
        v = v + ap * dv
        if m:
            s = s + ap * ds
            lam = lam + ad * dlam
        s_q = s_q + ap * ds_q
        mu = mu + ad * dmu

    last_iterate = (v, lam, mu)
    _, v, lam, mu, gap_rel, pinf, dinf = best

    gap_best, viol_best, v_best = _certify(cs, dvec, r2, pos, neg, b,
                                           v, lam, mu, bscale)
    for start in ((v, lam, mu), last_iterate):
        polished = _polish(cs, dvec, r2, pos, neg, b, *start)
        if polished is None:
            continue
        gap_pol, viol_pol, v_pol = _certify(cs, dvec, r2, pos, neg, b,
                                            *polished, bscale)
        if max(gap_pol, viol_pol) < max(gap_best, viol_best):
            v_best = v_pol
            _, lam, mu = polished
            gap_best, viol_best = gap_pol, viol_pol
        if gap_best <= accept_gap and viol_best <= max(accept_feas, 1e-9):
            break
    v = v_best

    converged = gap_best <= accept_gap and viol_best <= max(accept_feas, 1e-9)
    if not converged:
        raise SolverConvergenceError(
            f"could not certify optimality: relative duality-gap bound "
            f"{gap_best:.3e}, feasibility violation {viol_best:.3e} after "
            f"{it} iterations",
            gap=gap_best, primal_resid=viol_best, dual_resid=dinf)

    v_out = v * vscale
    return BallProgramResult(
        v=v_out, objective=float(c @ v_out),
        lam=lam * cscale / vscale, mu=mu * cscale / (vscale * vscale),
        gap=gap_best, primal_resid=viol_best, dual_resid=dinf,
        iterations=it, converged=True)
