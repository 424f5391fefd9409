"""Transportation matrices via maximum flow.

Given nonnegative row sums p, column sums q with sum(p) = sum(q), and a set
of allowed entries E, find A >= 0 supported on E whose row and column sums
match exactly.  The instance maps onto a max-flow network
source -> rows -> columns -> sink with capacities p_i, infinity, q_j; the
transportation matrix is feasible iff the max flow saturates the source.
"""

from __future__ import annotations

import numpy as np

from .core_data import ValidationError


class MaxFlowInfeasibleError(ValueError):
    """No transportation matrix exists; carries a violated cut certificate."""

    def __init__(self, message, rows=None, cols=None, deficit=None):
        super().__init__(message)
        self.rows = rows
        self.cols = cols
        self.deficit = deficit


class _Dinic:
    """Dinic max flow with float capacities."""

    def __init__(self, n_nodes: int, eps: float):
        self.n = n_nodes
        self.eps = eps
        self.head: list[list[int]] = [[] for _ in range(n_nodes)]
        self.to: list[int] = []
        self.cap: list[float] = []

    def add_edge(self, u: int, v: int, c: float) -> int:
        eid = len(self.to)
        self.head[u].append(eid)
        self.to.append(v)
        self.cap.append(c)
        self.head[v].append(eid + 1)
        self.to.append(u)
        self.cap.append(0.0)
        return eid

    def _bfs(self, s: int, t: int) -> bool:
        self.level = [-1] * self.n
        self.level[s] = 0
        queue = [s]
        for u in queue:
            for eid in self.head[u]:
                v = self.to[eid]
                if self.cap[eid] > self.eps and self.level[v] < 0:
                    self.level[v] = self.level[u] + 1
                    queue.append(v)
        return self.level[t] >= 0

    def _dfs(self, u: int, t: int, pushed: float) -> float:
        if u == t:
            return pushed
        while self.iter[u] < len(self.head[u]):
            eid = self.head[u][self.iter[u]]
            v = self.to[eid]
            if self.cap[eid] > self.eps and self.level[v] == self.level[u] + 1:
                got = self._dfs(v, t, min(pushed, self.cap[eid]))
                if got > self.eps:
                    self.cap[eid] -= got
                    self.cap[eid ^ 1] += got
                    return got
            self.iter[u] += 1
        return 0.0

    def max_flow(self, s: int, t: int) -> float:
        flow = 0.0
        while self._bfs(s, t):
            self.iter = [0] * self.n
            while True:
                pushed = self._dfs(s, t, np.inf)
                if pushed <= self.eps:
                    break
                flow += pushed
        return flow

    def reachable(self, s: int) -> list[bool]:
        seen = [False] * self.n
        seen[s] = True
        queue = [s]
        for u in queue:
            for eid in self.head[u]:
                v = self.to[eid]
                if self.cap[eid] > self.eps and not seen[v]:
                    seen[v] = True
                    queue.append(v)
        return seen


def max_flow_matrix(p, q, allowed, rtol: float = 1e-9) -> np.ndarray:
    """Nonnegative matrix with row sums p, column sums q, support in ``allowed``.

    ``allowed`` is either an iterable of (i, j) index pairs or a boolean
    mask of shape (len(p), len(q)).  Raises
    :class:`MaxFlowInfeasibleError` with a violated-cut certificate when no
    such matrix exists, and :class:`ValidationError` when sum(p) != sum(q).
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim != 1 or q.ndim != 1:
        raise ValidationError("p and q must be vectors")
    if np.any(p < 0) or np.any(q < 0):
        raise ValidationError("p and q must be nonnegative")
    m, n = p.size, q.size
    total = float(p.sum())
    scale = max(total, float(q.sum()), 1e-300)
    if abs(p.sum() - q.sum()) > rtol * scale:
        raise ValidationError(
            f"transportation balance violated: sum(p) = {p.sum()!r}, sum(q) = {q.sum()!r}"
        )

    mask = np.asarray(allowed)
    if mask.dtype == bool and mask.shape == (m, n):
        edges = np.argwhere(mask)
    else:
        edges = np.asarray(list(allowed), dtype=np.int64).reshape(-1, 2)
        if edges.size and (edges[:, 0].max() >= m or edges[:, 1].max() >= n
                           or edges.min() < 0):
            raise ValidationError("allowed indices out of range")

    eps = 1e-14 * max(scale, 1.0)
    net = _Dinic(m + n + 2, eps)
    s, t = m + n, m + n + 1
    row_eids = [net.add_edge(s, i, float(p[i])) for i in range(m)]
    col_eids = [net.add_edge(m + j, t, float(q[j])) for j in range(n)]
    mid_eids = {}
    for i, j in edges:
        mid_eids[(int(i), int(j))] = net.add_edge(int(i), m + int(j), np.inf)

    flow = net.max_flow(s, t)
    if flow < total - rtol * max(scale, 1.0):
        seen = net.reachable(s)
        cut_rows = [i for i in range(m) if seen[i]]
        cut_cols = sorted({int(j) for (i, j) in mid_eids if i in set(cut_rows)})
        supply = float(p[cut_rows].sum()) if cut_rows else 0.0
        capacity = float(q[cut_cols].sum()) if cut_cols else 0.0
        raise MaxFlowInfeasibleError(
            f"infeasible transportation problem: rows {cut_rows} supply "
            f"{supply!r} but their allowed columns {cut_cols} absorb at most "
            f"{capacity!r}",
            rows=cut_rows, cols=cut_cols, deficit=supply - capacity,
        )

    A = np.zeros((m, n))
    for (i, j), eid in mid_eids.items():
        A[i, j] = net.cap[eid ^ 1]  # reverse capacity equals routed flow
    return A
