"""Dense two-phase tableau simplex and best-bound branch-and-bound.

Small and dependency-free beyond numpy. Pricing is Dantzig's rule; after
``BLAND_AFTER`` degenerate pivots the solver switches to Bland's rule for
the rest of the solve, which guarantees termination.
"""

from __future__ import annotations

import heapq
import itertools
import math

import numpy as np

from druc.lp import (
    GE,
    INFEASIBLE,
    INT_TOL,
    ITERATION_LIMIT,
    LE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    SolveResult,
)

BLAND_AFTER = 1000
PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
MAX_PIVOTS = 50_000


class _StandardForm:
    """``min c y  s.t.  M y = r, y >= 0`` with ``x = shift + T y``."""

    def __init__(self, lp: LinearProgram):
        n = lp.num_vars
        cols = []  # (original var, coefficient) per standard column
        shift = np.zeros(n)
        ub_rows = []  # (std column, bound) rows  y_col <= bound
        for j in range(n):
            lo, hi = lp.lower[j], lp.upper[j]
            if np.isfinite(lo):
                shift[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    ub_rows.append((len(cols) - 1, hi - lo))
            elif np.isfinite(hi):
                shift[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        ny = len(cols)
        T = np.zeros((n, ny))
        for k, (j, a) in enumerate(cols):
            T[j, k] = a
        A = lp.A.toarray()
        m0 = lp.num_rows
        m = m0 + len(ub_rows)
        n_slack = sum(1 for s in lp.senses if s != "==") + len(ub_rows)
        M = np.zeros((m, ny + n_slack))
        r = np.zeros(m)
        M[:m0, :ny] = A @ T
        r[:m0] = lp.b - A @ shift
        k = ny
        for i, s in enumerate(lp.senses):
            if s == LE:
                M[i, k] = 1.0
                k += 1
            elif s == GE:
                M[i, k] = -1.0
                k += 1
        for t, (col, bound) in enumerate(ub_rows):
            M[m0 + t, col] = 1.0
            M[m0 + t, k] = 1.0
            r[m0 + t] = bound
            k += 1
        sign = np.where(r < 0, -1.0, 1.0)
        self.M = M * sign[:, None]
        self.r = r * sign
        self.sign = sign
        self.c = np.concatenate([lp.c @ T, np.zeros(n_slack)])
        self.T = T
        self.shift = shift
        self.ny = ny
        self.m0 = m0
        self.offset = float(lp.c @ shift) + lp.offset

    def to_x(self, y: np.ndarray) -> np.ndarray:
        return self.shift + self.T @ y[: self.ny]


class _Tableau:
    def __init__(self, M: np.ndarray, r: np.ndarray):
        m, n = M.shape
        self.m, self.n = m, n
        # columns: structural | artificial | rhs
        self.tab = np.zeros((m, n + m + 1))
        self.tab[:, :n] = M
        self.tab[:, n:n + m] = np.eye(m)
        self.tab[:, -1] = r
        self.basis = np.arange(n, n + m)
        self.degenerate = 0
        self.pivots = 0

    def pivot(self, row: int, col: int) -> None:
        t = self.tab
        t[row] /= t[row, col]
        others = t[:, col].copy()
        others[row] = 0.0
        t -= np.outer(others, t[row])
        self.basis[row] = col
        self.pivots += 1

    def run(self, cost: np.ndarray, allowed: np.ndarray) -> str:
        """Minimize ``cost @ y`` over the current basis; ``allowed`` masks entering columns."""
        t = self.tab
        width = self.n + self.m
        while True:
            if self.pivots > MAX_PIVOTS:
                return ITERATION_LIMIT
            cb = cost[self.basis]
            reduced = cost - cb @ t[:, :width]
            reduced[~allowed] = 0.0
            scale = max(1.0, float(np.max(np.abs(cost))))
            candidates = np.flatnonzero(reduced < -PIVOT_TOL * scale)
            if candidates.size == 0:
                return OPTIMAL
            bland = self.degenerate >= BLAND_AFTER
            col = int(candidates[0]) if bland else int(candidates[np.argmin(reduced[candidates])])
            column = t[:, col]
            pos = np.flatnonzero(column > PIVOT_TOL)
            if pos.size == 0:
                return UNBOUNDED
            ratios = t[pos, -1] / column[pos]
            best = ratios.min()
            ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
            if bland:
                row = int(ties[np.argmin(self.basis[ties])])
            else:
                row = int(ties[np.argmax(column[ties])])
            if best <= FEAS_TOL:
                self.degenerate += 1
            self.pivot(row, col)


def simplex_solve(lp: LinearProgram) -> SolveResult:
    """Solve a continuous ``LinearProgram`` with the in-repo simplex."""
    std = _StandardForm(lp)
    M, r = std.M, std.r
    m, n = M.shape
    if m == 0:
        if np.any(std.c < -PIVOT_TOL):
            return SolveResult(UNBOUNDED)
        y = np.zeros(n)
        x = std.to_x(y)
        return SolveResult(OPTIMAL, x, std.offset, np.zeros(lp.num_rows))
    tab = _Tableau(M, r)
    width = n + m
    phase1 = np.concatenate([np.zeros(n), np.ones(m)])
    allowed = np.ones(width, bool)
    status = tab.run(phase1, allowed)
    if status == ITERATION_LIMIT:
        return SolveResult(ITERATION_LIMIT)
    infeas = float(phase1[tab.basis] @ tab.tab[:, -1])
    if infeas > FEAS_TOL * max(1.0, float(np.max(np.abs(r)))):
        return SolveResult(INFEASIBLE)
    # drive zero-level artificials out where a structural pivot exists;
    # rows where none exists are redundant and keep their artificial at zero
    for row in range(m):
        if tab.basis[row] >= n:
            entries = np.abs(tab.tab[row, :n])
            j = int(np.argmax(entries))
            if entries[j] > PIVOT_TOL:
                tab.pivot(row, j)
    allowed = np.concatenate([np.ones(n, bool), np.zeros(m, bool)])
    cost = np.concatenate([std.c, np.zeros(m)])
    status = tab.run(cost, allowed)
    if status != OPTIMAL:
        return SolveResult(status)
    y = np.zeros(width)
    y[tab.basis] = tab.tab[:, -1]
    y = np.maximum(y, 0.0)
    x = std.to_x(y[:n])
    # duals from the final basis: B^T w = c_B on the full [M | I] system
    full = np.hstack([M, np.eye(m)])
    B = full[:, tab.basis]
    w = np.linalg.solve(B.T, cost[tab.basis])
    duals = (w * std.sign)[: std.m0]
    objective = float(std.c @ y[:n]) + std.offset
    return SolveResult(OPTIMAL, x, objective, duals, nodes=tab.pivots)


def _most_fractional(x: np.ndarray, integer: np.ndarray) -> int | None:
    frac = np.abs(x - np.round(x))
    frac[~integer] = 0.0
    j = int(np.argmax(frac))
    return j if frac[j] > INT_TOL else None


def branch_and_bound(lp: LinearProgram, node_limit: int = 100_000) -> SolveResult:
    """Best-bound branch-and-bound, branching on the most fractional variable."""
    relaxed = lp.relaxed()
    lower = lp.lower.copy()
    upper = lp.upper.copy()
    lower[lp.integer] = np.ceil(lower[lp.integer] - INT_TOL)
    upper[lp.integer] = np.floor(upper[lp.integer] + INT_TOL)
    counter = itertools.count()
    fathomed: list[float] = []

    def solve(lo, hi):
        if np.any(lo > hi):
            return SolveResult(INFEASIBLE)
        return simplex_solve(relaxed.with_bounds(lo, hi))

    root = solve(lower, upper)
    if root.status != OPTIMAL:
        return SolveResult(root.status, nodes=1)
    heap = [(root.objective, next(counter), lower, upper, root)]
    best_x, best_obj = None, math.inf
    nodes = 1
    while heap:
        bound, _, lo, hi, res = heapq.heappop(heap)
        if bound >= best_obj - 1e-9:
            fathomed.append(bound)
            continue
        j = _most_fractional(res.x, lp.integer)
        if j is None:
            x = res.x.copy()
            x[lp.integer] = np.round(x[lp.integer])
            best_x, best_obj = x, lp.objective(x)
            fathomed.append(bound)
            continue
        if nodes >= node_limit:
            heapq.heappush(heap, (bound, next(counter), lo, hi, res))
            status = ITERATION_LIMIT
            return SolveResult(status, best_x, best_obj, nodes=nodes, fathomed_bounds=fathomed,
                               message=f"node limit {node_limit} reached")
        v = res.x[j]
        for child_lo, child_hi in (
            (lo, np.where(np.arange(lo.size) == j, np.floor(v), hi)),
            (np.where(np.arange(lo.size) == j, np.ceil(v), lo), hi),
        ):
            nodes += 1
            child = solve(child_lo, child_hi)
            if child.status == OPTIMAL:
                if child.objective >= best_obj - 1e-9:
                    fathomed.append(child.objective)
                else:
                    heapq.heappush(heap, (child.objective, next(counter), child_lo, child_hi, child))
            elif child.status == UNBOUNDED:
                return SolveResult(UNBOUNDED, nodes=nodes)
    if best_x is None:
        return SolveResult(INFEASIBLE, nodes=nodes, fathomed_bounds=fathomed)
    return SolveResult(OPTIMAL, best_x, best_obj, nodes=nodes, fathomed_bounds=fathomed)
