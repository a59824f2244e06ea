"""Linear and mixed-integer programs behind one interface.

Two backends share the same contract:

``"highs"``
    scipy's HiGHS bindings (``linprog`` / ``milp``). Default, fast.
``"simplex"``
    the dense two-phase simplex and best-bound branch-and-bound in
    :mod:`druc.simplex`. Self-contained, meant for small models and for
    cross-checking the default backend.

Duals follow the convention ``dual[i] = d objective / d rhs[i]`` for every
constraint sense.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.optimize import Bounds, LinearConstraint, linprog, milp

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration_limit"

LE, EQ, GE = "<=", "==", ">="

INT_TOL = 1e-6


@dataclass(frozen=True)
class LinearProgram:
    """``minimize c @ x + offset`` subject to ``A x (sense) b`` and bounds."""

    c: np.ndarray
    A: sp.csr_matrix
    senses: tuple[str, ...]
    b: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    integer: np.ndarray
    offset: float = 0.0
    names: tuple[str, ...] | None = None

    @classmethod
    def build(
        cls,
        c,
        A=None,
        senses=(),
        b=(),
        lower=None,
        upper=None,
        integer=None,
        offset: float = 0.0,
        names=None,
    ) -> "LinearProgram":
        c = np.asarray(c, dtype=float)
        n = c.size
        if A is None:
            A = sp.csr_matrix((0, n))
        A = sp.csr_matrix(A, dtype=float)
        b = np.asarray(b, dtype=float).reshape(-1)
        if isinstance(senses, str):
            senses = (senses,) * A.shape[0]
        senses = tuple(senses)
        lower = np.zeros(n) if lower is None else np.broadcast_to(np.asarray(lower, float), (n,)).copy()
        upper = np.full(n, np.inf) if upper is None else np.broadcast_to(np.asarray(upper, float), (n,)).copy()
        integer = np.zeros(n, bool) if integer is None else np.broadcast_to(np.asarray(integer, bool), (n,)).copy()
        lp = cls(c, A, senses, b, lower, upper, integer, float(offset), None if names is None else tuple(names))
        lp.validate()
        return lp

    @property
    def num_vars(self) -> int:
        return self.c.size

    @property
    def num_rows(self) -> int:
        return self.A.shape[0]

    def validate(self) -> None:
        n = self.c.size
        if self.A.shape != (len(self.senses), n) or self.b.size != len(self.senses):
            raise ValueError(
                f"inconsistent dimensions: A {self.A.shape}, {len(self.senses)} senses, {self.b.size} rhs, {n} vars"
            )
        if self.lower.size != n or self.upper.size != n or self.integer.size != n:
            raise ValueError("bound/integrality vectors must match the number of variables")
        bad = set(self.senses) - {LE, EQ, GE}
        if bad:
            raise ValueError(f"unknown constraint sense(s) {sorted(bad)}")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.A.data)) and np.all(np.isfinite(self.b))):
            raise ValueError("objective, matrix and rhs must be finite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound above upper bound")

    def with_bounds(self, lower: np.ndarray, upper: np.ndarray) -> "LinearProgram":
        return LinearProgram(
            self.c, self.A, self.senses, self.b, lower, upper, self.integer, self.offset, self.names
        )

    def with_rhs(self, b: np.ndarray) -> "LinearProgram":
        return LinearProgram(
            self.c, self.A, self.senses, np.asarray(b, float), self.lower, self.upper, self.integer, self.offset, self.names
        )

    def relaxed(self) -> "LinearProgram":
        return LinearProgram(
            self.c, self.A, self.senses, self.b, self.lower, self.upper,
            np.zeros_like(self.integer), self.offset, self.names,
        )

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.offset

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint or bound violation at ``x``."""
        ax = self.A @ x
        worst = 0.0
        for i, s in enumerate(self.senses):
            r = ax[i] - self.b[i]
            if s == LE:
                worst = max(worst, r)
            elif s == GE:
                worst = max(worst, -r)
            else:
                worst = max(worst, abs(r))
        worst = max(worst, float(np.max(self.lower - x, initial=0.0)), float(np.max(x - self.upper, initial=0.0)))
        return worst


@dataclass
class SolveResult:
    status: str
    x: np.ndarray | None = None
    objective: float = math.nan
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    nodes: int = 0
    # branch-and-bound only: LP bounds of nodes closed without branching
    fathomed_bounds: list[float] = field(default_factory=list)
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class SolverError(RuntimeError):
    def __init__(self, message: str, result: SolveResult | None = None):
        super().__init__(message)
        self.result = result


def _split_rows(lp: LinearProgram):
    senses = np.array(lp.senses, dtype=object)
    le = np.flatnonzero(senses == LE)
    ge = np.flatnonzero(senses == GE)
    eq = np.flatnonzero(senses == EQ)
    return le, ge, eq


def _highs_lp(lp: LinearProgram) -> SolveResult:
    le, ge, eq = _split_rows(lp)
    A = lp.A
    ub_rows = np.concatenate([le, ge])
    A_ub = sp.vstack([A[le], -A[ge]], format="csr") if ub_rows.size else None
    b_ub = np.concatenate([lp.b[le], -lp.b[ge]]) if ub_rows.size else None
    A_eq = A[eq] if eq.size else None
    b_eq = lp.b[eq] if eq.size else None
    bounds = np.column_stack([
        np.where(np.isfinite(lp.lower), lp.lower, -np.inf),
        np.where(np.isfinite(lp.upper), lp.upper, np.inf),
    ])
    res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status == 2:
        return SolveResult(INFEASIBLE, message=res.message)
    if res.status == 3:
        return SolveResult(UNBOUNDED, message=res.message)
    if res.status == 1:
        return SolveResult(ITERATION_LIMIT, message=res.message)
    if res.status != 0:
        raise SolverError(f"HiGHS failed: {res.message}")
    duals = np.zeros(lp.num_rows)
    if ub_rows.size:
        m = res.ineqlin.marginals
        duals[le] = m[: le.size]
        duals[ge] = -m[le.size:]
    if eq.size:
        duals[eq] = res.eqlin.marginals
    rc = res.lower.marginals + res.upper.marginals
    return SolveResult(OPTIMAL, res.x, float(res.fun) + lp.offset, duals, rc, message=res.message)


def _highs_milp(lp: LinearProgram, time_limit: float | None = None) -> SolveResult:
    constraints = []
    if lp.num_rows:
        lo = np.full(lp.num_rows, -np.inf)
        hi = np.full(lp.num_rows, np.inf)
        for i, s in enumerate(lp.senses):
            if s in (LE, EQ):
                hi[i] = lp.b[i]
            if s in (GE, EQ):
                lo[i] = lp.b[i]
        constraints.append(LinearConstraint(lp.A, lo, hi))
    options = {"mip_rel_gap": 0.0}
    if time_limit is not None:
        options["time_limit"] = time_limit
    res = milp(
        lp.c,
        constraints=constraints,
        integrality=lp.integer.astype(int),
        bounds=Bounds(lp.lower, lp.upper),
        options=options,
    )
    if res.status == 2:
        return SolveResult(INFEASIBLE, message=res.message)
    if res.status == 3:
        return SolveResult(UNBOUNDED, message=res.message)
    if res.status == 1:
        x = res.x if res.x is not None else None
        obj = float(res.fun) + lp.offset if x is not None else math.nan
        return SolveResult(ITERATION_LIMIT, x, obj, message=res.message)
    if res.status != 0:
        raise SolverError(f"HiGHS failed: {res.message}")
    x = np.asarray(res.x, float).copy()
    x[lp.integer] = np.round(x[lp.integer])
    return SolveResult(OPTIMAL, x, lp.objective(x), message=res.message)


BACKENDS = ("highs", "simplex")


def solve_lp(lp: LinearProgram, backend: str = "highs") -> SolveResult:
    """Solve the continuous program; integrality flags must be clear."""
    if lp.integer.any():
        raise ValueError("solve_lp got integrality flags; use solve_milp")
    if backend == "highs":
        return _highs_lp(lp)
    if backend == "simplex":
        from druc.simplex import simplex_solve

        return simplex_solve(lp)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def solve_milp(lp: LinearProgram, backend: str = "highs", node_limit: int = 100_000) -> SolveResult:
    """Solve with integrality on flagged variables (absolute tolerance 1e-6)."""
    if backend == "highs":
        return _highs_milp(lp)
    if backend == "simplex":
        from druc.simplex import branch_and_bound

        return branch_and_bound(lp, node_limit=node_limit)
    raise ValueError(f"unknown backend {backend!r}; expected one of {BACKENDS}")


def _fmt(v: float) -> str:
    return repr(float(v))


def write_lp(lp: LinearProgram, path: str | Path) -> Path:
    """Dump the model in CPLEX LP text format for cross-checking elsewhere."""
    path = Path(path)
    names = lp.names or tuple(f"x{j}" for j in range(lp.num_vars))

    def expr(coeffs) -> str:
        terms = [f"{'+' if a >= 0 else '-'} {_fmt(abs(a))} {names[j]}" for j, a in coeffs if a != 0]
        return " ".join(terms) if terms else "0 " + names[0]

    lines = ["\\ written by druc", "Minimize", f" obj: {expr(enumerate(lp.c))}"]
    if lp.offset:
        lines[-1] += f" + {_fmt(lp.offset)} __const"
    lines.append("Subject To")
    A = lp.A.tocsr()
    op = {LE: "<=", GE: ">=", EQ: "="}
    for i in range(lp.num_rows):
        row = A.getrow(i)
        lines.append(f" r{i}: {expr(zip(row.indices, row.data))} {op[lp.senses[i]]} {_fmt(lp.b[i])}")
    lines.append("Bounds")
    for j in range(lp.num_vars):
        lo, hi = lp.lower[j], lp.upper[j]
        lo_s = "-inf" if not np.isfinite(lo) else _fmt(lo)
        hi_s = "+inf" if not np.isfinite(hi) else _fmt(hi)
        lines.append(f" {lo_s} <= {names[j]} <= {hi_s}")
    if lp.offset:
        lines.append(" __const = 1")
    ints = [names[j] for j in np.flatnonzero(lp.integer)]
    if ints:
        lines.append("General")
        lines.extend(f" {n}" for n in ints)
    lines.append("End")
    path.write_text("\n".join(lines) + "\n")
    return path
