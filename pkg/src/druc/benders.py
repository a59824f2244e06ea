"""Benders decomposition for KL distributionally robust unit commitment.

Master problem (MILP) over the commitment ``x``, the dual pair ``(mu, zeta)``
of the KL ball and an epigraph variable ``theta``::

    min  c.x + mu + rho*zeta + theta
    s.t. x feasible commitment,  Qref - mu <= kmax*zeta,
         theta >= R_j + alpha_j.(u - u_j) + beta_j (zeta - zeta_j) + gamma_j (mu - mu_j)

where ``R(x, zeta, mu) = sum_w pi_w zeta exp((Q(x, xi_w) - mu)/zeta - 1)``.
Subproblems are the per-scenario dispatch LPs; their copy-constraint duals
give ``dQ/du`` and the chain rule gives the cut. ``R`` is jointly convex, so
every cut is a global under-estimator.

With ``rho == 0`` (or a single scenario) the worst case is the nominal
expectation and the loop runs plain L-shaped cuts on ``theta >= E[Q]``.

Two things keep the loop short on desk-scale fleets (both optional):

* the master carries a copy of each scenario's dispatch whose cost bounds
  the recourse from below (see ``_Master``); tangent cuts alone learn
  capacity shortfalls one unit-hour at a time;
* each robust cut is taken at the ``(mu, zeta)`` pair that is optimal for
  the iterate's schedule, so one cut prices that schedule exactly.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from druc.ambiguity import AmbiguitySet, optimal_mu, worst_case_dual
from druc.lp import GE, LE, LinearProgram, SolverError, solve_lp, solve_milp, write_lp
from druc.model import (
    CommitmentSchedule,
    SystemConfig,
    build_first_stage,
    dispatch_model,
    recourse_upper_bound,
)

log = logging.getLogger(__name__)

TOL = 1e-4
MAX_ITERS = 500
KMAX = 50.0
ZETA_MIN = 1e-8
EXP_CAP = 700.0
TANGENT_CAP = 12.0


@dataclass(frozen=True)
class BendersCut:
    u: np.ndarray  # flattened commitment at the iterate
    mu: float
    zeta: float
    alpha: np.ndarray  # dR/du
    beta: float  # dR/dzeta
    gamma: float  # dR/dmu
    value: float  # R at (u, zeta, mu)
    # the zeta at which the tangent was taken, when the iterate itself overflowed
    zeta_tangent: float | None = None

    def __call__(self, u, mu: float, zeta: float) -> float:
        z0 = self.zeta if self.zeta_tangent is None else self.zeta_tangent
        return float(
            self.value
            + self.alpha @ (np.ravel(u) - self.u)
            + self.beta * (zeta - z0)
            + self.gamma * (mu - self.mu)
        )


@dataclass
class BendersOptions:
    tol: float = TOL
    max_iters: int = MAX_ITERS
    kmax: float = KMAX
    zeta_min: float = ZETA_MIN
    exp_cap: float = EXP_CAP
    tangent_cap: float = TANGENT_CAP
    backend: str = "highs"
    # reproduce the printed cut conventions instead of the derivative-consistent ones
    printed_pairing: bool = False
    printed_alpha: bool = False
    # guard reference from the recourse at x = 0 instead of a provably valid one
    zero_schedule_guard: bool = False
    time_limit: float | None = None
    dump_dir: Path | None = None
    # copy of each scenario dispatch in the master; bounds the recourse from below
    recourse_bound: bool = True
    # take each cut at the dual pair that is optimal for the iterate's schedule
    inner_optimal_cuts: bool = True


@dataclass
class TraceRow:
    iteration: int
    lb: float
    ub: float
    gap: float
    zeta: float
    mu: float


@dataclass
class BendersState:
    cuts: list = field(default_factory=list)
    ub: float = math.inf
    lb: float = -math.inf
    iteration: int = 1
    q_max: float = math.nan
    q_ref: float = math.nan
    kmax: float = KMAX
    zeta_min: float = ZETA_MIN
    zeta_max: float = math.inf
    mu_lo: float = -math.inf
    mu_hi: float = math.inf
    tol: float = TOL
    robust: bool = True
    incumbent: CommitmentSchedule | None = None
    incumbent_dual: tuple[float, float] = (math.nan, math.nan)
    trace: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return relative_gap(self.ub, self.lb)


def relative_gap(ub: float, lb: float) -> float:
    if not (math.isfinite(ub) and math.isfinite(lb)):
        return math.inf
    return (ub - lb) / max(1.0, abs(ub))


class BendersError(RuntimeError):
    def __init__(self, message: str, trace: list, gap: float, state: BendersState | None = None):
        super().__init__(message)
        self.trace = trace
        self.gap = gap
        self.state = state


@dataclass
class MasterSolution:
    schedule: CommitmentSchedule
    mu: float
    zeta: float
    theta: float
    objective: float
    guard_slack: float


@dataclass
class SubproblemResult:
    q: np.ndarray  # per-scenario recourse cost
    grad_u: np.ndarray  # (S, G*H) dQ/du per scenario
    cut: BendersCut
    r_value: float
    ub_candidate: float


def _is_robust(amb: AmbiguitySet) -> bool:
    return amb.rho > 0.0 and amb.nominal.size > 1


def init(cfg: SystemConfig, amb: AmbiguitySet, options: BendersOptions | None = None) -> BendersState:
    """Recourse at x = 0 fixes the scale; bounds on (mu, zeta) follow from it."""
    options = options or BendersOptions()
    model = dispatch_model(cfg)
    support = amb.nominal.support
    if support.shape[1] != cfg.horizon:
        raise ValueError(f"scenarios have {support.shape[1]} hours, fleet horizon is {cfg.horizon}")
    zero = np.zeros(cfg.shape)
    q0 = np.array([model.solve(zero, xi, options.backend).cost for xi in support])
    state = BendersState(q_max=float(q0.max()), tol=options.tol, zeta_min=options.zeta_min)
    state.robust = _is_robust(amb)
    if not state.robust:
        return state
    pi = amb.nominal.probs
    q_hi = np.array([recourse_upper_bound(cfg, xi) for xi in support])
    q_lo = np.array([_relaxed_lower_bound(cfg, xi, options.backend) for xi in support])
    kmax = options.kmax
    # at the optimum every exponent is log(P*/P_o) + 1 <= 1 + log(1/pi_w)
    needed = 1.0 + math.log(1.0 / pi.min())
    if kmax < needed:
        log.warning("kmax %.3g below %.3g; raising it so the guard cannot cut off the optimum", kmax, needed)
        kmax = needed
    state.kmax = kmax
    state.q_ref = state.q_max if options.zero_schedule_guard else float(q_lo.max())
    spread = float(q_hi.max() - pi @ q_lo)
    state.zeta_max = max(1.0, spread / amb.rho)
    state.mu_lo = float(q_lo.min()) - state.zeta_max
    state.mu_hi = float(q_hi.max())
    log.info(
        "init: Q^M=%.6g guard ref=%.6g kmax=%.3g zeta<=%.6g mu in [%.6g, %.6g]",
        state.q_max, state.q_ref, kmax, state.zeta_max, state.mu_lo, state.mu_hi,
    )
    if not options.zero_schedule_guard:
        log.info("LB is the full master objective, and the guard uses a valid reference cost")
    return state


def _relaxed_lower_bound(cfg: SystemConfig, xi, backend: str) -> float:
    """min over u in [0,1] of the recourse cost: a lower bound for any commitment."""
    model = dispatch_model(cfg)
    lp = model.lp(np.zeros(cfg.shape), xi)
    keep = np.setdiff1d(np.arange(lp.num_rows), model._copy_rows)
    lower = lp.lower.copy()
    upper = lp.upper.copy()
    lower[model.i_uh:] = 0.0
    upper[model.i_uh:] = 1.0
    relaxed = LinearProgram(
        lp.c, lp.A[keep], tuple(lp.senses[i] for i in keep), lp.b[keep], lower, upper, lp.integer,
    )
    res = solve_lp(relaxed, backend)
    if not res.optimal:
        raise SolverError(f"relaxed recourse LP: {res.status}", res)
    return max(0.0, res.objective)


class _Master:
    """Incrementally assembled master MILP.

    With ``recourse_bound`` the master also carries, per scenario, a copy of
    the dispatch LP whose cost ``l_w`` bounds ``Q(u, xi_w)`` from below (and
    equals it at binary ``u`` when the row is tight). By weak duality ``mu + rho*zeta + R >= E_P[Q]`` for every
    ``P`` in the ambiguity set and every ``(mu, zeta)``, so the rows
    ``theta (+ mu + rho*zeta) >= sum_w p_w l_w`` are valid for any such ``p``.
    They tell the master about capacity shortfalls that tangent cuts at a
    committed unit cannot see.
    """

    def __init__(self, cfg: SystemConfig, amb: AmbiguitySet, state: BendersState, recourse_bound: bool = True):
        fs = build_first_stage(cfg)
        self.fs = fs
        self.nx = fs.num_vars
        self.nu = cfg.num_units * cfg.horizon
        self.robust = state.robust
        self.rho = amb.rho
        if self.robust:
            self.i_mu, self.i_zeta, self.i_theta = self.nx, self.nx + 1, self.nx + 2
            n = self.nx + 3
        else:
            self.i_theta = self.nx
            n = self.nx + 1
        G, H = cfg.shape
        S = amb.nominal.size
        self.recourse_bound = recourse_bound
        self.i_aux = n
        self.block = G * H + 2 * H
        if recourse_bound:
            self.i_ell = n + S * self.block
            n = self.i_ell + S
        self.n = n
        c = np.zeros(n)
        c[: self.nx] = fs.c
        c[self.i_theta] = 1.0
        lower = np.zeros(n)
        upper = np.ones(n)
        upper[self.i_theta] = np.inf
        upper[self.i_aux:] = np.inf
        integer = np.zeros(n, bool)
        integer[: self.nx] = True
        rows = [sp.hstack([fs.A, sp.csr_matrix((fs.A.shape[0], n - self.nx))], format="csr")]
        senses = list(fs.senses)
        rhs = list(fs.b)
        if self.robust:
            c[self.i_mu] = 1.0
            c[self.i_zeta] = amb.rho
            lower[self.i_mu], upper[self.i_mu] = state.mu_lo, state.mu_hi
            lower[self.i_zeta], upper[self.i_zeta] = state.zeta_min, state.zeta_max
            guard = sp.csr_matrix(([-1.0, -state.kmax], ([0, 0], [self.i_mu, self.i_zeta])), shape=(1, n))
            rows.append(guard)
            senses.append(LE)
            rhs.append(-state.q_ref)
            self.guard_row = len(senses) - 1
        self.c, self.lower, self.upper, self.integer = c, lower, upper, integer
        self.rows, self.senses, self.rhs = rows, senses, rhs
        self._weights: list[np.ndarray] = []
        if recourse_bound:
            for w, xi in enumerate(amb.nominal.support):
                self._add_dispatch_block(cfg, w, xi)
            self.add_weight_row(amb.nominal.probs)
        names = [f"u_{g}_{h}" for g in range(G) for h in range(H)]
        names += [f"v_{g}_{h}" for g in range(G) for h in range(H)]
        names += ["mu", "zeta", "theta"] if self.robust else ["theta"]
        if recourse_bound:
            for w in range(S):
                names += [f"p{w}_{g}_{h}" for g in range(G) for h in range(H)]
                names += [f"pc{w}_{h}" for h in range(H)] + [f"ps{w}_{h}" for h in range(H)]
            names += [f"ell_{w}" for w in range(S)]
        self.names = tuple(names)

    def _add_dispatch_block(self, cfg: SystemConfig, w: int, xi) -> None:
        # the dispatch LP with its copy variables u_hat replaced by the master's u
        model = dispatch_model(cfg)
        keep = np.setdiff1d(np.arange(model.A.shape[0]), model._copy_rows)
        A = model.A[keep].tocoo()
        base = self.i_aux + w * self.block
        cols = np.where(A.col >= model.i_uh, A.col - model.i_uh, base + A.col)
        block = sp.csr_matrix((A.data, (A.row, cols)), shape=(keep.size, self.n))
        rhs = model.rhs(np.zeros(cfg.shape), xi)[keep]
        # ell_w >= dispatch cost
        cost = np.zeros(self.n)
        cost[base:base + self.block] = -model.c[: self.block]
        cost[self.i_ell + w] = 1.0
        self.rows += [block, sp.csr_matrix(cost)]
        self.senses += [model.senses[i] for i in keep] + [GE]
        self.rhs += list(rhs) + [0.0]

    def add_weight_row(self, probs, tol: float = 1e-6) -> bool:
        """``theta (+ mu + rho*zeta) >= sum_w probs_w ell_w``; skipped if already present."""
        if not self.recourse_bound:
            return False
        probs = np.asarray(probs, float)
        if any(np.max(np.abs(probs - p)) <= tol for p in self._weights):
            return False
        self._weights.append(probs.copy())
        row = np.zeros(self.n)
        row[self.i_theta] = 1.0
        if self.robust:
            row[self.i_mu] = 1.0
            row[self.i_zeta] = self.rho
        row[self.i_ell:self.i_ell + probs.size] = -probs
        self.rows.append(sp.csr_matrix(row))
        self.senses.append(GE)
        self.rhs.append(0.0)
        return True

    def add_cut(self, cut: BendersCut) -> None:
        row = np.zeros(self.n)
        row[: self.nu] = -cut.alpha
        row[self.i_theta] = 1.0
        rhs = cut.value - cut.alpha @ cut.u
        if self.robust:
            z0 = cut.zeta if cut.zeta_tangent is None else cut.zeta_tangent
            row[self.i_mu] = -cut.gamma
            row[self.i_zeta] = -cut.beta
            rhs -= cut.gamma * cut.mu + cut.beta * z0
        self.rows.append(sp.csr_matrix(row))
        self.senses.append(GE)
        self.rhs.append(rhs)

    def lp(self) -> LinearProgram:
        A = sp.vstack(self.rows, format="csr")
        return LinearProgram(
            self.c, A, tuple(self.senses), np.array(self.rhs), self.lower, self.upper, self.integer,
            names=self.names,
        )


def _master_solution(master: _Master, cfg: SystemConfig, x: np.ndarray, objective: float, state) -> MasterSolution:
    fs = master.fs
    u = np.round(x[: master.nu]).reshape(cfg.shape)
    sched = CommitmentSchedule.from_u(u, cfg)
    theta = float(x[master.i_theta])
    if master.robust:
        # the MILP solver honours bounds only to its feasibility tolerance
        mu = min(max(float(x[master.i_mu]), state.mu_lo), state.mu_hi)
        zeta = min(max(float(x[master.i_zeta]), state.zeta_min), state.zeta_max)
        slack = state.kmax * zeta - (state.q_ref - mu)
    else:
        mu, zeta, slack = 0.0, 0.0, math.inf
    obj = sched.cost(cfg) + theta + (mu + master.c[master.i_zeta] * zeta if master.robust else 0.0)
    return MasterSolution(sched, mu, zeta, theta, obj, slack)


def solve_mp(state: BendersState, cfg: SystemConfig, amb: AmbiguitySet,
             options: BendersOptions | None = None, master: _Master | None = None) -> MasterSolution:
    """Solve the master with all cuts in ``state`` and raise LB to its objective."""
    options = options or BendersOptions()
    if master is None:
        master = _Master(cfg, amb, state, options.recourse_bound)
        for cut in state.cuts:
            master.add_cut(cut)
    lp = master.lp()
    if options.dump_dir is not None:
        Path(options.dump_dir).mkdir(parents=True, exist_ok=True)
        write_lp(lp, Path(options.dump_dir) / f"master_{state.iteration:04d}.lp")
    res = solve_milp(lp, options.backend)
    if not res.optimal:
        raise BendersError(
            f"master problem not optimal at iteration {state.iteration}: {res.status} {res.message}",
            state.trace, state.gap, state,
        )
    sol = _master_solution(master, cfg, res.x, res.objective, state)
    if sol.objective < state.lb - 1e-6 * max(1.0, abs(state.lb)):
        log.warning("master objective %.10g dropped below LB %.10g", sol.objective, state.lb)
    state.lb = max(state.lb, sol.objective)
    return sol


def _tangent_cap(pi, options: BendersOptions) -> float:
    # at the optimum every exponent is at most log(1/pi_w); keep headroom above that
    return max(options.tangent_cap, 2.0 + math.log(1.0 / pi.min()))


def _exponential_terms(q, pi, mu, zeta, options: BendersOptions):
    exponent = (q - mu) / zeta - 1.0
    zeta_t = None
    cap = _tangent_cap(pi, options)
    top = exponent.max()
    if top > cap:
        # tangent taken at the zeta that brings the largest exponent to the cap:
        # still a valid under-estimator, it cuts the point off, and its
        # coefficients stay within what the MILP solver can handle
        zeta_t = float((q.max() - mu) / (cap + 1.0))
        level = logging.WARNING if top > options.exp_cap else logging.DEBUG
        log.log(level, "exponent %.4g above %.4g; cut taken at zeta=%.6g", top, cap, zeta_t)
        exponent = (q - mu) / zeta_t - 1.0
    return exponent, zeta_t


def _cut(u: np.ndarray, q: np.ndarray, grads: np.ndarray, mu_f: float, zeta_f: float,
         amb: AmbiguitySet, options: BendersOptions) -> tuple[BendersCut, float]:
    """Aggregated cut at ``(u, mu_f, zeta_f)`` and R there (inf on overflow)."""
    pi = amb.nominal.probs
    if not _is_robust(amb):
        value = float(pi @ q)
        return BendersCut(u.copy(), 0.0, 0.0, pi @ grads, 0.0, 0.0, value), value
    if zeta_f < options.zeta_min:
        raise ValueError(f"zeta {zeta_f} below its floor {options.zeta_min}")
    exponent, zeta_t = _exponential_terms(q, pi, mu_f, zeta_f, options)
    zeta_c = zeta_f if zeta_t is None else zeta_t
    e = np.exp(exponent)
    k = exponent + 1.0
    r_bar = zeta_c * e
    d_zeta = (1.0 - k) * e
    d_mu = -e
    if options.printed_alpha:
        a_bar = (zeta_c * e)[:, None] * grads
    else:
        a_bar = e[:, None] * grads
    value = float(pi @ r_bar)
    beta = float(pi @ d_zeta)
    gamma = float(pi @ d_mu)
    if options.printed_pairing:
        beta, gamma = gamma, beta
    cut = BendersCut(u.copy(), mu_f, zeta_f, pi @ a_bar, beta, gamma, value, zeta_t)
    if zeta_t is None:
        return cut, value
    top = float(((q - mu_f) / zeta_f).max()) - 1.0
    if top > options.exp_cap:
        return cut, math.inf
    return cut, float(pi @ (zeta_f * np.exp((q - mu_f) / zeta_f - 1.0)))


def _scenario_costs(u: np.ndarray, cfg: SystemConfig, amb: AmbiguitySet, backend: str):
    model = dispatch_model(cfg)
    sols = [model.solve(u, xi, backend) for xi in amb.nominal.support]
    return np.array([s.cost for s in sols]), np.array([s.grad_u.ravel() for s in sols])


def solve_sp_all(x_f, mu_f: float, zeta_f: float, cfg: SystemConfig, amb: AmbiguitySet,
                 options: BendersOptions | None = None) -> SubproblemResult:
    """Scenario dispatch LPs at the master iterate and the aggregated cut."""
    options = options or BendersOptions()
    sched = x_f if isinstance(x_f, CommitmentSchedule) else CommitmentSchedule.from_u(x_f, cfg)
    q, grads = _scenario_costs(sched.u, cfg, amb, options.backend)
    cut, r_value = _cut(sched.u.ravel(), q, grads, mu_f, zeta_f, amb, options)
    first = sched.cost(cfg)
    if not _is_robust(amb):
        return SubproblemResult(q, grads, cut, r_value, first + r_value)
    ub = first + mu_f + amb.rho * zeta_f + r_value
    return SubproblemResult(q, grads, cut, r_value, ub)


def solve_sp_inner(x_f, cfg: SystemConfig, amb: AmbiguitySet,
                   options: BendersOptions | None = None) -> tuple[SubproblemResult, float, float, np.ndarray]:
    """Subproblems at ``x_f`` with the cut taken at the (mu, zeta) minimizing
    ``mu + rho*zeta + R(x_f, zeta, mu)``.

    There the (mu, zeta) gradient of that sum vanishes, so the cut bounds the
    master objective at ``x_f`` by its exact worst-case cost for every
    (mu, zeta). Returns the result, the dual pair used and the worst-case
    probabilities at ``x_f``.
    """
    options = options or BendersOptions()
    sched = x_f if isinstance(x_f, CommitmentSchedule) else CommitmentSchedule.from_u(x_f, cfg)
    q, grads = _scenario_costs(sched.u, cfg, amb, options.backend)
    wc = worst_case_dual(q, amb)
    zeta = wc.zeta if math.isfinite(wc.zeta) else options.zeta_min
    zeta = max(zeta, options.zeta_min)
    mu = optimal_mu(q, amb.nominal.probs, zeta)
    cut, r_value = _cut(sched.u.ravel(), q, grads, mu, zeta, amb, options)
    ub = sched.cost(cfg) + mu + amb.rho * zeta + r_value
    return SubproblemResult(q, grads, cut, r_value, ub), mu, zeta, wc.probs


def evaluate_r(cfg: SystemConfig, amb: AmbiguitySet, u, mu: float, zeta: float, backend: str = "highs") -> float:
    """R(x, zeta, mu) at a (possibly fractional) commitment."""
    model = dispatch_model(cfg)
    u = np.asarray(u, float).reshape(cfg.shape)
    q = np.array([model.solve(u, xi, backend).cost for xi in amb.nominal.support])
    if not _is_robust(amb):
        return float(amb.nominal.probs @ q)
    return float(amb.nominal.probs @ (zeta * np.exp((q - mu) / zeta - 1.0)))


@dataclass
class BendersResult:
    schedule: CommitmentSchedule
    total_cost: float
    lower_bound: float
    trace: list
    state: BendersState
    q: np.ndarray  # recourse per scenario at the incumbent
    mu: float
    zeta: float
    wall_time: float

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def gap(self) -> float:
        return relative_gap(self.total_cost, self.lower_bound)


def run(cfg: SystemConfig, amb: AmbiguitySet, tol: float = TOL, options: BendersOptions | None = None,
        **overrides) -> BendersResult:
    """Alternate master and subproblems until the relative gap drops below ``tol``."""
    options = options or BendersOptions()
    for key, value in overrides.items():
        setattr(options, key, value)
    options.tol = tol
    if tol <= 0:
        raise ValueError("tol must be positive")
    started = time.perf_counter()
    state = init(cfg, amb, options)
    master = _Master(cfg, amb, state, options.recourse_bound)
    best_q = None
    while True:
        mp = solve_mp(state, cfg, amb, options, master)
        if state.robust and options.inner_optimal_cuts:
            sub, mu_c, zeta_c, worst = solve_sp_inner(mp.schedule, cfg, amb, options)
            master.add_weight_row(worst)
        else:
            sub = solve_sp_all(mp.schedule, mp.mu, mp.zeta, cfg, amb, options)
            mu_c, zeta_c = mp.mu, mp.zeta
        if sub.ub_candidate < state.ub:
            state.ub = sub.ub_candidate
            state.incumbent = mp.schedule
            state.incumbent_dual = (mu_c, zeta_c)
            best_q = sub.q
        state.cuts.append(sub.cut)
        master.add_cut(sub.cut)
        gap = state.gap
        state.trace.append(TraceRow(state.iteration, state.lb, state.ub, gap, mp.zeta, mp.mu))
        log.debug("iter %d lb=%.10g ub=%.10g gap=%.3g zeta=%.6g mu=%.6g",
                  state.iteration, state.lb, state.ub, gap, mp.zeta, mp.mu)
        if gap < tol:
            break
        if state.iteration >= options.max_iters:
            raise BendersError(
                f"no convergence in {options.max_iters} iterations (gap {gap:.3g})", state.trace, gap, state
            )
        if options.time_limit is not None and time.perf_counter() - started > options.time_limit:
            raise BendersError(f"time limit {options.time_limit}s reached (gap {gap:.3g})", state.trace, gap, state)
        state.iteration += 1
    if state.robust and state.incumbent is not None:
        mu, zeta = state.incumbent_dual
        slack = state.kmax * zeta - (state.q_ref - mu)
        # a point-mass worst case sits on the guard by construction
        if zeta > 10.0 * state.zeta_min and slack <= 1e-9 * max(1.0, abs(state.q_ref)):
            log.warning("guard constraint active at the incumbent; the optimum may be cut off")
    else:
        mu, zeta = state.incumbent_dual
    return BendersResult(
        state.incumbent, state.ub, state.lb, state.trace, state, best_q, mu, zeta,
        time.perf_counter() - started,
    )


def write_trace(trace: list, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "lb", "ub", "gap", "zeta", "mu"])
        for row in trace:
            w.writerow([row.iteration, repr(row.lb), repr(row.ub), repr(row.gap), repr(row.zeta), repr(row.mu)])
    return path


def worst_case_objective(cfg: SystemConfig, amb: AmbiguitySet, schedule: CommitmentSchedule,
                         backend: str = "highs") -> float:
    """First-stage cost plus the exact worst-case expected recourse of ``schedule``."""
    model = dispatch_model(cfg)
    q = np.array([model.solve(schedule.u, xi, backend).cost for xi in amb.nominal.support])
    return schedule.cost(cfg) + worst_case_dual(q, amb).value
