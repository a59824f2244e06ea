"""Unit-commitment model: fleet data, first-stage commitment constraints,
second-stage dispatch LP, and a brute-force extensive-form oracle.

Index conventions: units ``g = 0..G-1``, hours ``h = 0..H-1`` (hour ``h``
here is hour ``h+1`` of the day). Status before the horizon comes from
``ThermalUnit.initial_on`` and the unit is assumed to sit at ``p_min`` if on.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from druc.lp import EQ, GE, LE, LinearProgram, SolveResult, SolverError, solve_lp

log = logging.getLogger(__name__)

DEFAULT_CURTAILMENT_COST = 1000.0
HORIZON = 24


@dataclass(frozen=True)
class ThermalUnit:
    name: str
    p_min: float
    p_max: float
    t_up: int
    t_down: int
    ramp_up: float
    ramp_down: float
    startup_ramp: float
    shutdown_ramp: float
    cost_linear: float
    cost_fixed: float
    cost_startup: float
    initial_on: bool = False

    def __post_init__(self):
        if not 0 <= self.p_min <= self.p_max:
            raise ValueError(f"{self.name}: need 0 <= p_min <= p_max")
        if self.t_up < 1 or self.t_down < 1:
            raise ValueError(f"{self.name}: minimum up/down times must be >= 1 hour")
        if min(self.ramp_up, self.ramp_down, self.startup_ramp, self.shutdown_ramp) < 0:
            raise ValueError(f"{self.name}: ramp limits must be non-negative")
        # a unit that cannot reach p_min in one hour can never start or stop
        if self.startup_ramp < self.p_min:
            raise ValueError(f"{self.name}: startup_ramp below p_min")
        if self.shutdown_ramp < self.p_min:
            raise ValueError(f"{self.name}: shutdown_ramp below p_min")
        if min(self.cost_linear, self.cost_fixed, self.cost_startup) < 0:
            raise ValueError(f"{self.name}: costs must be non-negative")


@dataclass(frozen=True)
class SystemConfig:
    units: tuple[ThermalUnit, ...]
    curtailment_cost: float = DEFAULT_CURTAILMENT_COST
    horizon: int = HORIZON
    # restores the printed ramp-down constraint that reuses the start-up limit
    ramp_down_uses_startup_limit: bool = False

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        if not self.units:
            raise ValueError("need at least one unit")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        worst = max(u.cost_linear for u in self.units)
        if not self.curtailment_cost > worst:
            raise ValueError(
                f"curtailment_cost {self.curtailment_cost} must exceed the largest linear cost {worst}"
            )

    @property
    def num_units(self) -> int:
        return len(self.units)

    @property
    def shape(self) -> tuple[int, int]:
        return (len(self.units), self.horizon)

    @property
    def capacity(self) -> float:
        return float(sum(u.p_max for u in self.units))

    def initial_status(self) -> np.ndarray:
        return np.array([1.0 if u.initial_on else 0.0 for u in self.units])

    def to_dict(self) -> dict:
        return {
            "curtailment_cost": self.curtailment_cost,
            "horizon": self.horizon,
            "ramp_down_uses_startup_limit": self.ramp_down_uses_startup_limit,
            "units": [asdict(u) for u in self.units],
        }

    @classmethod
    def from_dict(cls, data) -> "SystemConfig":
        if isinstance(data, list):
            records = data
            data = {}
            costs = {r["curtailment_cost"] for r in records if "curtailment_cost" in r}
            if len(costs) > 1:
                raise ValueError("unit records disagree on curtailment_cost")
            if costs:
                data["curtailment_cost"] = costs.pop()
        else:
            records = data["units"]
        names = {f.name for f in fields(ThermalUnit)}
        units = []
        for i, rec in enumerate(records):
            rec = {k: v for k, v in rec.items() if k in names}
            rec.setdefault("name", f"G{i + 1}")
            units.append(ThermalUnit(**rec))
        return cls(
            units=tuple(units),
            curtailment_cost=float(data.get("curtailment_cost", DEFAULT_CURTAILMENT_COST)),
            horizon=int(data.get("horizon", HORIZON)),
            ramp_down_uses_startup_limit=bool(data.get("ramp_down_uses_startup_limit", False)),
        )

    @classmethod
    def load(cls, path: str | Path) -> "SystemConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def default_fleet(horizon: int = HORIZON) -> SystemConfig:
    """Three-unit desk-scale fleet with 1083 MW of aggregate capacity.

    Placeholder parameters in the range of common textbook test systems;
    they are not the fleet behind any published cost figures.
    """
    units = (
        ThermalUnit("base", 150.0, 455.0, 8, 8, 130.0, 130.0, 180.0, 180.0, 16.19, 1000.0, 4500.0, True),
        ThermalUnit("mid", 150.0, 455.0, 8, 8, 130.0, 130.0, 180.0, 180.0, 17.26, 970.0, 5000.0, True),
        ThermalUnit("peaker", 25.0, 173.0, 3, 3, 80.0, 80.0, 80.0, 80.0, 22.26, 370.0, 900.0, False),
    )
    return SystemConfig(units, DEFAULT_CURTAILMENT_COST, horizon)


@dataclass(frozen=True)
class CommitmentSchedule:
    u: np.ndarray  # (G, H) on/off
    v: np.ndarray  # (G, H) start-up

    @classmethod
    def from_u(cls, u, cfg: SystemConfig) -> "CommitmentSchedule":
        u = np.asarray(u, dtype=float).reshape(cfg.shape)
        prev = np.column_stack([cfg.initial_status(), u[:, :-1]])
        v = np.maximum(u - prev, 0.0)
        return cls(u, v)

    @classmethod
    def off(cls, cfg: SystemConfig) -> "CommitmentSchedule":
        return cls.from_u(np.zeros(cfg.shape), cfg)

    def cost(self, cfg: SystemConfig) -> float:
        fixed = np.array([g.cost_fixed for g in cfg.units])
        start = np.array([g.cost_startup for g in cfg.units])
        return float(fixed @ self.u.sum(axis=1) + start @ self.v.sum(axis=1))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.u.ravel(), self.v.ravel()])

    def is_binary(self, tol: float = 1e-9) -> bool:
        both = self.as_vector()
        return bool(np.all(np.minimum(np.abs(both), np.abs(both - 1)) <= tol))

    def violations(self, cfg: SystemConfig, tol: float = 1e-9) -> list[str]:
        """Constraint names the schedule breaks (empty when feasible)."""
        fs = build_first_stage(cfg)
        x = self.as_vector()
        out = []
        if not self.is_binary(tol):
            out.append("binary")
        r = fs.A @ x - fs.b
        for i, s in enumerate(fs.senses):
            if (s == GE and r[i] < -tol) or (s == LE and r[i] > tol):
                out.append(fs.row_names[i])
        return out

    def to_dict(self) -> dict:
        return {"u": self.u.astype(int).tolist(), "v": self.v.astype(int).tolist()}


@dataclass(frozen=True)
class FirstStage:
    """Constraint system over ``x = [u.ravel(), v.ravel()]`` plus its cost."""

    A: sp.csr_matrix
    senses: tuple[str, ...]
    b: np.ndarray
    c: np.ndarray
    row_names: tuple[str, ...]
    shape: tuple[int, int]

    @property
    def num_vars(self) -> int:
        return self.c.size

    def u_index(self, g: int, h: int) -> int:
        return g * self.shape[1] + h

    def v_index(self, g: int, h: int) -> int:
        return self.shape[0] * self.shape[1] + g * self.shape[1] + h

    def as_lp(self) -> LinearProgram:
        n = self.num_vars
        return LinearProgram.build(self.c, self.A, self.senses, self.b, 0.0, 1.0, np.ones(n, bool))


def build_first_stage(cfg: SystemConfig) -> FirstStage:
    """Start-up linking, minimum up time, minimum down time; binaries via bounds."""
    G, H = cfg.shape
    n = 2 * G * H
    u0 = cfg.initial_status()
    rows, cols, vals, senses, rhs, names = [], [], [], [], [], []

    def ui(g, h):
        return g * H + h

    def vi(g, h):
        return G * H + g * H + h

    def add(entries, sense, b, name):
        r = len(senses)
        for j, a in entries:
            rows.append(r)
            cols.append(j)
            vals.append(a)
        senses.append(sense)
        rhs.append(b)
        names.append(name)

    for g, unit in enumerate(cfg.units):
        for h in range(H):
            # v[h] >= u[h] - u[h-1]
            if h == 0:
                add([(vi(g, 0), 1.0), (ui(g, 0), -1.0)], GE, -u0[g], f"startup[{g},{h}]")
            else:
                add([(vi(g, h), 1.0), (ui(g, h), -1.0), (ui(g, h - 1), 1.0)], GE, 0.0, f"startup[{g},{h}]")
            # u[h] - u[h-1] <= u[tau]; tau = h is vacuous
            for tau in range(h + 1, min(h + unit.t_up, H)):
                if h == 0:
                    add([(ui(g, tau), 1.0), (ui(g, 0), -1.0)], GE, -u0[g], f"minup[{g},{h},{tau}]")
                else:
                    add([(ui(g, tau), 1.0), (ui(g, h), -1.0), (ui(g, h - 1), 1.0)], GE, 0.0,
                        f"minup[{g},{h},{tau}]")
            # u[h-1] - u[h] <= 1 - u[tau]
            for tau in range(h + 1, min(h + unit.t_down, H)):
                if h == 0:
                    add([(ui(g, tau), 1.0), (ui(g, 0), -1.0)], LE, 1.0 - u0[g], f"mindown[{g},{h},{tau}]")
                else:
                    add([(ui(g, tau), 1.0), (ui(g, h - 1), 1.0), (ui(g, h), -1.0)], LE, 1.0,
                        f"mindown[{g},{h},{tau}]")
    A = sp.csr_matrix((vals, (rows, cols)), shape=(len(senses), n))
    c = np.zeros(n)
    for g, unit in enumerate(cfg.units):
        c[g * H:(g + 1) * H] = unit.cost_fixed
        c[G * H + g * H:G * H + (g + 1) * H] = unit.cost_startup
    return FirstStage(A, tuple(senses), np.array(rhs, float), c, tuple(names), (G, H))


@dataclass
class DispatchSolution:
    p: np.ndarray  # (G, H)
    p_c: np.ndarray  # (H,)
    p_s: np.ndarray  # (H,)
    cost: float
    grad_u: np.ndarray  # (G, H) d cost / d u, from the copy-constraint duals


class DispatchModel:
    """Second-stage LP for one fleet; only the right-hand side depends on (u, xi).

    Variables are ``[p (G*H), p_c (H), p_s (H), u_hat (G*H)]``; the last block of
    rows pins ``u_hat = u`` so its duals give the recourse sensitivity to u.
    """

    def __init__(self, cfg: SystemConfig):
        self.cfg = cfg
        G, H = cfg.shape
        self.G, self.H = G, H
        n_p = G * H
        self.n = n_p + 2 * H + n_p
        self.i_pc = n_p
        self.i_ps = n_p + H
        self.i_uh = n_p + 2 * H
        rows, cols, vals, senses = [], [], [], []
        # rhs = const + (per-row coefficient) * u0-dependent pieces, assembled in rhs()
        self._const = []
        self._xi_row = {}
        self._copy_rows = []

        def add(entries, sense, const):
            r = len(senses)
            for j, a in entries:
                if a != 0.0:
                    rows.append(r)
                    cols.append(j)
                    vals.append(a)
            senses.append(sense)
            self._const.append(const)
            return r

        def pi(g, h):
            return g * H + h

        def ui(g, h):
            return self.i_uh + g * H + h

        u0 = cfg.initial_status()
        for g, unit in enumerate(cfg.units):
            down_limit = unit.startup_ramp if cfg.ramp_down_uses_startup_limit else unit.shutdown_ramp
            p0 = unit.p_min * u0[g]
            for h in range(H):
                add([(pi(g, h), 1.0), (ui(g, h), -unit.p_min)], GE, 0.0)
                add([(pi(g, h), 1.0), (ui(g, h), -unit.p_max)], LE, 0.0)
                # p[h] - p[h-1] <= ramp_up*u[h-1] + startup_ramp*(1 - u[h-1])
                if h == 0:
                    bound = unit.ramp_up * u0[g] + unit.startup_ramp * (1 - u0[g]) + p0
                    add([(pi(g, 0), 1.0)], LE, bound)
                else:
                    add([(pi(g, h), 1.0), (pi(g, h - 1), -1.0),
                         (ui(g, h - 1), unit.startup_ramp - unit.ramp_up)], LE, unit.startup_ramp)
                # p[h-1] - p[h] <= ramp_down*u[h] + down_limit*(1 - u[h])
                if h == 0:
                    add([(pi(g, 0), -1.0), (ui(g, 0), down_limit - unit.ramp_down)], LE, down_limit - p0)
                else:
                    add([(pi(g, h - 1), 1.0), (pi(g, h), -1.0),
                         (ui(g, h), down_limit - unit.ramp_down)], LE, down_limit)
        for h in range(H):
            entries = [(pi(g, h), 1.0) for g in range(G)] + [(self.i_pc + h, 1.0), (self.i_ps + h, -1.0)]
            self._xi_row[h] = add(entries, EQ, 0.0)
        for g in range(G):
            for h in range(H):
                self._copy_rows.append(add([(ui(g, h), 1.0)], EQ, 0.0))
        self.A = sp.csr_matrix((vals, (rows, cols)), shape=(len(senses), self.n))
        self.senses = tuple(senses)
        self._const = np.array(self._const)
        self._xi_rows = np.array([self._xi_row[h] for h in range(H)])
        self._copy_rows = np.array(self._copy_rows)
        c = np.zeros(self.n)
        for g, unit in enumerate(cfg.units):
            c[g * H:(g + 1) * H] = unit.cost_linear
        c[self.i_pc:self.i_pc + H] = cfg.curtailment_cost
        self.c = c
        lower = np.zeros(self.n)
        lower[self.i_uh:] = -np.inf
        self.lower = lower
        self.upper = np.full(self.n, np.inf)

    def rhs(self, u: np.ndarray, xi: np.ndarray) -> np.ndarray:
        b = self._const.copy()
        b[self._xi_rows] = np.asarray(xi, float)
        b[self._copy_rows] = np.asarray(u, float).reshape(-1)
        return b

    def lp(self, u: np.ndarray, xi: np.ndarray) -> LinearProgram:
        xi = np.asarray(xi, float)
        if xi.shape != (self.H,):
            raise ValueError(f"net-load vector must have {self.H} entries, got {xi.shape}")
        u = np.asarray(u, float)
        if u.size != self.G * self.H:
            raise ValueError(f"commitment must have {self.G}x{self.H} entries")
        return LinearProgram(
            self.c, self.A, self.senses, self.rhs(u, xi), self.lower, self.upper,
            np.zeros(self.n, bool),
        )

    def solve(self, u: np.ndarray, xi: np.ndarray, backend: str = "highs") -> DispatchSolution:
        res = solve_lp(self.lp(u, xi), backend)
        if not res.optimal:
            raise SolverError(f"dispatch LP not optimal: {res.status} {res.message}", res)
        return self._unpack(res)

    def costs(self, us, xis, backend: str = "highs", chunk: int = 64) -> np.ndarray:
        """Optimal costs for many ``(u, xi)`` pairs.

        The LPs are independent, so chunks of them are stacked block-diagonally
        and solved together; that amortizes the per-call solver overhead.
        """
        us = [np.asarray(u, float) for u in us]
        xis = [np.asarray(xi, float) for xi in xis]
        if len(us) != len(xis):
            raise ValueError("need one load vector per commitment")
        out = np.empty(len(us))
        for start in range(0, len(us), chunk):
            stop = min(start + chunk, len(us))
            k = stop - start
            lp = LinearProgram(
                np.tile(self.c, k),
                sp.block_diag([self.A] * k, format="csr"),
                self.senses * k,
                np.concatenate([self.rhs(us[i], xis[i]) for i in range(start, stop)]),
                np.tile(self.lower, k),
                np.tile(self.upper, k),
                np.zeros(self.n * k, bool),
            )
            res = solve_lp(lp, backend)
            if not res.optimal:
                raise SolverError(f"batched dispatch LP not optimal: {res.status} {res.message}", res)
            out[start:stop] = res.x.reshape(k, self.n) @ self.c
        return out

    def _unpack(self, res: SolveResult) -> DispatchSolution:
        G, H = self.G, self.H
        x = res.x
        return DispatchSolution(
            p=x[:G * H].reshape(G, H),
            p_c=x[self.i_pc:self.i_pc + H],
            p_s=x[self.i_ps:self.i_ps + H],
            cost=res.objective,
            grad_u=res.duals[self._copy_rows].reshape(G, H),
        )


def build_second_stage(cfg: SystemConfig, x_fixed, xi) -> LinearProgram:
    """Dispatch LP for a fixed (possibly fractional) commitment and one net-load day."""
    u = x_fixed.u if isinstance(x_fixed, CommitmentSchedule) else np.asarray(x_fixed, float)
    return dispatch_model(cfg).lp(u, xi)


_MODELS: dict[SystemConfig, DispatchModel] = {}


def dispatch_model(cfg: SystemConfig) -> DispatchModel:
    model = _MODELS.get(cfg)
    if model is None:
        if len(_MODELS) > 32:
            _MODELS.clear()
        model = _MODELS[cfg] = DispatchModel(cfg)
    return model


def recourse(cfg: SystemConfig, u, xi, backend: str = "highs") -> DispatchSolution:
    """Optimal dispatch plus curtailment cost for commitment ``u`` and net load ``xi``."""
    return dispatch_model(cfg).solve(np.asarray(u, float), xi, backend)


def recourse_upper_bound(cfg: SystemConfig, xi) -> float:
    """Cost of dispatching every committed unit at p_min and curtailing the rest.

    That dispatch is feasible for any commitment in [0, 1], so this bounds the
    recourse cost from above for every first-stage decision.
    """
    xi = np.asarray(xi, float)
    base = sum(u.cost_linear * u.p_min for u in cfg.units) * cfg.horizon
    return float(base + cfg.curtailment_cost * np.maximum(xi, 0.0).sum())


def unit_schedules(unit: ThermalUnit, horizon: int) -> list[tuple[int, ...]]:
    """All on/off patterns of one unit that respect its minimum up/down times."""
    single = SystemConfig((unit,), curtailment_cost=unit.cost_linear + 1.0, horizon=horizon)
    out = []
    for bits in itertools.product((0, 1), repeat=horizon):
        if not CommitmentSchedule.from_u(np.array([bits]), single).violations(single):
            out.append(bits)
    return out


def enumerate_schedules(cfg: SystemConfig):
    """Feasible binary schedules in lexicographic order of the flattened u."""
    per_unit = [unit_schedules(u, cfg.horizon) for u in cfg.units]
    for combo in itertools.product(*per_unit):
        yield CommitmentSchedule.from_u(np.array(combo, float), cfg)


@dataclass
class OracleResult:
    schedule: CommitmentSchedule
    total_cost: float
    recourse: np.ndarray  # per-scenario cost at the optimum
    candidates: int  # schedules priced under the worst case (the rest were pruned)
    enumerated: int = 0  # feasible schedules in total


ORACLE_LIMITS = {"units": 2, "horizon": 6, "scenarios": 3}


def extensive_form_oracle(cfg: SystemConfig, amb, backend: str = "highs") -> OracleResult:
    """Enumerate every feasible commitment and price its worst-case recourse."""
    from druc.ambiguity import worst_case_expectation

    support = np.asarray(amb.nominal.support, float)
    if (cfg.num_units > ORACLE_LIMITS["units"] or cfg.horizon > ORACLE_LIMITS["horizon"]
            or support.shape[0] > ORACLE_LIMITS["scenarios"]):
        raise ValueError(
            f"instance exceeds the enumeration budget {ORACLE_LIMITS}: "
            f"{cfg.num_units} units, {cfg.horizon} hours, {support.shape[0]} scenarios"
        )
    model = dispatch_model(cfg)
    schedules = list(enumerate_schedules(cfg))
    S = support.shape[0]
    pairs_u = [sched.u for sched in schedules for _ in range(S)]
    pairs_xi = [xi for _ in schedules for xi in support]
    chunk = 64 if backend == "highs" else 1
    costs = model.costs(pairs_u, pairs_xi, backend, chunk=chunk).reshape(len(schedules), S)
    first = np.array([sched.cost(cfg) for sched in schedules])
    # the worst case is never below the nominal expectation, so scanning in
    # order of that bound lets the rest be skipped once it passes the incumbent
    nominal = first + costs @ amb.nominal.probs
    best = None
    count = 0
    for i in np.argsort(nominal, kind="stable"):
        if best is not None and nominal[i] > best[1] + 1e-9 * max(1.0, abs(best[1])):
            break
        count += 1
        wc, _ = worst_case_expectation(costs[i], amb)
        total = first[i] + wc
        # ties go to the lexicographically smallest u, i.e. the earliest index
        if (best is None or total < best[1] - 1e-9 * max(1.0, abs(best[1]))
                or (abs(total - best[1]) <= 1e-9 * max(1.0, abs(best[1])) and i < best[3])):
            best = (schedules[i], total, costs[i], i)
    if best is None:
        raise ValueError("no feasible commitment schedule")
    return OracleResult(best[0], best[1], best[2], count, len(schedules))
