"""Randomized tiny instances checked against brute-force enumeration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from druc.ambiguity import AmbiguitySet, NominalDistribution
from druc.benders import run, worst_case_objective
from druc.model import SystemConfig, ThermalUnit, extensive_form_oracle

RHO_CHOICES = (0.0, 0.1, 0.5)


def random_tiny_instance(rng: np.random.Generator, rho: float | None = None) -> tuple[SystemConfig, AmbiguitySet]:
    """1-2 units, 4-6 hours, 2-3 scenarios; small enough to enumerate."""
    G = int(rng.integers(1, 3))
    H = int(rng.integers(4, 7))
    S = int(rng.integers(2, 4))
    units = []
    for g in range(G):
        p_min = float(rng.uniform(10, 40))
        p_max = p_min + float(rng.uniform(30, 80))
        ramp = p_max * float(rng.uniform(0.5, 1.0))
        units.append(ThermalUnit(
            f"g{g + 1}", p_min, p_max,
            int(rng.integers(1, 4)), int(rng.integers(1, 4)),
            ramp, ramp, max(ramp, p_min), max(ramp, p_min),
            float(rng.uniform(10, 30)), float(rng.uniform(0, 200)), float(rng.uniform(0, 500)),
            bool(rng.integers(0, 2)),
        ))
    cfg = SystemConfig(tuple(units), 200.0, H)
    support = rng.uniform(0, 1.1 * cfg.capacity, (S, H))
    probs = rng.dirichlet(np.ones(S))
    probs[-1] = 1.0 - probs[:-1].sum()
    if rho is None:
        rho = float(rng.choice(RHO_CHOICES))
    return cfg, AmbiguitySet(NominalDistribution(support, probs), rho)


@dataclass
class OracleComparison:
    index: int
    units: int
    hours: int
    scenarios: int
    rho: float
    benders_cost: float
    oracle_cost: float
    iterations: int
    same_schedule: bool
    schedule_cost: float  # exact worst-case cost of the decomposition's schedule

    @property
    def schedule_rel_error(self) -> float:
        return abs(self.schedule_cost - self.oracle_cost) / max(1.0, abs(self.oracle_cost))

    @property
    def rel_error(self) -> float:
        return abs(self.benders_cost - self.oracle_cost) / max(1.0, abs(self.oracle_cost))


def compare_with_oracle(count: int = 24, seed: int = 0, tol: float = 1e-6) -> list[OracleComparison]:
    """Solve ``count`` random instances both ways; rho cycles through 0, 0.1, 0.5."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        cfg, amb = random_tiny_instance(rng, RHO_CHOICES[k % len(RHO_CHOICES)])
        oracle = extensive_form_oracle(cfg, amb)
        res = run(cfg, amb, tol)
        out.append(OracleComparison(
            k, cfg.num_units, cfg.horizon, amb.nominal.size, amb.rho, res.total_cost, oracle.total_cost,
            res.iterations, bool(np.array_equal(res.schedule.u, oracle.schedule.u)),
            worst_case_objective(cfg, amb, res.schedule),
        ))
    return out
