"""KL ambiguity sets around an empirical scenario distribution.

The worst-case expectation over ``{P : KL(P || P_o) <= rho}`` is computed
from its two-variable dual

    min_{mu, zeta >= 0}  mu + rho*zeta + zeta * sum_w pi_w exp((q_w - mu)/zeta - 1)

by golden-section search on ``zeta`` with a bisection line search on ``mu``
nested inside. Nothing here calls an LP/MILP solver, so the result can be
used to check the decomposition algorithm independently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import stats

ZETA_MIN = 1e-8
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class NominalDistribution:
    support: np.ndarray  # (S, H) scenario trajectories
    probs: np.ndarray  # (S,)

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, float))
        probs = np.asarray(self.probs, float).reshape(-1)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        if support.shape[0] != probs.size or probs.size < 1:
            raise ValueError("support and probs must have the same, non-zero length")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities must be non-negative and sum to 1 (sum={probs.sum()!r})")
        if not np.all(np.isfinite(support)):
            raise ValueError("scenario values must be finite")

    @property
    def size(self) -> int:
        return self.probs.size

    def to_dict(self) -> dict:
        return {"support": self.support.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "NominalDistribution":
        return cls(np.array(data["support"], float), np.array(data["probs"], float))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "NominalDistribution":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class AmbiguitySet:
    nominal: NominalDistribution
    rho: float

    def __post_init__(self):
        if not self.rho >= 0 or not math.isfinite(self.rho):
            raise ValueError(f"rho must be a finite non-negative number, got {self.rho!r}")


def build_nominal(clustering, N: int | None = None) -> NominalDistribution:
    """Centroids become scenarios, cluster shares become probabilities."""
    labels = np.asarray(clustering.labels)
    S = len(clustering.centroids)
    counts = np.bincount(labels, minlength=S)
    if N is None:
        N = labels.size
    if N != counts.sum():
        raise ValueError(f"N={N} does not match the {counts.sum()} assigned series")
    if np.any(counts == 0):
        raise ValueError(f"empty cluster(s) {np.flatnonzero(counts == 0).tolist()}")
    probs = counts / N
    # absorb the rounding residue so the sum is 1 to the last bit
    probs[np.argmax(probs)] += 1.0 - probs.sum()
    return NominalDistribution(np.asarray(clustering.centroids, float), probs)


def kl_divergence(p, q) -> float:
    """``sum p log(p/q)`` with ``0 log 0 = 0``; ``q`` must be strictly positive."""
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    if p.shape != q.shape:
        raise ValueError("p and q must have the same length")
    if np.any(q <= 0):
        raise ValueError("reference distribution must be strictly positive")
    mask = p > 0
    return float(max(0.0, np.sum(p[mask] * np.log(p[mask] / q[mask]))))


def chi2_quantile(prob: float, dof: int) -> float:
    if not 0.0 < prob < 1.0:
        raise ValueError("probability must lie in (0, 1)")
    if dof < 1:
        raise ValueError("degrees of freedom must be >= 1")
    return float(stats.chi2.ppf(prob, dof))


def asymptotic_rho(N: int, S: int, eta: float) -> float:
    """Divergence radius with asymptotic confidence ``1 - eta`` for N samples on S cells."""
    if not 0.0 < eta < 1.0:
        raise ValueError(f"eta must lie in (0, 1), got {eta!r}")
    if N < 1 or S < 2:
        raise ValueError("need N >= 1 and S >= 2")
    return chi2_quantile(1.0 - eta, S - 1) / (2.0 * N)


# -- worst-case expectation --------------------------------------------------

def _logsumexp(z: np.ndarray) -> float:
    m = float(np.max(z))
    return m + math.log(float(np.sum(np.exp(z - m))))


class WorstCase(NamedTuple):
    value: float
    probs: np.ndarray
    mu: float
    zeta: float


def _inner_mu(q, log_pi, zeta) -> tuple[float, float]:
    """Minimize over mu for fixed zeta; returns (mu, log of sum pi e^{K-1})."""
    mu = zeta * (_logsumexp(q / zeta + log_pi) - 1.0)
    return mu, _logsumexp((q - mu) / zeta - 1.0 + log_pi)


def optimal_mu(q_values, probs, zeta: float) -> float:
    """Minimizer over mu of the dual objective at fixed ``zeta``."""
    q = np.asarray(q_values, float)
    probs = np.asarray(probs, float)
    log_pi = np.where(probs > 0, np.log(np.where(probs > 0, probs, 1.0)), -np.inf)
    # closed form zeta*(log sum pi e^{q/zeta} - 1), computed stably
    return zeta * (_logsumexp(q / zeta + log_pi) - 1.0)


def dual_objective(q, probs, rho: float, mu: float, zeta: float) -> float:
    q = np.asarray(q, float)
    z = (q - mu) / zeta - 1.0 + np.log(probs)
    return mu + rho * zeta + zeta * math.exp(_logsumexp(z))


def _tilted(q, log_pi, zeta) -> np.ndarray:
    z = (q - q.max()) / zeta + log_pi
    w = np.exp(z - z.max())
    return w / w.sum()


def worst_case_dual(q_values, amb: AmbiguitySet) -> WorstCase:
    """Worst-case expectation with the optimal dual pair (mu, zeta)."""
    q = np.asarray(q_values, float)
    pi = amb.nominal.probs
    if q.shape != pi.shape:
        raise ValueError(f"expected {pi.size} scenario values, got {q.size}")
    if not np.all(np.isfinite(q)):
        raise ValueError("scenario values must be finite")
    nominal = float(pi @ q)
    spread = float(q.max() - q.min())
    if amb.rho == 0.0 or spread == 0.0:
        return WorstCase(nominal, pi.copy(), math.nan, math.inf if amb.rho == 0.0 else 0.0)
    rho = amb.rho
    log_pi = np.log(np.where(pi > 0, pi, 1.0))
    log_pi[pi <= 0] = -np.inf

    def h(zeta):
        mu, lse = _inner_mu(q, log_pi, zeta)
        return mu + rho * zeta + zeta * math.exp(lse)

    def slope_sign(zeta):
        # d h / d zeta = rho - KL(p_zeta || pi)
        return rho - kl_divergence(_tilted(q, log_pi, zeta), np.where(pi > 0, pi, 1.0))

    zeta_hi = max(1.0, spread * max(10.0, 1.0 / rho))
    if slope_sign(ZETA_MIN) >= 0.0:
        # the ball contains the mass on the worst scenarios; the tilt at the
        # floor is the distribution just checked, and it splits near-ties
        probs = _tilted(q, log_pi, ZETA_MIN)
        return WorstCase(min(float(probs @ q), float(q.max())), probs, float(q.max()), 0.0)

    a, b = ZETA_MIN, zeta_hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = h(c), h(d)
    for _ in range(200):
        if b - a <= 1e-12 * b:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = h(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = h(d)
    # flat objective near the optimum: polish on the sign of the slope,
    # keeping the feasible side (KL <= rho) as the upper end
    a = max(ZETA_MIN, a * 0.5)
    b = min(zeta_hi * 2.0, b * 2.0)
    if slope_sign(a) >= 0.0:
        a = ZETA_MIN
    if slope_sign(b) < 0.0:
        b = zeta_hi * 2.0
    for _ in range(200):
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b:
            break
        if slope_sign(mid) < 0.0:
            a = mid
        else:
            b = mid
    zeta = b
    mu, _ = _inner_mu(q, log_pi, zeta)
    probs = _tilted(q, log_pi, zeta)
    value = dual_objective(q, pi, rho, mu, zeta)
    value = min(max(value, nominal), float(q.max()))
    return WorstCase(value, probs, mu, zeta)


def worst_case_expectation(q_values, amb: AmbiguitySet) -> tuple[float, np.ndarray]:
    """Largest expectation of ``q_values`` over the ambiguity set, and the maximizing probabilities."""
    wc = worst_case_dual(q_values, amb)
    return wc.value, wc.probs
