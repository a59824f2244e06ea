"""k-means over daily profiles under Euclidean, DTW or soft-DTW distance.

The DTW and soft-DTW dynamic programs are compiled with numba; a full
assignment step over a year of days takes milliseconds.

Squared-distance conventions (what inertia and seeding use):

* ED: ``||a - b||^2``;
* DTW: the minimal cumulative squared cost, i.e. ``DTW(a, b)^2``;
* SDTW: the soft-DTW divergence ``sdtw(a,b) - (sdtw(a,a) + sdtw(b,b))/2``,
  which is non-negative and zero only at ``a == b``. The raw soft-DTW value
  can be negative, which would break inertia and variance captured.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

MAX_LLOYD_ITERS = 100
DBA_ITERS = 10
SDTW_STEPS = 30
SDTW_STEP_SIZE = 0.01


class Kind(str, Enum):
    ED = "ed"
    DTW = "dtw"
    SDTW = "sdtw"


@dataclass(frozen=True)
class DistanceMeasure:
    kind: Kind = Kind.ED
    sdtw_gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(str(getattr(self.kind, "value", self.kind)).lower()))
        if self.kind is Kind.SDTW and not self.sdtw_gamma > 0:
            raise ValueError(f"sdtw_gamma must be positive, got {self.sdtw_gamma!r}")

    @classmethod
    def parse(cls, name: str, sdtw_gamma: float = 1.0) -> "DistanceMeasure":
        return cls(Kind(name.lower()), sdtw_gamma)

    @property
    def name(self) -> str:
        return self.kind.value.upper()


ED = DistanceMeasure(Kind.ED)
DTW = DistanceMeasure(Kind.DTW)
SDTW = DistanceMeasure(Kind.SDTW)


# -- dynamic programs ---------------------------------------------------------

# exp(-40) is below double precision next to the leading term of 1
_NEGLIGIBLE = -40.0


@njit(cache=True)
def _softmin3(a, b, c, gamma):
    m = min(a, b, c)
    if m == np.inf:
        return np.inf
    s = 0.0
    for v in (a, b, c):
        t = (m - v) / gamma
        if t > _NEGLIGIBLE:
            s += np.exp(t)
    return m - gamma * np.log(s)


@njit(cache=True)
def _table(x, y, gamma, R):
    """Fill the padded accumulated-cost table R; ``gamma <= 0`` means hard minimum."""
    T, U = x.size, y.size
    R[:, :] = np.inf
    R[0, 0] = 0.0
    for i in range(1, T + 1):
        for j in range(1, U + 1):
            d = (x[i - 1] - y[j - 1]) ** 2
            if gamma > 0:
                R[i, j] = d + _softmin3(R[i - 1, j - 1], R[i - 1, j], R[i, j - 1], gamma)
            else:
                R[i, j] = d + min(R[i - 1, j - 1], R[i - 1, j], R[i, j - 1])
    return R[T, U]


@njit(cache=True)
def _pairwise(X, Y, gamma):
    n, m = X.shape[0], Y.shape[0]
    out = np.empty((n, m))
    R = np.empty((X.shape[1] + 1, Y.shape[1] + 1))
    for a in range(n):
        for b in range(m):
            out[a, b] = _table(X[a], Y[b], gamma, R)
    return out


@njit(cache=True)
def _path(x, y):
    """Optimal DTW alignment as a (k, 2) index array, ties preferring the diagonal."""
    T, U = x.size, y.size
    R = np.empty((T + 1, U + 1))
    _table(x, y, 0.0, R)
    out = np.empty((T + U, 2), np.int64)
    i, j, k = T, U, 0
    while True:
        out[k, 0] = i - 1
        out[k, 1] = j - 1
        k += 1
        if i == 1 and j == 1:
            break
        diag, up, left = R[i - 1, j - 1], R[i - 1, j], R[i, j - 1]
        if diag <= up and diag <= left:
            i -= 1
            j -= 1
        elif up <= left:
            i -= 1
        else:
            j -= 1
    return out[:k][::-1]


@njit(cache=True)
def _sdtw_grad(z, Y, gamma):
    """Sum over rows y of d sdtw(z, y) / dz via the expected-alignment recursion."""
    n, U = Y.shape
    T = z.size
    grad = np.zeros(T)
    R = np.empty((T + 1, U + 1))
    Rp = np.empty((T + 2, U + 2))
    E = np.zeros((T + 2, U + 2))
    D = np.zeros((T + 2, U + 2))
    for r in range(n):
        y = Y[r]
        _table(z, y, gamma, R)
        Rp[:, :] = -np.inf
        Rp[1:T + 1, 1:U + 1] = R[1:, 1:]
        Rp[T + 1, U + 1] = R[T, U]
        D[:, :] = 0.0
        for i in range(T):
            for j in range(U):
                D[i + 1, j + 1] = (z[i] - y[j]) ** 2
        E[:, :] = 0.0
        E[T + 1, U + 1] = 1.0
        for i in range(T, 0, -1):
            for j in range(U, 0, -1):
                e = 0.0
                for di, dj in ((1, 0), (0, 1), (1, 1)):
                    t = (Rp[i + di, j + dj] - Rp[i, j] - D[i + di, j + dj]) / gamma
                    if t > _NEGLIGIBLE:
                        e += E[i + di, j + dj] * np.exp(t)
                E[i, j] = e
        for i in range(T):
            for j in range(U):
                grad[i] += E[i + 1, j + 1] * 2.0 * (z[i] - y[j])
    return grad


def _check_pairs(X, Y):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, float)))
    Y = np.ascontiguousarray(np.atleast_2d(np.asarray(Y, float)))
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"series lengths differ ({X.shape[1]} vs {Y.shape[1]})")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValueError("series must be finite")
    return X, Y


def dtw_cost(X, Y) -> np.ndarray:
    """Pairwise minimal cumulative squared cost, shape (len(X), len(Y))."""
    X, Y = _check_pairs(X, Y)
    return _pairwise(X, Y, 0.0)


def soft_dtw(X, Y, gamma: float = 1.0) -> np.ndarray:
    """Pairwise soft-DTW values, shape (len(X), len(Y))."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    X, Y = _check_pairs(X, Y)
    return _pairwise(X, Y, float(gamma))


def _soft_dtw_self(X, gamma):
    return np.array([_pairwise(x[None, :], x[None, :], gamma)[0, 0] for x in X])


def soft_dtw_divergence(X, Y, gamma: float = 1.0) -> np.ndarray:
    X, Y = _check_pairs(X, Y)
    d = soft_dtw(X, Y, gamma) - 0.5 * (_soft_dtw_self(X, gamma)[:, None] + _soft_dtw_self(Y, gamma)[None, :])
    return np.maximum(d, 0.0)


def distance(a, b, m: DistanceMeasure = ED) -> float:
    """ED norm, DTW (square root of the cumulative cost) or raw soft-DTW value."""
    a = np.asarray(a, float).reshape(-1)
    b = np.asarray(b, float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"series lengths differ ({a.size} vs {b.size})")
    if m.kind is Kind.ED:
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("series must be finite")
        return float(np.linalg.norm(a - b))
    if m.kind is Kind.DTW:
        return float(np.sqrt(dtw_cost(a, b)[0, 0]))
    return float(soft_dtw(a, b, m.sdtw_gamma)[0, 0])


def sq_distances(X, C, m: DistanceMeasure) -> np.ndarray:
    """Pairwise squared distances under ``m``, shape (len(X), len(C))."""
    X, C = _check_pairs(X, C)
    if m.kind is Kind.ED:
        return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)
    if m.kind is Kind.DTW:
        return dtw_cost(X, C)
    return soft_dtw_divergence(X, C, m.sdtw_gamma)


# -- barycenters --------------------------------------------------------------

def dba(X: np.ndarray, init: np.ndarray, iters: int = DBA_ITERS) -> np.ndarray:
    """DTW barycenter averaging started from ``init``."""
    X = np.ascontiguousarray(X, float)
    c = np.array(init, float)
    T = c.size
    for _ in range(iters):
        total = np.zeros(T)
        count = np.zeros(T)
        for x in X:
            path = _path(x, c)
            np.add.at(total, path[:, 1], x[path[:, 0]])
            np.add.at(count, path[:, 1], 1)
        new = total / count
        if np.array_equal(new, c):
            break
        c = new
    return c


def soft_dtw_grad(z, Y, gamma: float = 1.0) -> np.ndarray:
    """Gradient in ``z`` of the mean soft-DTW loss against the rows of ``Y``."""
    Y = np.atleast_2d(np.ascontiguousarray(Y, float))
    return _sdtw_grad(np.ascontiguousarray(z, float), Y, float(gamma)) / Y.shape[0]


def soft_dtw_barycenter(Y: np.ndarray, gamma: float, init: np.ndarray | None = None,
                        steps: int = SDTW_STEPS, step_size: float = SDTW_STEP_SIZE) -> np.ndarray:
    """Gradient descent on the mean soft-DTW divergence, started at the arithmetic mean.

    The divergence (not the raw loss) is minimised so that a single member is its own
    barycenter. By symmetry the self term contributes ``-grad(z; z)``.
    """
    z = np.array(Y.mean(axis=0) if init is None else init, float)
    for _ in range(steps):
        z = z - step_size * (soft_dtw_grad(z, Y, gamma) - soft_dtw_grad(z, z[None, :], gamma))
    return z


# -- k-means --------------------------------------------------------------------

@dataclass(frozen=True)
class Clustering:
    labels: np.ndarray  # (N,) cluster index, 0-based
    centroids: np.ndarray  # (S, 24)
    inertia: float
    variance_captured: float
    measure: DistanceMeasure
    history: tuple[float, ...] = ()  # inertia after each assignment step
    iterations: int = 0
    seed: int | None = None

    @property
    def S(self) -> int:
        return self.centroids.shape[0]

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.S)

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.labels.size

    @property
    def assignments(self) -> dict[int, int]:
        """Series index to 1-based cluster id."""
        return {i: int(k) + 1 for i, k in enumerate(self.labels)}

    def to_dict(self) -> dict:
        return {
            "measure": self.measure.kind.value,
            "sdtw_gamma": self.measure.sdtw_gamma,
            "seed": self.seed,
            "assignments": [int(k) + 1 for k in self.labels],
            "centroids": self.centroids.tolist(),
            "probabilities": self.probabilities.tolist(),
            "inertia": self.inertia,
            "variance_captured": self.variance_captured,
            "iterations": self.iterations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def dump(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_json())
        return path

    @classmethod
    def from_dict(cls, data: dict) -> "Clustering":
        return cls(
            labels=np.asarray(data["assignments"], int) - 1,
            centroids=np.asarray(data["centroids"], float),
            inertia=float(data["inertia"]),
            variance_captured=float(data["variance_captured"]),
            measure=DistanceMeasure(Kind(data["measure"]), float(data.get("sdtw_gamma", 1.0))),
            iterations=int(data.get("iterations", 0)),
            seed=data.get("seed"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Clustering":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _as_matrix(data) -> np.ndarray:
    X = data.matrix() if hasattr(data, "matrix") else data
    X = np.atleast_2d(np.asarray(X, float))
    if not np.all(np.isfinite(X)):
        raise ValueError("series must be finite")
    return X


def _seed_centroids(X: np.ndarray, S: int, m: DistanceMeasure, rng: np.random.Generator) -> np.ndarray:
    """k-means++: each new seed drawn with probability proportional to squared distance."""
    N = X.shape[0]
    chosen = [int(rng.integers(N))]
    d2 = sq_distances(X, X[chosen[-1]], m)[:, 0]
    for _ in range(1, S):
        total = d2.sum()
        if total > 0:
            k = int(rng.choice(N, p=d2 / total))
        else:
            # all remaining points coincide with a seed; take any unused index
            k = int(next(i for i in range(N) if i not in chosen))
        chosen.append(k)
        d2 = np.minimum(d2, sq_distances(X, X[k], m)[:, 0])
    return X[chosen].copy()


def _update(X, labels, centroids, m: DistanceMeasure) -> np.ndarray:
    new = centroids.copy()
    for k in range(centroids.shape[0]):
        members = X[labels == k]
        if members.shape[0] == 0:
            continue
        if m.kind is Kind.ED:
            new[k] = members.mean(axis=0)
        elif m.kind is Kind.DTW:
            new[k] = dba(members, centroids[k])
        else:
            new[k] = soft_dtw_barycenter(members, m.sdtw_gamma)
    return new


def _assign(X, centroids, m: DistanceMeasure):
    """Nearest-centroid labels; an empty cluster takes over the worst-served point."""
    N, S = X.shape[0], centroids.shape[0]
    d2 = sq_distances(X, centroids, m)
    labels = np.argmin(d2, axis=1)
    for _ in range(S):
        counts = np.bincount(labels, minlength=S)
        empty = np.flatnonzero(counts == 0)
        if empty.size == 0:
            break
        k = int(empty[0])
        own = d2[np.arange(N), labels]
        far = int(np.argmax(np.where(counts[labels] > 1, own, -np.inf)))
        log.debug("cluster %d empty; re-seeded at series %d", k, far)
        centroids[k] = X[far]
        d2[:, k] = sq_distances(X, X[far], m)[:, 0]
        labels = np.argmin(d2, axis=1)
        labels[far] = k
    return labels, d2


def _total_ss(X: np.ndarray, m: DistanceMeasure) -> float:
    return float(sq_distances(X, X.mean(axis=0), m).sum())


def kmeans(data, S: int, m: DistanceMeasure = ED, seed: int = 0,
           max_iters: int = MAX_LLOYD_ITERS) -> Clustering:
    """Lloyd iterations from k-means++ seeds; stops when assignments repeat."""
    X = _as_matrix(data)
    N = X.shape[0]
    if not 1 <= S <= N:
        raise ValueError(f"need 1 <= S <= N, got S={S} with N={N}")
    rng = np.random.default_rng(seed)
    centroids = _seed_centroids(X, S, m, rng)
    labels = None
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        new, d2 = _assign(X, centroids, m)
        history.append(float(d2[np.arange(N), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        centroids = _update(X, labels, centroids, m)
    else:
        log.info("k-means hit the %d-iteration cap", max_iters)
        labels, d2 = _assign(X, centroids, m)
    inertia = float(max(d2[np.arange(N), labels].sum(), 0.0))
    total = _total_ss(X, m)
    captured = 1.0 - inertia / total if total > 0 else 1.0
    return Clustering(labels, centroids, inertia, float(min(max(captured, 0.0), 1.0)), m,
                      tuple(history), it, seed)


def elbow_scan(data, S_range, m: DistanceMeasure = ED, seed: int = 0) -> list[tuple[int, float]]:
    """Variance captured for each S (one k-means run per S, reported as-is)."""
    X = _as_matrix(data)
    S_values = list(S_range)
    if not S_values:
        raise ValueError("empty S range")
    return [(S, kmeans(X, S, m, seed).variance_captured) for S in S_values]
