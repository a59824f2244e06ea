"""Sensitivity sweeps over the divergence radius and the dataset size.

Each sweep is a grid of independent cells. Cells run in a process pool when
``jobs > 1``; every finished cell is appended to an on-disk journal so an
interrupted sweep can resume. Failed cells become rows with status
``failed: ...`` and a NaN cost instead of aborting the sweep.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from druc.ambiguity import AmbiguitySet, NominalDistribution, asymptotic_rho, build_nominal, worst_case_expectation
from druc.benders import BendersOptions, run
from druc.cluster import DTW, ED, SDTW, DistanceMeasure, Kind, kmeans
from druc.model import CommitmentSchedule, SystemConfig, dispatch_model
from druc.netload import Dataset, window

log = logging.getLogger(__name__)

RHO_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
SIZE_MONTHS = (1, 2, 4, 6, 8, 10, 12, 14, 16, 18, 20, 22, 24, 26, 28)
DEFAULT_START = date(2018, 7, 1)
DEFAULT_ETA = 0.02
ALL_DISTANCES = (ED, DTW, SDTW)


@dataclass(frozen=True)
class SweepSpec:
    rho_values: tuple[float, ...] = RHO_GRID
    eta: float = DEFAULT_ETA  # calibration level for the size sweep
    windows: tuple[tuple[date, int], ...] = ((DEFAULT_START, 12),)
    distances: tuple[DistanceMeasure, ...] = ALL_DISTANCES
    clusters: int = 12
    seed: int = 0
    tol: float = 1e-4
    max_iters: int = 500
    kmax: float = 50.0

    def __post_init__(self):
        for name in ("rho_values", "windows", "distances"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
            if not getattr(self, name):
                raise ValueError(f"{name} must not be empty")
        if any(not (r >= 0 and math.isfinite(r)) for r in self.rho_values):
            raise ValueError("rho values must be finite and non-negative")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.clusters < 1:
            raise ValueError("need at least one cluster")

    def options(self) -> dict:
        return {"tol": self.tol, "max_iters": self.max_iters, "kmax": self.kmax}

    def key(self, kind: str, m: DistanceMeasure, start: date, months: int, rho: float | None = None) -> str:
        """Journal key: every input that changes a cell's result."""
        head = f"{kind}|{m.kind.value}|{m.sdtw_gamma!r}|{start.isoformat()}|{months}|S={self.clusters}|seed={self.seed}"
        tail = f"|tol={self.tol!r}|kmax={self.kmax!r}|it={self.max_iters}"
        return head + (f"|rho={rho!r}" if rho is not None else f"|eta={self.eta!r}") + tail


def size_windows(months=SIZE_MONTHS, start: date = DEFAULT_START) -> tuple[tuple[date, int], ...]:
    return tuple((start, int(m)) for m in months)


# -- tables -------------------------------------------------------------------

@dataclass
class Table:
    columns: tuple[tuple[str, type], ...]
    rows: list[tuple] = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return [c for c, _ in self.columns]

    def column(self, name: str) -> list:
        i = self.names.index(name)
        return [r[i] for r in self.rows]

    def select(self, names) -> "Table":
        idx = [self.names.index(n) for n in names]
        return Table(tuple(self.columns[i] for i in idx), [tuple(r[i] for i in idx) for r in self.rows])

    def without(self, names) -> "Table":
        return self.select([n for n in self.names if n not in set(names)])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Table) or self.columns != other.columns or len(self.rows) != len(other.rows):
            return False
        for a, b in zip(self.rows, other.rows):
            for x, y in zip(a, b):
                if x != y and not (isinstance(x, float) and isinstance(y, float) and math.isnan(x) and math.isnan(y)):
                    return False
        return True


RHO_COLUMNS = (("distance", str), ("rho", float), ("total_cost", float), ("iterations", int),
               ("wall_time", float), ("status", str))
SIZE_COLUMNS = (("distance", str), ("window_start", str), ("months", int), ("N", int),
                ("rho_calibrated", float), ("total_cost", float), ("iterations", int),
                ("wall_time", float), ("status", str))
# columns that differ between otherwise identical runs
VOLATILE = ("wall_time",)

_TYPE_NAMES = {str: "str", float: "float", int: "int"}


def _cell_text(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit(table: Table, path: str | Path, fmt: str | None = None) -> Path:
    """Write ``table`` as CSV or JSON; floats keep full precision."""
    path = Path(path)
    fmt = fmt or path.suffix.lstrip(".") or "csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.names)
            for row in table.rows:
                w.writerow([_cell_text(v) for v in row])
    elif fmt == "json":
        doc = {
            "columns": [[n, _TYPE_NAMES[t]] for n, t in table.columns],
            # NaN (failed rows) is not valid JSON
            "rows": [[None if isinstance(v, float) and math.isnan(v) else v for v in r] for r in table.rows],
        }
        path.write_text(json.dumps(doc, indent=1, allow_nan=False) + "\n")
    else:
        raise ValueError(f"unknown format {fmt!r}; expected csv or json")
    return path


def read_table(path: str | Path, columns=None) -> Table:
    """Parse a file written by :func:`emit`. CSV needs ``columns`` for the types."""
    path = Path(path)
    if path.suffix == ".json":
        doc = json.loads(path.read_text())
        types = {v: k for k, v in _TYPE_NAMES.items()}
        cols = tuple((n, types[t]) for n, t in doc["columns"])
        return Table(cols, [tuple(math.nan if v is None and t is float else t(v) for (_, t), v in zip(cols, r))
                            for r in doc["rows"]])
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if columns is None:
            cols = tuple((n, str) for n in header)
        else:
            by_name = dict(columns)
            cols = tuple((n, by_name.get(n, str)) for n in header)
        return Table(cols, [tuple(t(v) for (_, t), v in zip(cols, r)) for r in reader])


# -- journal ------------------------------------------------------------------

class Journal:
    """Append-only JSON-lines record of finished cells."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def load(self) -> dict[str, dict]:
        done: dict[str, dict] = {}
        if not self.path.exists():
            return done
        for line in self.path.read_text().splitlines():
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                log.warning("%s: skipping a truncated journal line", self.path)
                continue
            done[rec["key"]] = rec
        return done

    def append(self, key: str, record: dict) -> None:
        line = json.dumps({"key": key, **record}) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())


def _run_cells(cells: list[tuple[str, object, tuple]], jobs: int, journal: Journal | None,
               resume: bool) -> dict[str, dict]:
    """Execute ``(key, fn, args)`` cells; returns key -> result record."""
    done = journal.load() if (journal is not None and resume) else {}
    results = {k: done[k] for k, _, _ in cells if k in done}
    if results:
        log.info("resuming: %d of %d cells already in the journal", len(results), len(cells))
    todo = [c for c in cells if c[0] not in results]

    def finish(key, rec):
        results[key] = rec
        if journal is not None:
            journal.append(key, rec)

    if jobs <= 1 or len(todo) <= 1:
        for key, fn, args in todo:
            finish(key, fn(*args))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(fn, *args): key for key, fn, args in todo}
            for fut in as_completed(futures):
                finish(futures[fut], fut.result())
    return results


def _failed(exc: BaseException) -> dict:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    return {"total_cost": math.nan, "iterations": 0, "wall_time": 0.0, "status": f"failed: {msg}"}


def solve_cell(cfg_data: dict, nominal_data: dict, rho: float, opts: dict) -> dict:
    """One Benders run; never raises."""
    started = time.perf_counter()
    try:
        cfg = SystemConfig.from_dict(cfg_data)
        amb = AmbiguitySet(NominalDistribution.from_dict(nominal_data), rho)
        options = BendersOptions(**opts)
        res = run(cfg, amb, options.tol, options)
        return {
            "total_cost": res.total_cost,
            "iterations": res.iterations,
            "wall_time": time.perf_counter() - started,
            "status": "ok",
            "u": res.schedule.u.astype(int).tolist(),
        }
    except Exception as exc:  # a failed cell must not stop the sweep
        log.error("solve failed (rho=%g): %s", rho, exc)
        return _failed(exc)


# -- rho sweep ------------------------------------------------------------------

def _cross_evaluate(cfg: SystemConfig, nominal: NominalDistribution, schedules, rhos) -> np.ndarray:
    """Exact worst-case objective of each schedule at each rho, shape (len(schedules), len(rhos))."""
    model = dispatch_model(cfg)
    S = nominal.size
    us = [np.asarray(u, float) for u in schedules for _ in range(S)]
    xis = [xi for _ in schedules for xi in nominal.support]
    q = model.costs(us, xis).reshape(len(schedules), S)
    out = np.empty((len(schedules), len(rhos)))
    for i, u in enumerate(schedules):
        first = CommitmentSchedule.from_u(u, cfg).cost(cfg)
        for j, rho in enumerate(rhos):
            out[i, j] = first + worst_case_expectation(q[i], AmbiguitySet(nominal, rho))[0]
    return out


def run_rho_sweep(spec: SweepSpec, dataset: Dataset, cfg: SystemConfig, jobs: int = 1,
                  journal: Journal | None = None, resume: bool = False,
                  nominals: dict | None = None) -> Table:
    """Cost against rho for each distance, one clustering per distance.

    Every schedule found anywhere on a distance's rho grid is re-priced
    exactly at every rho and each row reports the cheapest. All candidates
    are feasible, so the reported cost is still an upper bound certified by
    the row's own lower bound, and the column is monotone by construction.
    """
    start, months = spec.windows[0]
    data = window(dataset, start, months)
    if nominals is None:
        nominals = {}
        for m in spec.distances:
            c = kmeans(data, spec.clusters, m, spec.seed)
            nominals[m.kind.value] = build_nominal(c, data.N)
    cells = []
    for m in spec.distances:
        nom = nominals[m.kind.value]
        for rho in spec.rho_values:
            key = spec.key("rho", m, start, months, float(rho))
            cells.append((key, solve_cell, (cfg.to_dict(), nom.to_dict(), float(rho), spec.options())))
    results = _run_cells(cells, jobs, journal, resume)
    table = Table(RHO_COLUMNS)
    for m in spec.distances:
        keys = [spec.key("rho", m, start, months, float(rho)) for rho in spec.rho_values]
        recs = [results[k] for k in keys]
        ok = [i for i, r in enumerate(recs) if r["status"] == "ok"]
        best = {}
        if ok:
            schedules = []
            for i in ok:
                if recs[i]["u"] not in schedules:
                    schedules.append(recs[i]["u"])
            rhos = [spec.rho_values[i] for i in ok]
            priced = _cross_evaluate(cfg, nominals[m.kind.value], schedules, rhos)
            best = {i: min(float(priced[:, j].min()), recs[i]["total_cost"]) for j, i in enumerate(ok)}
            _check_monotone(m, [(spec.rho_values[i], best[i]) for i in ok])
        for i, (rho, rec) in enumerate(zip(spec.rho_values, recs)):
            table.rows.append((m.name, float(rho), best.get(i, math.nan), int(rec["iterations"]),
                               float(rec["wall_time"]), rec["status"]))
    return table


def _check_monotone(m: DistanceMeasure, pairs) -> None:
    pairs = sorted(pairs)
    for (r0, c0), (r1, c1) in zip(pairs, pairs[1:]):
        if c1 < c0:
            raise AssertionError(f"{m.name}: cost decreased from {c0!r} at rho={r0} to {c1!r} at rho={r1}")


# -- size sweep -----------------------------------------------------------------

def size_cell(values: np.ndarray, clusters: int, kind: str, gamma: float, seed: int, eta: float,
              cfg_data: dict, opts: dict) -> dict:
    """Cluster one window, calibrate rho from its size, solve."""
    started = time.perf_counter()
    try:
        c = kmeans(values, clusters, DistanceMeasure(Kind(kind), gamma), seed)
        nom = build_nominal(c, values.shape[0])
        rho = asymptotic_rho(values.shape[0], clusters, eta)
    except Exception as exc:
        log.error("clustering failed: %s", exc)
        return {**_failed(exc), "rho": math.nan}
    rec = solve_cell(cfg_data, nom.to_dict(), rho, opts)
    rec["rho"] = rho
    rec["wall_time"] = time.perf_counter() - started
    return rec


def run_size_sweep(spec: SweepSpec, dataset: Dataset, cfg: SystemConfig, jobs: int = 1,
                   journal: Journal | None = None, resume: bool = False) -> Table:
    """Cost against the number of days, with rho calibrated per window."""
    if spec.clusters < 2:
        raise ValueError("calibration needs at least two clusters")
    cells = []
    layout = []
    for start, months in spec.windows:
        data = window(dataset, start, months)
        X = data.matrix()
        for m in spec.distances:
            key = spec.key("size", m, start, months)
            cells.append((key, size_cell, (X, spec.clusters, m.kind.value, m.sdtw_gamma, spec.seed, spec.eta,
                                           cfg.to_dict(), spec.options())))
            layout.append((key, m, start, months, data.N))
    results = _run_cells(cells, jobs, journal, resume)
    table = Table(SIZE_COLUMNS)
    for m in spec.distances:
        for key, mm, start, months, N in layout:
            if mm != m:
                continue
            rec = results[key]
            table.rows.append((m.name, start.isoformat(), int(months), int(N), float(rec["rho"]),
                               float(rec["total_cost"]), int(rec["iterations"]), float(rec["wall_time"]),
                               rec["status"]))
    return table
