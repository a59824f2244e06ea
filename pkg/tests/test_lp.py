from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from druc.lp import (
    EQ,
    GE,
    INFEASIBLE,
    ITERATION_LIMIT,
    LE,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    solve_lp,
    solve_milp,
    write_lp,
)
from druc.model import SystemConfig, build_first_stage, default_fleet

BACKENDS = ["highs", "simplex"]


@pytest.mark.parametrize("backend", BACKENDS)
def test_min_x_at_least_three(backend):
    res = solve_lp(LinearProgram.build([1.0], [[1.0]], GE, [3.0]), backend)
    assert res.status == OPTIMAL
    assert res.x[0] == pytest.approx(3.0) and res.objective == pytest.approx(3.0)
    assert res.duals[0] == pytest.approx(1.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_max_x_below_five(backend):
    res = solve_lp(LinearProgram.build([-1.0], [[1.0]], LE, [5.0]), backend)
    assert res.x[0] == pytest.approx(5.0)
    assert res.duals[0] == pytest.approx(-1.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_degenerate_redundant_rows(backend):
    # min -x - y, x + y <= 2 stated three ways, x <= 2, y <= 2; vertex (2,0),(0,2) and face: objective -2
    A = [[1, 1], [2, 2], [1, 1], [1, 0], [0, 1]]
    res = solve_lp(LinearProgram.build([-1.0, -1.0], A, (LE, LE, EQ, LE, LE), [2, 4, 2, 2, 2]), backend)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-2.0)
    assert res.x.sum() == pytest.approx(2.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_infeasible_and_unbounded(backend):
    infeasible = LinearProgram.build([1.0], [[1.0], [1.0]], (GE, LE), [3.0, 1.0])
    assert solve_lp(infeasible, backend).status == INFEASIBLE
    unbounded = LinearProgram.build([-1.0, 0.0], [[1.0, -1.0]], LE, [1.0])
    assert solve_lp(unbounded, backend).status == UNBOUNDED


@pytest.mark.parametrize("backend", BACKENDS)
def test_free_and_boxed_variables(backend):
    # min x - y, x free with x >= -4 via a row, y in [1, 3]
    lp = LinearProgram.build([1.0, -1.0], [[1.0, 0.0]], GE, [-4.0], lower=[-np.inf, 1.0], upper=[np.inf, 3.0])
    res = solve_lp(lp, backend)
    assert res.objective == pytest.approx(-7.0)
    assert res.duals[0] == pytest.approx(1.0)


def test_beale_cycling_example():
    # classic instance on which textbook Dantzig pivoting cycles; optimum -1/20
    c = [-0.75, 150.0, -0.02, 6.0]
    A = [[0.25, -60.0, -0.04, 9.0], [0.5, -90.0, -0.02, 3.0], [0.0, 0.0, 1.0, 0.0]]
    res = solve_lp(LinearProgram.build(c, A, LE, [0.0, 0.0, 1.0]), "simplex")
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-0.05)


def test_validation():
    with pytest.raises(ValueError):
        LinearProgram.build([1.0, 2.0], [[1.0]], GE, [1.0])
    with pytest.raises(ValueError):
        LinearProgram.build([1.0], [[1.0]], "<>", [1.0])
    with pytest.raises(ValueError):
        LinearProgram.build([np.nan], [[1.0]], GE, [1.0])
    with pytest.raises(ValueError):
        solve_lp(LinearProgram.build([1.0], integer=[True]))
    with pytest.raises(ValueError):
        solve_lp(LinearProgram.build([1.0]), "cplex")


@st.composite
def feasible_lps(draw):
    """Covering rows A x >= b plus loose packing rows; x >= 0 and c > 0 keep it bounded."""
    n = draw(st.integers(1, 5))
    m = draw(st.integers(1, 5))
    floats = st.floats(0.1, 10.0)
    A_cov = np.array(draw(st.lists(st.lists(floats, min_size=n, max_size=n), min_size=m, max_size=m)))
    b_cov = np.array(draw(st.lists(floats, min_size=m, max_size=m)))
    c = np.array(draw(st.lists(floats, min_size=n, max_size=n)))
    A_pack = np.ones((1, n))
    A = np.vstack([A_cov, A_pack])
    b = np.r_[b_cov, 1e3]
    return LinearProgram.build(c, A, (GE,) * m + (LE,), b)


@pytest.mark.parametrize("backend", BACKENDS)
@given(lp=feasible_lps())
def test_strong_duality(backend, lp):
    res = solve_lp(lp, backend)
    assert res.status == OPTIMAL
    y = res.duals
    assert lp.max_violation(res.x) <= 1e-7
    assert lp.b @ y == pytest.approx(res.objective, rel=1e-6, abs=1e-6)
    # dual feasibility for x >= 0: reduced costs nonnegative; signs follow d obj / d b
    red = lp.c - lp.A.T @ y
    assert np.all(red >= -1e-7)
    senses = np.array(lp.senses)
    assert np.all(y[senses == GE] >= -1e-9) and np.all(y[senses == LE] <= 1e-9)
    # complementary slackness
    slack = lp.A @ res.x - lp.b
    assert np.all(np.abs(slack * y) <= 1e-6)
    assert np.all(np.abs(res.x * red) <= 1e-6)


@given(lp=feasible_lps())
def test_backends_agree(lp):
    assert solve_lp(lp, "simplex").objective == pytest.approx(solve_lp(lp, "highs").objective, rel=1e-8, abs=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
def test_binary_trivial_and_knapsack(backend):
    res = solve_milp(LinearProgram.build([-1.0], upper=1.0, integer=True), backend)
    assert res.x[0] == 1.0
    res = solve_milp(LinearProgram.build([-3.0, -2.0], [[1.0, 1.0]], LE, [1.0], upper=1.0, integer=True), backend)
    assert res.x.tolist() == [1.0, 0.0] and res.objective == pytest.approx(-3.0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_milp_infeasible(backend):
    lp = LinearProgram.build([1.0], [[2.0], [2.0]], (GE, LE), [1.0, 1.5], upper=1.0, integer=True)
    assert solve_milp(lp, backend).status == INFEASIBLE


@st.composite
def knapsacks(draw):
    n = draw(st.integers(2, 8))
    w = np.array(draw(st.lists(st.integers(1, 20), min_size=n, max_size=n)), float)
    v = np.array(draw(st.lists(st.integers(1, 30), min_size=n, max_size=n)), float)
    cap = draw(st.integers(1, int(w.sum())))
    return w, v, float(cap)


@given(knapsacks())
def test_branch_and_bound_against_enumeration(args):
    w, v, cap = args
    lp = LinearProgram.build(-v, [w], LE, [cap], upper=1.0, integer=True)
    res = solve_milp(lp, "simplex")
    brute = max(v @ np.array(bits) for bits in itertools.product((0, 1), repeat=w.size) if w @ np.array(bits) <= cap)
    assert -res.objective == pytest.approx(brute)
    assert all(res.objective <= b + 1e-6 for b in res.fathomed_bounds)


def test_node_limit_keeps_incumbent():
    rng = np.random.default_rng(3)
    w = rng.integers(10, 60, 25).astype(float)
    v = w + rng.integers(0, 5, 25)
    lp = LinearProgram.build(-v, [w], LE, [w.sum() / 2 + 0.5], upper=1.0, integer=True)
    res = solve_milp(lp, "simplex", node_limit=5)
    assert res.status == ITERATION_LIMIT
    assert "node limit" in res.message


@pytest.mark.parametrize("backend", BACKENDS)
def test_resolve_is_deterministic(backend):
    fs = build_first_stage(SystemConfig(default_fleet(4).units[:1], horizon=4))
    lp = fs.as_lp()
    a, b = solve_milp(lp, backend), solve_milp(lp, backend)
    assert a.objective == b.objective and np.array_equal(a.x, b.x)


def test_one_unit_four_hours_against_enumeration():
    """First stage of a 1-unit 4-hour reduction with a rewarding cost vector."""
    cfg = SystemConfig(default_fleet(4).units[2:], horizon=4)
    fs = build_first_stage(cfg)
    rng = np.random.default_rng(0)
    for _ in range(5):
        c = fs.c + rng.normal(0, 800, fs.num_vars)
        lp = LinearProgram.build(c, fs.A, fs.senses, fs.b, 0.0, 1.0, True)
        best = min(
            c @ x for x in map(np.array, itertools.product((0, 1), repeat=fs.num_vars))
            if lp.max_violation(x) <= 1e-9
        )
        for backend in BACKENDS:
            assert solve_milp(lp, backend).objective == pytest.approx(best, rel=1e-9, abs=1e-9)


def test_fleet_first_stage_144_binaries(fleet):
    fs = build_first_stage(fleet)
    assert fs.num_vars == 144
    rng = np.random.default_rng(1)
    lp = LinearProgram.build(fs.c - rng.uniform(0, 2000, 144), fs.A, fs.senses, fs.b, 0.0, 1.0, True)
    res = solve_milp(lp)
    assert res.status == OPTIMAL
    assert lp.max_violation(res.x) <= 1e-9
    assert np.all(np.isin(res.x, (0.0, 1.0)))


def test_write_lp(tmp_path):
    lp = LinearProgram.build([1.0, -2.0], [[1.0, 1.0], [1.0, -1.0]], (LE, EQ), [4.0, 1.0],
                             lower=[0.0, -np.inf], upper=[1.0, np.inf], integer=[True, False], offset=3.0)
    text = write_lp(lp, tmp_path / "m.lp").read_text()
    assert text.startswith("\\")
    for piece in ("Minimize", "Subject To", "r0: + 1.0 x0 + 1.0 x1 <= 4.0", "r1: + 1.0 x0 - 1.0 x1 = 1.0",
                  "-inf <= x1 <= +inf", "General", " x0", "End"):
        assert piece in text
