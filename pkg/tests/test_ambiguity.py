from __future__ import annotations

import math
from statistics import NormalDist
from types import SimpleNamespace

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy import stats
from scipy.optimize import minimize_scalar

from druc.ambiguity import (
    AmbiguitySet,
    NominalDistribution,
    asymptotic_rho,
    build_nominal,
    chi2_quantile,
    dual_objective,
    kl_divergence,
    optimal_mu,
    worst_case_dual,
    worst_case_expectation,
)
from druc.cluster import ED, kmeans


def amb(probs, rho, H=1):
    probs = np.asarray(probs, float)
    return AmbiguitySet(NominalDistribution(np.zeros((probs.size, H)), probs), rho)


def primal_oracle(q, pi, rho):
    """max p.q over the KL ball, solved as an exponential-cone program."""
    p = cp.Variable(len(q), nonneg=True)
    prob = cp.Problem(cp.Maximize(q @ p), [cp.sum(p) == 1, cp.sum(cp.rel_entr(p, pi)) <= rho])
    prob.solve(solver=cp.CLARABEL)
    return prob.value


def simplex(n):
    return st.lists(st.floats(0.05, 1.0), min_size=n, max_size=n).map(lambda w: np.array(w) / sum(w))


# -- build_nominal ------------------------------------------------------------

def test_nominal_from_counts():
    c = SimpleNamespace(labels=np.r_[np.zeros(30, int), np.ones(70, int)], centroids=np.zeros((2, 24)))
    n = build_nominal(c, 100)
    assert n.probs.tolist() == [0.3, 0.7]


def test_nominal_single_cluster():
    c = SimpleNamespace(labels=np.zeros(5, int), centroids=np.ones((1, 24)))
    assert build_nominal(c).probs.tolist() == [1.0]


def test_nominal_from_year(year):
    c = kmeans(year, 12, ED, seed=0)
    n = build_nominal(c, year.N)
    recount = [sum(1 for lab in c.labels if lab == k) / 365 for k in range(12)]
    assert abs(n.probs.sum() - 1.0) <= 1e-12
    assert np.allclose(n.probs, recount, rtol=0, atol=1e-15)
    assert np.array_equal(n.support, c.centroids)


def test_nominal_errors():
    c = SimpleNamespace(labels=np.array([0, 0, 2]), centroids=np.zeros((3, 24)))
    with pytest.raises(ValueError, match="empty"):
        build_nominal(c)
    with pytest.raises(ValueError):
        build_nominal(SimpleNamespace(labels=np.array([0, 1]), centroids=np.zeros((2, 24))), 3)
    with pytest.raises(ValueError):
        NominalDistribution(np.zeros((2, 24)), [0.5, 0.6])
    with pytest.raises(ValueError):
        AmbiguitySet(NominalDistribution(np.zeros((1, 24)), [1.0]), -0.1)


def test_nominal_json_round_trip(tmp_path, desk_nominal):
    desk_nominal.dump(tmp_path / "n.json")
    back = NominalDistribution.load(tmp_path / "n.json")
    assert np.array_equal(back.support, desk_nominal.support)
    assert np.array_equal(back.probs, desk_nominal.probs)


# -- KL -----------------------------------------------------------------------

def test_kl_examples():
    assert kl_divergence([0.2, 0.8], [0.2, 0.8]) == 0.0
    assert kl_divergence([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2), rel=1e-15)
    assert kl_divergence([0.4, 0.6], [0.5, 0.5]) == pytest.approx(0.4 * math.log(0.8) + 0.6 * math.log(1.2))
    assert kl_divergence([0.4, 0.6], [0.5, 0.5]) == pytest.approx(0.020136, abs=1e-6)
    with pytest.raises(ValueError):
        kl_divergence([0.5, 0.5], [1.0, 0.0])


@given(simplex(4), simplex(4))
def test_kl_nonnegative_and_matches_scipy(p, q):
    d = kl_divergence(p, q)
    assert d >= 0
    assert d == pytest.approx(stats.entropy(p, q), rel=1e-9, abs=1e-15)
    if not np.allclose(p, q):
        assert d > 0


# -- calibration ----------------------------------------------------------------

def test_asymptotic_rho_chi2_one_dof():
    assert asymptotic_rho(100, 2, 0.05) == pytest.approx(0.019207, abs=1e-5)


def test_asymptotic_rho_year_of_days():
    # printed table value for 11 degrees of freedom at 0.98
    assert asymptotic_rho(365, 12, 0.02) == pytest.approx(22.618 / 730, abs=1e-3 / 730)


@given(st.floats(1e-6, 0.5))
def test_chi2_quantile_closed_forms(eta):
    # dof 1 is a squared standard normal, dof 2 an exponential with mean 2
    z = NormalDist().inv_cdf(1 - eta / 2)
    assert chi2_quantile(1 - eta, 1) == pytest.approx(z * z, rel=1e-8)
    assert chi2_quantile(1 - eta, 2) == pytest.approx(-2 * math.log(eta), rel=1e-10)


def test_chi2_quantile_domain():
    with pytest.raises(ValueError):
        chi2_quantile(1.0, 3)
    with pytest.raises(ValueError):
        chi2_quantile(0.5, 0)


@given(st.integers(1, 10_000), st.integers(2, 30))
def test_rho_scales_as_inverse_n(N, S):
    assert asymptotic_rho(N, S, 0.02) / asymptotic_rho(2 * N, S, 0.02) == pytest.approx(2.0, rel=1e-12)
    assert asymptotic_rho(N + 1, S, 0.02) < asymptotic_rho(N, S, 0.02)


def test_asymptotic_rho_errors():
    for eta in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            asymptotic_rho(100, 3, eta)
    with pytest.raises(ValueError):
        asymptotic_rho(100, 1, 0.05)


# -- worst case ------------------------------------------------------------------

def test_constant_payoff():
    for rho in (0.0, 0.3, 50.0):
        assert worst_case_expectation([7.0, 7.0, 7.0], amb([0.2, 0.3, 0.5], rho))[0] == pytest.approx(7.0)


def test_rho_zero_is_nominal():
    v, p = worst_case_expectation([1.0, 4.0, 2.0], amb([0.2, 0.3, 0.5], 0.0))
    assert v == 0.2 + 1.2 + 1.0
    assert np.array_equal(p, [0.2, 0.3, 0.5])


def test_large_rho_hits_the_worst_scenario():
    v, p = worst_case_expectation([0.0, 10.0], amb([0.5, 0.5], 50.0))
    assert v == pytest.approx(10.0, rel=1e-9)
    assert p[1] == pytest.approx(1.0)


def test_two_point_against_grid():
    v, _ = worst_case_expectation([0.0, 10.0], amb([0.5, 0.5], 0.1))
    grid = np.linspace(0, 1, 2_000_001)
    kl = np.where(grid > 0, grid * np.log(np.where(grid > 0, 2 * grid, 1)), 0)
    kl += np.where(grid < 1, (1 - grid) * np.log(np.where(grid < 1, 2 * (1 - grid), 1)), 0)
    best = 10 * grid[kl <= 0.1].max()
    assert 5 < v < 10
    assert v == pytest.approx(best, rel=1e-5)


@given(st.integers(2, 5).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-100, 1000), min_size=n, max_size=n).map(np.array),
    simplex(n),
    st.floats(1e-3, 3.0),
)))
def test_dual_matches_exponential_cone_primal(args):
    q, pi, rho = args
    assume(q.max() - q.min() > 1e-3)
    v, p = worst_case_expectation(q, amb(pi, rho))
    assert v == pytest.approx(primal_oracle(q, pi, rho), rel=1e-5, abs=1e-5)
    assert kl_divergence(p, pi) <= rho + 1e-6
    assert p @ q == pytest.approx(v, abs=1e-6 * max(1.0, abs(v)))
    assert pi @ q - 1e-9 <= v <= q.max() + 1e-9


@given(st.integers(2, 5).flatmap(lambda n: st.tuples(
    st.lists(st.floats(0, 500), min_size=n, max_size=n).map(np.array), simplex(n))))
def test_nondecreasing_in_rho(args):
    q, pi = args
    values = [worst_case_expectation(q, amb(pi, r))[0] for r in np.linspace(0, 2, 21)]
    assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(values, values[1:]))


def test_primal_dual_consistency(rng):
    for _ in range(20):
        q = rng.uniform(0, 100, 4)
        pi = rng.dirichlet(np.ones(4))
        wc = worst_case_dual(q, amb(pi, 0.2))
        assert dual_objective(q, pi, 0.2, wc.mu, wc.zeta) == pytest.approx(wc.probs @ q, abs=1e-6)


def test_optimal_mu_against_scalar_search(rng):
    for _ in range(10):
        q = rng.uniform(0, 50, 5)
        pi = rng.dirichlet(np.ones(5))
        zeta = rng.uniform(0.5, 20)
        res = minimize_scalar(lambda m: dual_objective(q, pi, 0.1, m, zeta), bracket=(q.min(), q.max()),
                              options={"xtol": 1e-12})
        assert optimal_mu(q, pi, zeta) == pytest.approx(res.x, abs=1e-5 * zeta)


def test_wrong_length_rejected():
    with pytest.raises(ValueError):
        worst_case_expectation([1.0, 2.0, 3.0], amb([0.5, 0.5], 0.1))


def test_near_tied_maxima_share_the_mass():
    q = np.array([0.0, 1000.0, 1000.0 - 1e-13])
    pi = np.full(3, 1 / 3)
    v, p = worst_case_expectation(q, amb(pi, 1.0))
    assert kl_divergence(p, pi) <= 1.0
    assert p == pytest.approx([0.0, 0.5, 0.5], abs=1e-5)
    assert v == pytest.approx(1000.0, rel=1e-15)
