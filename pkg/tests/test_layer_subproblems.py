import itertools
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from stochnum import layer_subproblems as ls
from stochnum import net_model as nm
from stochnum.layer_subproblems import Multipliers, PowerCost, Utility

LN2 = math.log(2)


def foc_root(x, ell, nu, V, B, N0, P_max, P_min):
    """Independent oracle: bracketed root of the first-order condition."""
    a = 10 ** (-x / 10)
    slope = lambda P: -2 * V * P + ell * B * a / (LN2 * (N0 + a * P)) - nu  # noqa: E731
    if slope(P_min) <= 0:
        return P_min
    if slope(P_max) >= 0:
        return P_max
    return brentq(slope, P_min, P_max, xtol=1e-14, rtol=1e-15, maxiter=500)


# -- congestion and routing --------------------------------------------------------------

def test_log_rate():
    u = Utility()
    assert ls.congestion_optimal_rate(u, 0.5, lambda_max=2.0) == pytest.approx(2.0)
    assert ls.congestion_optimal_rate(u, 0.5, lambda_max=5.0) == pytest.approx(2.0)
    assert ls.congestion_optimal_rate(u, 0.0, lambda_max=3.0) == 3.0
    assert ls.congestion_optimal_rate(u, 1e12, lambda_max=1.0) == ls.LAMBDA_EPS


def test_log_over_time_rate():
    u = Utility(ls.LOG_OVER_TIME)
    assert ls.congestion_optimal_rate(u, 1.0, 2.0, lambda_max=1.0) == pytest.approx(0.5)
    assert ls.congestion_optimal_rate(u, 1.0, 1.0, lambda_max=1.0) == pytest.approx(1.0)


def test_alpha_fair_and_sigmoid_rates():
    u = Utility(ls.ALPHA_FAIR, alpha=2.0)
    assert ls.congestion_optimal_rate(u, 4.0, lambda_max=5.0) == pytest.approx(0.5)
    s = Utility(ls.SIGMOID, steepness=10.0, midpoint=0.5)
    lam = float(ls.congestion_optimal_rate(s, 0.3, lambda_max=1.0))
    xs = np.linspace(0, 1, 100001)
    best = xs[np.argmax(s.value(xs) - 0.3 * xs)]
    assert lam == pytest.approx(best, abs=1e-4)


def test_zero_rate_cap():
    assert ls.congestion_optimal_rate(Utility(), 1.0, lambda_max=0.0) == 0.0


@pytest.mark.parametrize("mi,mj,l,expected", [(3, 1, 1, 1.0), (1, 1, 0.5, 0.0), (2, 1, 1, 0.0)])
def test_routing(mi, mj, l, expected):
    assert ls.routing_optimal(mi, mj, l, 1.0) == expected


# -- power control ----------------------------------------------------------------------

def test_power_closed_form_example():
    P = ls.power_optimal_quadratic(0.0, 1.0, 0.0, 1.0, LN2, 0.1, 10.0)
    assert P == pytest.approx((-0.2 + math.sqrt(8.04)) / 4, abs=1e-12)
    assert P == pytest.approx(0.658873, abs=1e-6)


def test_power_limits():
    assert ls.power_optimal_quadratic(0.0, 0.0, 0.5, 1.0, 1e6, 0.1, 3.0) == 0.0
    assert ls.power_optimal_quadratic(400.0, 1.0, 0.0, 1.0, 1e6, 0.1, 3.0) < 1e-30


def test_power_matches_root_finder_1000_inputs():
    gen = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        x = gen.uniform(-20, 120)
        ell = gen.uniform(0, 5)
        nu = gen.uniform(0, 5)
        V = gen.uniform(0.1, 5)
        B = 10 ** gen.uniform(0, 6)
        P_min = gen.choice([0.0, 1.0])
        P = ls.power_optimal_quadratic(x, ell, nu, V, B, 0.1, 3.0, P_min)
        worst = max(worst, abs(P - foc_root(x, ell, nu, V, B, 0.1, 3.0, P_min)))
    assert worst <= 1e-9


def test_power_cap_bound():
    assert ls.power_cap_bound(1.0, 0.0, 1.0, LN2) == pytest.approx(1 / math.sqrt(2), rel=1e-12)
    assert ls.power_cap_bound(0.0, 1.0, 1.0, LN2) == 0.0
    nus = np.linspace(0, 100, 50)
    caps = ls.power_cap_bound(1.0, nus, 1.0, LN2)
    assert np.all(np.diff(caps) < 0) and caps[-1] < 0.01


def test_power_never_exceeds_cap_and_is_monotone_in_loss():
    gen = np.random.default_rng(3)
    xs = np.linspace(-60, 160, 441)
    for _ in range(200):
        ell, nu, V = gen.uniform(0, 5), gen.uniform(0, 5), gen.uniform(0.1, 5)
        B = 10 ** gen.uniform(0, 6)
        P = ls.power_optimal_quadratic(xs, ell, nu, V, B, 0.1, np.inf)
        cap = ls.power_cap_bound(ell, nu, V, B)
        assert np.all(P <= cap * (1 + 1e-12))
        assert np.all(np.diff(P) <= 0)


def test_generic_power():
    cost = PowerCost("quadratic", 0.7)
    gen = np.random.default_rng(5)
    x = gen.uniform(0, 90, 300)
    ell, nu = gen.uniform(0, 3, 300), gen.uniform(0, 3, 300)
    a = ls.power_optimal_generic(cost, x, ell, nu, 1e6, 0.1, 3.0)
    b = ls.power_optimal_quadratic(x, ell, nu, 0.7, 1e6, 0.1, 3.0)
    np.testing.assert_allclose(a, b, atol=1e-9, rtol=0)
    zero = PowerCost("zero")
    assert ls.power_optimal_generic(zero, 50.0, 1.0, 0.0, 1e6, 0.1, 3.0) == 3.0
    assert ls.power_optimal_generic(cost, 50.0, 0.0, 0.3, 1e6, 0.1, 3.0) == 0.0


# -- scheduling -------------------------------------------------------------------------

PATH = nm.enumerate_maximal_independent_sets((frozenset({1}), frozenset({0, 2}), frozenset({1})))


@pytest.mark.parametrize("w,expected", [((2, 5, 2), (1,)), ((1, 1, 1), (0, 2)),
                                        ((-1, 3, -1), (1,))])
def test_max_weight(w, expected):
    assert PATH.sets[ls.schedule_max_weight(w, PATH)] == expected
    batched = ls.Scheduler(PATH).choose(np.array([w], dtype=float))
    assert PATH.sets[batched[0]] == expected


def test_scheduler_ties_pick_lowest_index():
    assert ls.Scheduler(PATH).choose(np.zeros((1, 3)))[0] == 0


# -- non-orthogonal power heuristic -----------------------------------------------------

def _nonortho_net(n_links):
    links = tuple((2 * k, 2 * k + 1) for k in range(n_links))
    conflicts = tuple(frozenset(set(range(n_links)) - {e}) for e in range(n_links))
    return nm.Network(2 * n_links, links, conflicts=conflicts, P_max=3.0)


def test_heuristic_single_link_matches_generic():
    net = nm.Network(2, ((0, 1),), conflicts=(frozenset(),), P_max=3.0)
    imap = nm.interference_map(net)
    cost = PowerCost("quadratic", 0.5)
    m = Multipliers(np.zeros((2, 1)), np.array([1.3]), np.array([0.4, 0.0]))
    gains = np.array([[10 ** -6.5], [10 ** -7.2], [1e-9]])
    P = ls.power_nonorthogonal_heuristic(gains, m, net, cost, imap)
    x = -10 * np.log10(gains[:, 0])
    ref = ls.power_optimal_generic(cost, x, 1.3, 0.4, 1e6, 0.1, 3.0)
    np.testing.assert_allclose(P[:, 0], ref, atol=1e-6)


def test_heuristic_beats_simple_patterns_and_grid():
    net = _nonortho_net(3)
    imap = nm.interference_map(net)
    cost = PowerCost("quadratic", 0.5)
    gen = np.random.default_rng(1)
    gains = 10 ** (-gen.uniform(68, 72, size=(4, imap.n_channels)) / 10)
    m = Multipliers(np.zeros((6, 1)), np.array([1.0, 2.0, 1.5]), np.full(6, 0.2))
    P = ls.power_nonorthogonal_heuristic(gains, m, net, cost, imap)
    val = ls.nonorthogonal_objective(gains, P, m, net, cost, imap)
    grid = np.arange(0, 3.0001, 0.25)
    combos = np.array(list(itertools.product(grid, repeat=3)))
    for s in range(gains.shape[0]):
        g = np.repeat(gains[s:s + 1], len(combos), axis=0)
        best = ls.nonorthogonal_objective(g, combos, m, net, cost, imap).max()
        assert val[s] >= 0.999 * best - 1e-12
    two = _nonortho_net(2)
    imap2 = nm.interference_map(two)
    m2 = Multipliers(np.zeros((4, 1)), np.array([1.0, 1.0]), np.zeros(4))
    g2 = np.full((1, imap2.n_channels), 1e-7)
    P2 = ls.power_nonorthogonal_heuristic(g2, m2, two, cost, imap2)
    v = ls.nonorthogonal_objective(g2, P2, m2, two, cost, imap2)[0]
    for pattern in ([3.0, 3.0], [3.0, 0.0], [0.0, 3.0]):
        assert v >= ls.nonorthogonal_objective(g2, np.array([pattern]), m2, two, cost, imap2)[0]
