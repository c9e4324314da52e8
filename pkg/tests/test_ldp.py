from __future__ import annotations

import math

import numpy as np
import pytest

from freebrw.errors import InconsistentInputError, InsufficientDataError
from freebrw.groups import FreeProduct
from freebrw.ldp import (LengthLaw, RateFunction, biconjugate_gap, build_lambda_grid, check_rate_properties,
                         collect_length_laws, convexity_violations, extend_t_grid, lambda_grid, lambda_limit, lambda_n,
                         legendre_transform, log_mgf, lower_convex_hull, solve_speeds)
from freebrw.walks import StepLaw, estimate_spectral_radius, exact_distributions, lower_tail_distribution

T_GRID = np.linspace(-30.0, 30.0, 6001)


def bernoulli_lambda(t):
    """Λ of a walk that moves out by one with probability 1/2 and otherwise stays."""
    return np.logaddexp(0.0, np.asarray(t, dtype=float)) - math.log(2.0)


def bernoulli_rate(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(x > 0, x * np.log(2 * x), 0.0)
        b = np.where(x < 1, (1 - x) * np.log(2 * (1 - x)), 0.0)
    return a + b


@pytest.fixture
def bernoulli() -> RateFunction:
    return legendre_transform(T_GRID, bernoulli_lambda(T_GRID), x_grid=np.linspace(0, 1, 201), K=1, ell=0.5)


# ---------------- Λₙ ----------------

def test_lambda_two_exact(tree3, srw):
    value, se = lambda_n(tree3, srw, 1.0, 2)
    assert value == pytest.approx(0.5 * math.log(1 / 3 + 2 / 3 * math.e ** 2), abs=1e-14)
    assert se == 0.0


def test_lambda_at_zero_is_zero(tree3, srw):
    assert lambda_n(tree3, srw, 0.0, 6)[0] == 0.0


def test_monte_carlo_lambda_agrees_with_exact(tree3, srw):
    exact, _ = lambda_n(tree3, srw, 0.5, 6)
    value, se = lambda_n(tree3, srw, 0.5, 6, method="mc", replicas_or_cap=20_000, rng_state=4)
    assert se > 0
    assert abs(value - exact) <= 4 * se


def test_monte_carlo_lambda_needs_replicas(tree3, srw):
    with pytest.raises(ValueError):
        lambda_n(tree3, srw, 0.5, 6, method="mc", replicas_or_cap=999)
    with pytest.raises(ValueError):
        lambda_n(tree3, srw, 0.5, 6, method="bogus")


def test_log_mgf_of_a_point_mass():
    vals, rel_var = log_mgf([-1.0, 2.0], [3], [1.0])
    assert vals.tolist() == pytest.approx([-3.0, 6.0])
    assert rel_var.tolist() == pytest.approx([0.0, 0.0], abs=1e-12)


def test_lambda_grid_rows(tree3, srw):
    grid = build_lambda_grid(tree3, srw, [-1.0, 0.0, 1.0], exact_ns=[4, 6, 8])
    assert grid.ns == [4, 6, 8]
    assert len(grid.values) == 9
    assert set(grid.values["method"]) == {"exact"}
    assert (grid.values.loc[grid.values["t"] == 0, "value"] == 0).all()
    with pytest.raises(ValueError):
        lambda_grid([LengthLaw.exact(2, [1 / 3, 0.0, 2 / 3])], [1.0, 0.0])


def test_lambda_limit_tags(tree3, srw):
    grid = build_lambda_grid(tree3, srw, [-1.0, 0.0, 1.0], exact_ns=[4, 6, 8, 10])
    hat = lambda_limit(grid)
    assert hat["tag"].tolist() == ["extrapolated", "exact", "upper_bound"]
    at_one = grid.values[(grid.values["t"] == 1.0) & (grid.values["n"] == 10)]
    assert hat.loc[2, "raw"] == pytest.approx(float(at_one["value"].iloc[0]))
    assert int(hat.loc[2, "n_used"]) == 10
    assert (hat["value"] <= hat["raw"] + 1e-12).all()
    assert grid.lambda_hat is hat


def test_lambda_limit_needs_three_n(tree3, srw):
    grid = build_lambda_grid(tree3, srw, [-1.0, 0.0, 1.0], exact_ns=[4, 6])
    with pytest.raises(InsufficientDataError):
        lambda_limit(grid)


def test_noisy_monte_carlo_values_are_dropped():
    rng = np.random.default_rng(0)
    laws = [LengthLaw.exact(n, np.bincount(rng.binomial(n, 0.5, 10_000), minlength=n + 1) / 10_000)
            for n in (4, 6, 8)]
    noisy = LengthLaw.from_lengths(50, rng.binomial(50, 0.5, 50))
    grid = lambda_grid(laws + [noisy], [-20.0, 0.0, 1.0])
    hat = lambda_limit(grid, rel_tol=1e-3)
    assert int(hat.loc[0, "n_used"]) == 8


def test_convexity_violations():
    x = np.arange(5.0)
    assert convexity_violations(x, x ** 2).size == 0
    assert convexity_violations(x, -(x ** 2)).tolist() == [1, 2, 3]


def test_lower_convex_hull():
    x = np.arange(5.0)
    got = lower_convex_hull(x, np.array([0.0, 1.0, 0.5, 2.0, 4.0]))
    assert got.tolist() == pytest.approx([0.0, 0.25, 0.5, 2.0, 4.0])
    assert lower_convex_hull(x, x ** 2).tolist() == pytest.approx((x ** 2).tolist())


# ---------------- Legendre transform ----------------

def test_legendre_transform_closed_form(bernoulli):
    inner = (bernoulli.x_grid >= 0.05) & (bernoulli.x_grid <= 0.95)
    got = bernoulli.values[inner]
    want = bernoulli_rate(bernoulli.x_grid[inner])
    assert np.max(np.abs(got - want)) < 1e-6
    assert bernoulli.values[0] == pytest.approx(math.log(2), abs=1e-6)
    assert bernoulli.values[-1] == pytest.approx(math.log(2), abs=1e-6)
    assert bernoulli.beta == pytest.approx(1.0)
    assert not bernoulli.uncertain.any()


def test_closed_form_on_the_inner_grid():
    x = np.linspace(0.01, 0.99, 101)
    I = legendre_transform(T_GRID, bernoulli_lambda(T_GRID), x_grid=x, K=1)
    assert np.max(np.abs(I.values - bernoulli_rate(x))) <= 1e-6


def test_legendre_transform_beyond_the_hard_bound_is_infinite():
    I = legendre_transform(T_GRID, bernoulli_lambda(T_GRID), x_grid=np.linspace(0, 1.2, 13), K=1)
    assert np.isinf(I.values[I.x_grid > 1.0 + 1e-9]).all()
    assert np.isfinite(I.values[I.x_grid <= 1.0]).all()
    assert I.ell == pytest.approx(0.5)


def test_legendre_transform_flags_unsaturated_slopes():
    t = np.linspace(-2, 2, 401)
    I = legendre_transform(t, bernoulli_lambda(t), x_grid=np.linspace(0, 1, 21), K=1)
    assert I.uncertain[0] and I.uncertain[-1]
    assert np.isfinite(I.values).all()
    assert I.notes


def test_deterministic_outward_walk():
    # Λ(t) = t: the walk moves out every step, so I is finite only at x = 1
    t = np.linspace(-5, 5, 101)
    I = legendre_transform(t, t, x_grid=np.linspace(0, 1, 11), K=1)
    assert np.isinf(I.values[:-1]).all()
    assert I.values[-1] == pytest.approx(0.0, abs=1e-12)
    assert I.beta == 1.0 and I.ell == 1.0
    speeds = solve_speeds(I, rho=2.0)
    assert speeds.v_max == 1.0 and speeds.v_max_case == "sup-domain"
    assert speeds.v_min == 1.0


def test_anchor_is_reported_next_to_I0():
    I = legendre_transform(T_GRID, bernoulli_lambda(T_GRID), x_grid=np.linspace(0, 1, 11), K=1,
                           neg_log_r=0.5, neg_log_r_uncertainty=0.01)
    assert I.values[0] == pytest.approx(math.log(2), abs=1e-6)
    assert I.raw_I0 == I.values[0]
    assert I.neg_log_r == 0.5
    assert I.neg_log_r_uncertainty == 0.01


def test_rate_frame(bernoulli):
    frame = bernoulli.to_frame()
    assert frame.columns.tolist() == ["x", "I", "uncertainty", "branch", "uncertain"]
    assert frame.loc[0, "branch"] == "decreasing"
    assert frame.iloc[-1]["branch"] == "increasing"


def test_extend_t_grid_until_slopes_saturate():
    t, lam = extend_t_grid(bernoulli_lambda, np.linspace(-1, 1, 21), K=1)
    assert t[0] <= -20 and t[-1] >= 20
    assert max(abs(t[0]), abs(t[-1])) <= 240
    assert np.allclose(np.diff(t), 0.1)
    assert lam == pytest.approx(bernoulli_lambda(t))


def test_biconjugate_returns_lambda(bernoulli):
    t = np.linspace(-2, 2, 41)
    gap = biconjugate_gap(bernoulli, t, bernoulli_lambda(t))
    assert gap["gap"].max() < 1e-4


# ---------------- properties ----------------

def test_properties_of_a_genuine_rate_function(bernoulli):
    report = check_rate_properties(bernoulli, ell=0.5, r=0.5)
    assert report.passed, report.to_frame()
    assert set(report.by_name()) == {"finite_interval", "zero_at_drift", "monotone_above_drift",
                                     "ratio_monotone", "convex", "I0_matches_r"}


def test_properties_report_witnesses():
    x = np.linspace(0, 1, 11)
    y = np.abs(x - 0.5) + 0.3 * np.sin(12 * x) ** 2
    I = RateFunction(x, y, np.zeros_like(x), np.zeros(11, dtype=bool), beta=1.0, ell=0.5, K=1.0)
    checks = check_rate_properties(I, ell=0.5, r=0.9).by_name()
    assert not checks["convex"].passed and checks["convex"].witness
    assert not checks["I0_matches_r"].passed
    assert not check_rate_properties(I).passed


def test_I0_check_uses_the_transform_value(bernoulli):
    # the anchor says r = 0.9 but the transform itself gives I(0) = log 2
    I = legendre_transform(T_GRID, bernoulli_lambda(T_GRID), x_grid=np.linspace(0, 1, 201), K=1, ell=0.5,
                           neg_log_r=-math.log(0.9))
    checks = check_rate_properties(I, ell=0.5, r=0.9).by_name()
    assert not checks["I0_matches_r"].passed
    assert "0.693" in checks["I0_matches_r"].witness
    assert check_rate_properties(I, ell=0.5, r=0.5).passed


def test_infinite_I0_fails_the_r_check():
    x = np.linspace(0, 1, 11)
    y = np.where(x < 0.3, np.inf, (x - 0.5) ** 2)
    I = RateFunction(x, y, np.zeros_like(x), np.zeros(11, dtype=bool), beta=1.0, ell=0.5, K=1.0, raw_I0=np.inf)
    assert not check_rate_properties(I, ell=0.5, r=0.9).by_name()["I0_matches_r"].passed


def test_values_in_the_zero_band_may_dip():
    # minimiser a little right of the drift, still inside the zero tolerance
    x = np.linspace(0, 1, 101)
    y = (x - 0.52) ** 2
    I = RateFunction(x, y, np.zeros_like(x), np.zeros(101, dtype=bool), beta=1.0, ell=0.5, K=1.0)
    checks = check_rate_properties(I, ell=0.5).by_name()
    assert checks["monotone_above_drift"].passed
    assert checks["ratio_monotone"].passed


# ---------------- speeds ----------------

def test_speeds_by_intersection(bernoulli):
    speeds = solve_speeds(bernoulli, rho=1.5, r=0.5)
    assert speeds.v_max_case == "intersection"
    assert speeds.v_min_case == "intersection"
    assert bernoulli_rate(speeds.v_max) == pytest.approx(math.log(1.5), abs=1e-3)
    assert speeds.v_min == pytest.approx(1 - speeds.v_max, abs=1e-3)
    assert speeds.v_min < 0.5 < speeds.v_max


def test_speeds_when_log_rho_exceeds_the_rate(bernoulli):
    speeds = solve_speeds(bernoulli, rho=3.0, r=0.5)
    assert speeds.v_max_case == "sup-domain" and speeds.v_max == pytest.approx(1.0)
    assert speeds.v_min_case == "zero" and speeds.v_min == 0.0
    assert speeds.notes


def test_speeds_reject_subcritical_rho(bernoulli):
    with pytest.raises(InconsistentInputError):
        solve_speeds(bernoulli, rho=1.0)


# ---------------- the 3-regular tree ----------------

TREE_DRIFT = 1 / 3


def tree_rate(x):
    """Cramér rate of the ±1 walk stepping out with probability 2/3."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(x > -1, (1 + x) / 2 * np.log((1 + x) * 3 / 4), 0.0)
        b = np.where(x < 1, (1 - x) / 2 * np.log((1 - x) * 3 / 2), 0.0)
    return a + b


@pytest.fixture(scope="module")
def tree3_laws():
    G = FreeProduct.cyclic(2, 2, 2)
    law = StepLaw.uniform_generators(G)
    return collect_length_laws(G, law, exact_ns=[8, 10, 12, 14], mc_ns=[50, 100, 200], replicas=10_000,
                               rng_state=11)


def test_heavy_tailed_monte_carlo_cells_are_not_used(tree3_laws):
    t = np.linspace(-5.0, 5.0, 201)
    hat = lambda_limit(lambda_grid(tree3_laws, t))
    pos = hat[hat["t"] > 0]
    # one step from e, then each step goes out with probability 2/3
    floor = pos["t"] + math.log(2 / 3)
    assert (pos["value"] >= floor - 1e-12).all()
    assert int(pos.loc[pos["t"] == 5.0, "n_used"].iloc[0]) == 14
    assert int(pos["n_used"].iloc[0]) == 200
    I = legendre_transform(t, hat["value"].to_numpy(), K=1, ell=TREE_DRIFT)
    assert I.beta == pytest.approx(1.0)
    assert I.slope_range[1] > 0.99


def test_lower_tail_law_is_exact_below_the_cut(tree3, srw):
    full = LengthLaw.exact(12, exact_distributions(tree3, srw, 12)[-1].length_pmf())
    cut = LengthLaw.lower_tail(12, lower_tail_distribution(tree3, srw, 12, 6).length_pmf(), 6)
    assert cut.weights == pytest.approx(full.weights[:7], abs=1e-14)
    assert cut.tail == pytest.approx(full.weights[7:].sum(), abs=1e-12)
    t = np.array([-3.0, -1.0, 0.5])
    want, _ = full.evaluate(t)
    got, se = cut.evaluate(t)
    assert (got[:2] <= want[:2] + 1e-14).all()
    assert (12 * (want[:2] - got[:2]) <= np.log1p(12 * se[:2]) + 1e-12).all()
    assert np.isinf(se[2])


@pytest.mark.slow
def test_rate_function_of_the_tree_passes_every_check(tree3, srw, tree3_laws):
    tails = collect_length_laws(tree3, srw, tail_ns=[16, 18, 20], tail_j_max=10)
    t = np.linspace(-30.0, 30.0, 6001)
    hat = lambda_limit(lambda_grid(list(tree3_laws) + tails, t))
    r_hat = estimate_spectral_radius(tree3, srw, 20).estimate
    I = legendre_transform(t, hat["value"].to_numpy(), K=1, ell=TREE_DRIFT, neg_log_r=-math.log(r_hat))
    report = check_rate_properties(I, ell=TREE_DRIFT, r=r_hat)
    assert report.passed, report.to_frame()
    r = 2 * math.sqrt(2) / 3
    assert I.raw_I0 == pytest.approx(-math.log(r), rel=0.15)
    x = np.linspace(0.05, 0.95, 19)
    got = np.array([I.value_at(v) for v in x])
    assert np.max(np.abs(got - tree_rate(x))) <= 0.035
