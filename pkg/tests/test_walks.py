from __future__ import annotations

import math

import numpy as np
import pytest

from freebrw.errors import CapExceededError, ConfigError, InsufficientDataError
from freebrw.groups import IDENTITY
from freebrw.streams import make_rng
from freebrw.walks import (StepLaw, WordStacks, convolve, default_step_cap, estimate_drift,
                           estimate_spectral_radius, exact_distribution, exact_distributions, exit_rate_curve,
                           final_lengths, lower_tail_distribution, return_probabilities, sample_exit, sample_step,
                           simulate_exits, simulate_walk)


def tree_return_probabilities(n_max: int) -> np.ndarray:
    """P(|Y_k| = 0) from the distance chain of the simple walk on the 3-regular tree."""
    p = np.zeros(n_max + 2)
    p[0] = 1.0
    out = [1.0]
    for _ in range(n_max):
        q = np.zeros_like(p)
        q[1] += p[0]
        q[2:] += p[1:-1] * 2 / 3
        q[0:-2] += p[1:-1] / 3
        p = q
        out.append(p[0])
    return np.asarray(out)


# ---------------- step law ----------------

def test_step_law_merges_identity_mass(tree3):
    lazy = {"e": 0.5, "a": 0.5}
    law = StepLaw.build(tree3, [1 / 3] * 3, [lazy, {"e": 0.5, "b": 0.5}, {"e": 0.5, "c": 0.5}])
    assert law.outcomes[0] is None
    assert law.probs[0] == pytest.approx(0.5)
    assert sum(law.probs) == pytest.approx(1.0)
    assert law.K == 1


def test_step_law_requires_every_factor(tree3):
    with pytest.raises(ConfigError) as err:
        StepLaw.build(tree3, [1, 0, 0], [[0, 1]] * 3)
    assert any(v.startswith("A3 violated") for v in err.value.violations)


def test_step_law_rejects_bad_factor_law(tree3):
    with pytest.raises(ConfigError) as err:
        StepLaw.build(tree3, [1 / 3] * 3, [[0, 0.5], [0, 1], {"z": 1.0}])
    assert len(err.value.violations) >= 2


def test_sample_step_is_a_single_letter(tree3, srw):
    rng = make_rng(1, "test")
    for _ in range(20):
        step = sample_step(srw, rng)
        assert len(step) == 1 and step[0].element == 1


# ---------------- exact laws ----------------

def test_two_step_return_probability(tree3, srw):
    d2 = exact_distribution(tree3, srw, 2)
    assert d2.prob(IDENTITY) == pytest.approx(1 / 3, abs=1e-15)
    assert d2.total() == pytest.approx(1.0, abs=1e-12)
    assert d2.length_pmf().tolist() == pytest.approx([1 / 3, 0.0, 2 / 3])
    assert len(d2.support) == 1 + 6


def test_convolution_matches_stepping(tree3, srw):
    dists = exact_distributions(tree3, srw, 4)
    twice = convolve(tree3, dists[2], dists[2])
    assert twice.n == 4
    assert set(twice.support) == set(dists[4].support)
    for w, p in dists[4].support.items():
        assert twice.prob(w) == pytest.approx(p, abs=1e-14)


def test_exact_support_cap(tree3, srw):
    with pytest.raises(CapExceededError):
        exact_distribution(tree3, srw, 6, cap=20)


def test_exact_frame(tree3, srw):
    frame = exact_distribution(tree3, srw, 1).to_frame(tree3)
    assert frame.columns.tolist() == ["word", "length", "probability"]
    assert sorted(frame["word"]) == ["1:1", "2:1", "3:1"]


def test_return_probabilities_match_distance_chain(tree3, srw):
    got = return_probabilities(tree3, srw, 12)
    want = tree_return_probabilities(12)
    assert got == pytest.approx(want, abs=1e-12)
    assert got[1::2] == pytest.approx(np.zeros(6))


def test_spectral_radius_of_the_tree(tree3, srw):
    est = estimate_spectral_radius(tree3, srw, 20)
    r = 2 * math.sqrt(2) / 3
    assert est.estimate == pytest.approx(r, abs=0.005)
    assert -math.log(est.estimate) == pytest.approx(-math.log(r), rel=0.03)
    lo, hi = est.interval
    assert lo <= r <= hi <= 1.0
    assert lo <= est.estimate <= hi
    assert est.table.columns.tolist() == ["n", "p_return", "root", "ratio", "richardson"]
    # the plain ratio converges from above and much more slowly
    assert est.table["ratio"].iloc[-1] > est.estimate


def test_spectral_radius_needs_even_horizon(tree3, srw):
    with pytest.raises(InsufficientDataError):
        estimate_spectral_radius(tree3, srw, 7)


# ---------------- simulation ----------------

def test_word_stacks_keep_lengths_in_step(z2z3):
    law = StepLaw.uniform_generators(z2z3)
    stacks = WordStacks(z2z3, 200, depth=2)
    rng = make_rng(7, "stacks")
    for _ in range(25):
        stacks.step(law, rng)
    for row in range(stacks.size):
        w = z2z3.validate(stacks.word(row))
        assert z2z3.word_length(w) == stacks.length[row]
    suffix = stacks.suffix_type()
    assert all(suffix[k] == (z2z3.suffix_type(stacks.word(k)) or 0) for k in range(stacks.size))


def test_word_stacks_subset_step_leaves_other_rows(tree3, srw):
    stacks = WordStacks(tree3, 4)
    stacks.step(srw, make_rng(3, "rows"), rows=np.array([0, 2]))
    assert stacks.length.tolist() == [1, 0, 1, 0]


def test_walk_path_lengths(tree3, srw):
    path = simulate_walk(tree3, srw, 50, rng_state=11)
    assert path.n == 50
    assert path.lengths[0] == 0 and path.suffix_types[0] is None
    steps = np.diff(path.lengths)
    assert set(np.abs(steps).tolist()) <= {1}
    assert all(tree3.word_length(p) == l for p, l in zip(path.positions, path.lengths))


def test_same_seed_same_walk(tree3, srw):
    a = simulate_walk(tree3, srw, 30, rng_state=5)
    b = simulate_walk(tree3, srw, 30, rng_state=5)
    assert a.positions == b.positions


def test_drift_of_the_tree(tree3, srw):
    est = estimate_drift(tree3, srw, 400, 2000, rng_state=17, m_max=4)
    assert est.mean == pytest.approx(1 / 3, abs=4 * est.se + 0.01)
    assert est.exact[1] == pytest.approx(1.0)
    assert est.exact[2] == pytest.approx(2 / 3)


def test_default_step_cap():
    assert default_step_cap(100, 1 / 3) == 1200


def test_sample_exit_records(tree3, srw):
    rec = sample_exit(tree3, srw, 6, 0.5, 1, step_cap=200, rng_state=2)
    assert not rec.censored
    assert rec.T_n >= 6 and (rec.T_n - 6) % 2 == 0
    assert rec.hit_fast == (rec.T_n <= 12)
    assert rec.exit_suffix_type in (1, 2, 3)
    with pytest.raises(ValueError):
        sample_exit(tree3, srw, 10, 0.5, 1, step_cap=5)


def test_sample_exit_censoring(tree3, srw):
    rec = sample_exit(tree3, srw, 40, 40.0, 1, step_cap=1, rng_state=2)
    assert rec.censored and rec.steps == 1 and not rec.hit_fast


def test_batch_exit_times_respect_parity(tree3, srw):
    sims = simulate_exits(tree3, srw, 5, 15, 500, make_rng(1, "exits"), cone=2)
    hit = sims[sims["T"] >= 0]
    assert len(hit) > 0
    assert (hit["T"] >= 5).all()
    assert ((hit["T"] - 5) % 2 == 0).all()
    assert ((sims["final_length"] - 15) % 2 == 0).all()


def test_exit_rate_matches_straight_runs(tree3, srw):
    # at speed 1 the walk must step outward every time: (2/3)^(n-1), or (2/3)^n inside C(1)
    frame = exit_rate_curve(tree3, srw, 1.0, None, [4, 6], 20_000, rng_state=23, eps=0.1, z=4.0)
    for _, row in frame.iterrows():
        p = (2 / 3) ** (row["n"] - 1)
        assert row["p_lo"] <= p <= row["p_hi"]
        assert row["window_successes"] == row["successes"]
        assert row["rate_lo"] <= row["rate"] <= row["rate_hi"]
    cone = exit_rate_curve(tree3, srw, 1.0, 1, [4], 20_000, rng_state=29, z=4.0)
    assert cone.loc[0, "p_lo"] <= (2 / 3) ** 4 <= cone.loc[0, "p_hi"]
    assert cone.loc[0, "cone"] == 1


def test_exit_rate_without_successes_is_a_lower_bound(tree3, srw):
    frame = exit_rate_curve(tree3, srw, 1.0, None, [40], 100, rng_state=31)
    row = frame.iloc[0]
    assert row["successes"] == 0
    assert bool(row["lower_bound_only"])
    assert math.isnan(row["rate"])
    assert math.isfinite(row["rate_lo"]) and math.isinf(row["rate_hi"])


@pytest.mark.slow
def test_exit_rates_approach_the_rate_over_speed(tree3, srw):
    a = 1.2 / 3
    reference = ((1 + a) / 2 * math.log((1 + a) * 3 / 4) + (1 - a) / 2 * math.log((1 - a) * 3 / 2)) / a
    ns = [10, 20, 40]
    every = exit_rate_curve(tree3, srw, a, None, ns, 20_000, rng_state=41)
    cone = exit_rate_curve(tree3, srw, a, 1, ns, 20_000, rng_state=43)
    # the polynomial prefactor pushes the finite-n rate above the limit and it fades like log(n)/n
    assert (every["rate_lo"] > reference).all()
    for k in range(len(ns) - 1):
        assert every["rate_hi"].iloc[k + 1] < every["rate_lo"].iloc[k]
    gap = np.log(every["successes"].to_numpy() / cone["successes"].to_numpy())
    assert abs(np.polyfit(ns, gap, 1)[0]) < 0.01


# ---------------- steps of length two ----------------

def test_z2_z4_one_step_law(z2z4_config):
    G, law = z2z4_config.group, z2z4_config.law
    assert law.K == 2
    pmf = exact_distributions(G, law, 1)[-1].length_pmf()
    assert pmf.tolist() == pytest.approx([0.0, 5 / 6, 1 / 6])


def test_z2_z4_exact_laws(z2z4_config):
    G, law = z2z4_config.group, z2z4_config.law
    dists = exact_distributions(G, law, 8)
    for d in dists:
        assert d.total() == pytest.approx(1.0, abs=1e-12)
        assert max(d.lengths.values()) <= 2 * d.n
    # pruning at distance K·(n_max - k) must not lose returning paths
    got = return_probabilities(G, law, 8)
    assert got == pytest.approx([d.prob(IDENTITY) for d in dists], abs=1e-14)
    cut = lower_tail_distribution(G, law, 8, 4).length_pmf()
    assert cut.size == 5
    assert cut == pytest.approx(dists[-1].length_pmf()[:5], abs=1e-14)


def test_z2_z4_sampled_lengths_match_exact(z2z4_config):
    G, law = z2z4_config.group, z2z4_config.law
    pmf = exact_distributions(G, law, 6)[-1].length_pmf()
    lengths = final_lengths(G, law, 6, 20_000, make_rng(5, "z2z4"))
    assert lengths.max() <= 12
    se = lengths.std() / math.sqrt(lengths.size)
    assert abs(lengths.mean() - float(np.dot(np.arange(pmf.size), pmf))) <= 4 * se
