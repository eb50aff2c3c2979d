import math

import numpy as np
import pytest

from msgibbs.entropy import entropy_profile
from msgibbs.ldp import (
    BaseMeasure,
    Histogram,
    ReinforcementParams,
    empirical_rate_estimate,
    exact_log_multinomial_pmf,
    kl_divergence,
    multinomial_sample,
    nested_log_probability,
    rate_function,
    reinforce_balls,
    reinforcement_log_pmf,
    run_reinforced_multiscale,
    run_reinforced_two_scale,
    tilted_rate_minimizer,
)
from msgibbs.measure import build_measure
from msgibbs.space import CostTensor, ProductSpace, ScaleParams, random_hamiltonian
from msgibbs.variational import zetas_from_multipliers
from msgibbs.entropy import Multipliers
from oracles import log_multinomial

SPACE = ProductSpace((2, 2))
Q = BaseMeasure.uniform(SPACE)
P1 = np.array([0.3, 0.7])

# -(1/n) log P of the nested event and the rate, from 30-digit evaluations of
# the multinomial and binomial factors written out by hand
LADDER = {
    1.0: ([[0.5, 0.5], [0.2, 0.8]],
          (0.424106123908473562, 0.362768091031762203, 0.353535087529843454), 0.352125538335512248),
    0.0: ([[0.5, 0.5], [0.2, 0.8]],
          (0.282326216460088379, 0.227154343100395924, 0.218544450188223701), 0.217204208420282047),
    -0.5: ([[0.4, 0.6], [0.2, 0.8]],
           (0.253788497622893411, 0.168582202486712235, 0.154920943779762107), 0.152763870495270278),
}


def test_sanov_uniform_value():
    h = Histogram(SPACE, [25, 25, 25, 25])
    assert -exact_log_multinomial_pmf(h, Q) / 100 == pytest.approx(0.0690448144834765, abs=1e-13)


def test_pmf_matches_oracle(rng):
    q = BaseMeasure(SPACE, rng.dirichlet(np.ones(4)).reshape(2, 2))
    h = Histogram(SPACE, [3, 0, 5, 2])
    assert exact_log_multinomial_pmf(h, q) == pytest.approx(log_multinomial([3, 0, 5, 2], q.q.ravel()), abs=1e-12)


def test_pmf_sums_to_one_for_small_n():
    from itertools import product

    q = BaseMeasure(SPACE, np.array([[0.1, 0.2], [0.3, 0.4]]))
    total = math.fsum(
        math.exp(exact_log_multinomial_pmf(Histogram(SPACE, c), q))
        for c in product(range(5), repeat=4) if sum(c) == 4
    )
    assert total == pytest.approx(1.0, abs=1e-13)


def test_kl_divergence():
    assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0
    assert kl_divergence([1.0, 0.0], [0.0, 1.0]) == math.inf
    assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2))


def test_multinomial_sample_is_seeded():
    a = multinomial_sample(1000, Q, 42)
    b = multinomial_sample(1000, Q, 42)
    np.testing.assert_array_equal(a.counts, b.counts)
    assert a.n == 1000


@pytest.mark.parametrize("gamma", [-0.5, 0.0, 0.3, 1.0, 2.7])
def test_reinforcement_mean_and_pmf(gamma):
    rng = np.random.default_rng(1)
    draws = np.array([reinforce_balls(50, gamma, rng) for _ in range(4000)])
    assert abs(draws.mean() - 50 * (1 + gamma)) < 5 * max(draws.std(), 1e-9) / math.sqrt(4000) + 1e-12
    support = np.arange(0, 50 * 4 + 1)
    probs = np.exp([reinforcement_log_pmf(50, gamma, t) for t in support])
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_reinforcement_edge_cases():
    assert reinforce_balls(0, 1.5, 3) == 0
    assert reinforce_balls(7, 1.0, 3) == 14
    with pytest.raises(ValueError):
        reinforce_balls(5, -1.0, 3)


def test_two_scale_matches_multiscale_with_unreinforced_root():
    a = run_reinforced_two_scale(5000, 0.6, Q, 99)
    b = run_reinforced_multiscale(5000, (0.6, 0.0), Q, 99)
    for level in range(3):
        np.testing.assert_array_equal(a.node_counts[level], b.node_counts[level])


def test_multiscale_stage_one_does_not_depend_on_gamma():
    a = run_reinforced_multiscale(2000, (0.2, 0.0), Q, 5)
    b = run_reinforced_multiscale(2000, (1.7, 0.0), Q, 5)
    np.testing.assert_array_equal(a.node_counts[1], b.node_counts[1])


def test_multiscale_counts_are_cumulative():
    space = ProductSpace((2, 2, 2))
    o = run_reinforced_multiscale(1000, (1.0, 1.0, 0.0), BaseMeasure.uniform(space), 3)
    assert o.histogram.n == 4000
    for level in range(1, 4):
        np.testing.assert_array_equal(o.node_counts[level].sum(axis=-1), o.reinforced[level])


def test_rate_function_weights_and_null_boxes():
    p = P1[:, None] * np.array([[0.5, 0.5], [0.2, 0.8]])
    assert rate_function(p, Q, (1.0, 0.0)) == pytest.approx(LADDER[1.0][2], abs=1e-15)
    q = BaseMeasure(SPACE, np.array([[0.5, 0.0], [0.25, 0.25]]))
    assert rate_function(p, q, (0.0, 0.0)) == math.inf


def test_rate_function_is_reweighted_entropy(rng):
    space = ProductSpace((3, 4))
    p = rng.dirichlet(np.ones(12)).reshape(space.shape)
    prof = entropy_profile(p, space)
    expected = math.log(4) + 2.5 * math.log(3) - prof.level(1) - 2.5 * prof.level(2)
    assert rate_function(p, BaseMeasure.uniform(space), (1.5, 0.0)) == pytest.approx(expected, abs=1e-13)


@pytest.mark.parametrize("gamma", sorted(LADDER))
def test_ladder_frozen_values(gamma):
    rows, estimates, rate = LADDER[gamma]
    est = empirical_rate_estimate(P1[:, None] * np.array(rows), Q, (gamma, 0.0), [100, 1000, 10000])
    assert [r.estimate for r in est] == pytest.approx(estimates, abs=1e-12)
    assert est[0].rate == pytest.approx(rate, abs=1e-14)
    gaps = [r.gap for r in est]
    assert all(g > 0 for g in gaps) and gaps[0] > gaps[1] > gaps[2]


def test_cumulative_weights_for_deeper_processes():
    g = ReinforcementParams((0.5, 1.0, 0.0))
    assert g.cumulative().gammas == pytest.approx((2.0, 1.0, 0.0))
    space = ProductSpace((2, 2, 2))
    p = np.full(space.shape, 1 / 8)
    p[0] *= 0.5
    p[1] *= 1.5
    est = empirical_rate_estimate(p, BaseMeasure.uniform(space), g, [800, 8000])
    assert abs(est[-1].gap) < abs(est[0].gap)


def test_null_box_gives_infinite_estimates():
    q = BaseMeasure(SPACE, np.array([[0.5, 0.0], [0.25, 0.25]]))
    p = np.full((2, 2), 0.25)
    for r in empirical_rate_estimate(p, q, (0.0, 0.0), [100, 1000]):
        assert r.estimate == math.inf and r.null_box


def test_non_integral_targets_rejected():
    p = np.array([[0.15, 0.15], [0.14, 0.56]])
    with pytest.raises(ValueError):
        nested_log_probability(7, p, Q, (1.0, 0.0))


def test_tilted_minimizer_matches_multiscale_measure(rng):
    space = ProductSpace((3, 2))
    H = random_hamiltonian(space, rng)
    mu, gamma = 0.7, 0.5
    p = tilted_rate_minimizer(H, BaseMeasure.uniform(space), (gamma, 0.0), mu)
    m = build_measure(H, zetas_from_multipliers(Multipliers(mu, (gamma,))))
    np.testing.assert_allclose(p, m.joint, atol=1e-14)
    assert np.allclose(tilted_rate_minimizer(H, BaseMeasure.uniform(space), (gamma, 0.0), 0.0), 1 / 6)


def test_tilted_minimizer_respects_null_boxes():
    q = BaseMeasure(SPACE, np.array([[0.5, 0.0], [0.5, 0.0]]))
    p = tilted_rate_minimizer(CostTensor(SPACE, np.zeros((2, 2))), q, (1.0, 0.0), 1.0)
    np.testing.assert_allclose(p, [[0.5, 0.0], [0.5, 0.0]])


def test_multinomial_concentration():
    space = ProductSpace((2, 2))
    h = multinomial_sample(100_000, BaseMeasure.uniform(space), 11)
    freq = h.counts.ravel() / 100_000
    assert np.all(np.abs(freq - 0.25) <= 4 * math.sqrt(0.25 * 0.75 / 100_000))
    assert multinomial_sample(0, Q, 1).counts.sum() == 0


def test_reinforcement_half_concentrates():
    out = reinforce_balls(100_000, 0.5, 8)
    assert abs(out / 100_000 - 1.5) <= 4 * math.sqrt(0.25 / 100_000)


def test_near_total_annihilation():
    totals = [run_reinforced_two_scale(10_000, -0.999, Q, s).histogram.n for s in range(200)]
    assert abs(np.mean(totals) - 10.0) <= 5 * math.sqrt(10.0 * 0.999 / 200)


def test_unreinforced_process_is_multinomial():
    q = BaseMeasure(SPACE, np.array([[0.1, 0.2], [0.3, 0.4]]))
    runs = 4000
    sim = np.array([run_reinforced_two_scale(20, 0.0, q, s).histogram.counts.ravel() for s in range(runs)])
    direct = np.random.default_rng(0).multinomial(20, q.q.ravel(), size=runs)
    se = np.sqrt(sim.var(axis=0) / runs + direct.var(axis=0) / runs)
    assert np.all(np.abs(sim.mean(axis=0) - direct.mean(axis=0)) <= 5 * se)
    assert np.all(np.abs(sim.var(axis=0) / direct.var(axis=0) - 1) < 0.15)


def test_two_doubling_stages_quadruple_the_total():
    space = ProductSpace((2, 2, 2))
    o = run_reinforced_multiscale(10_000, (1.0, 1.0, 0.0), BaseMeasure.uniform(space), 4)
    assert o.histogram.n == 40_000
