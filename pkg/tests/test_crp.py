import math
from fractions import Fraction

import numpy as np
import pytest

from msgibbs.crp import (
    CrpState,
    annealed_value,
    crp_multinomial_experiment,
    crp_run,
    crp_transition_probabilities,
    grand_potential_mc,
    pd_weights,
    quenched_value,
    random_two_scale_average,
)
from msgibbs.crp import _crp_block
from msgibbs.measure import average, build_measure
from msgibbs.space import CostTensor, Observable, ProductSpace, ScaleParams, random_hamiltonian, worked_example


def test_first_ball_opens_first_box():
    s = crp_run(1, 0.5, 0)
    assert list(s.occupancies) == [1] and s.k == 1


def test_transition_probabilities_are_exact():
    from itertools import product

    zeta = Fraction(2, 7)
    for m in range(1, 6):
        for occ in product(range(1, m + 1), repeat=3):
            occ = [a for a in occ if a]
            if sum(occ) != m:
                continue
            new, join = crp_transition_probabilities(occ, zeta)
            assert new >= 0 and all(j >= 0 for j in join)
            assert new + sum(join) == 1


def test_second_ball_opens_new_box_with_probability_zeta():
    reps = 100_000
    occ, k = _crp_block(2, 0.5, 7, range(reps))
    freq = float(np.mean(k == 2))
    assert abs(freq - 0.5) <= 4 * math.sqrt(0.25 / reps)


def test_conservation_and_weights():
    for seed in range(50):
        s = crp_run(200, 0.6, seed)
        assert int(s.occupancies.sum()) == 200
        w = pd_weights(s)
        assert w.rho.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(np.diff(w.nu) <= 0)
        np.testing.assert_array_equal(np.sort(w.rho), np.sort(w.nu))


def test_pd_weights_examples():
    w = pd_weights(CrpState(0.5, 4, [1, 3]))
    np.testing.assert_allclose(w.rho, [0.25, 0.75])
    np.testing.assert_allclose(w.nu, [0.75, 0.25])


def test_invalid_zeta():
    for z in (0.0, 1.0, 1.5):
        with pytest.raises(ValueError):
            crp_run(10, z, 0)


def test_number_of_boxes_grows_with_zeta_and_n():
    _, k_small = _crp_block(10_000, 0.2, 1, range(200))
    _, k_large = _crp_block(10_000, 0.8, 1, range(200))
    se = math.sqrt(k_small.var() / 200 + k_large.var() / 200)
    assert k_large.mean() - k_small.mean() > 5 * se
    _, k_short = _crp_block(1000, 0.5, 1, range(200))
    _, k_long = _crp_block(4000, 0.5, 1, range(200))
    assert k_long.mean() > k_short.mean()


def test_doubling_continues_the_same_runs():
    occ1, k1 = _crp_block(500, 0.5, 3, range(4))
    occ2, k2 = _crp_block(1000, 0.5, 3, range(4))
    assert np.all(k2 >= k1)


def test_constant_hamiltonian_has_zero_variance():
    space = ProductSpace((3, 2))
    e = grand_potential_mc(CostTensor(space, np.full(space.shape, 0.4)), 0.5, 500, 50, 1)
    assert e.std_error == 0.0
    assert e.mean == pytest.approx(0.4, abs=1e-15) and e.target == pytest.approx(0.4, abs=1e-15)


def test_target_is_two_scale_pressure_with_uniform_weights():
    e = grand_potential_mc(worked_example(), 0.5, 100, 10, 1)
    # Z(a) = (1 + 3)/2 and Z(b) = (2 + 2)/2 are both 2
    assert e.target == pytest.approx(math.log(2), abs=1e-14)


def test_ordering_invariance():
    H = random_hamiltonian(ProductSpace((2, 3)), np.random.default_rng(0))
    a = grand_potential_mc(H, 0.4, 2000, 20, 9, ordering="nu")
    b = grand_potential_mc(H, 0.4, 2000, 20, 9, ordering="rho")
    np.testing.assert_array_equal(a.values, b.values)


def test_cascade_identity_on_generic_instance():
    H = random_hamiltonian(ProductSpace((2, 3)), np.random.default_rng(5))
    e = grand_potential_mc(H, 0.5, 4000, 400, 17)
    assert abs(e.z_score) <= 3
    assert e.std_error > 0


def test_std_error_shrinks_like_root_replicates():
    H = random_hamiltonian(ProductSpace((2, 3)), np.random.default_rng(5))
    small = grand_potential_mc(H, 0.5, 300, 100, 4)
    large = grand_potential_mc(H, 0.5, 300, 10_000, 4)
    assert 5 <= small.std_error / large.std_error <= 20


def test_limits_in_zeta():
    H = random_hamiltonian(ProductSpace((2, 3)), np.random.default_rng(8))
    hot = grand_potential_mc(H, 0.99, 4000, 400, 2)
    assert abs(hot.mean - annealed_value(H)) <= 3 * hot.std_error
    cold = grand_potential_mc(H, 0.05, 4000, 400, 2)
    assert abs(cold.mean - quenched_value(H)) <= 3 * cold.std_error


def test_random_average_of_constant():
    space = ProductSpace((2, 2))
    a = random_two_scale_average(worked_example(), Observable.constant(space, 2.5), 0.5, 500, 30, 1)
    assert a.std_error == 0.0 and a.mean == pytest.approx(2.5) and a.target == pytest.approx(2.5)


def test_random_average_reduces_to_single_level_gibbs():
    space = ProductSpace((3, 2))
    row = np.array([0.3, -1.0, 0.8])
    H = CostTensor(space, np.tile(row, (2, 1)))
    f = Observable.of_level(space, 2, [1.0, 2.0, -1.0])
    a = random_two_scale_average(H, f, 0.5, 500, 30, 1)
    gibbs = float(np.exp(row) @ np.array([1.0, 2.0, -1.0]) / np.exp(row).sum())
    assert a.mean == pytest.approx(gibbs, abs=1e-12) and a.target == pytest.approx(gibbs, abs=1e-12)


def test_random_average_target_uses_exact_measure():
    H = worked_example()
    f = Observable(H.space, H.values)
    a = random_two_scale_average(H, f, 0.5, 2000, 200, 3)
    m = build_measure(H, ScaleParams((1.0, 0.5)), reference=np.full((2, 2), 0.25))
    assert a.target == pytest.approx(average(m, f), abs=1e-15)
    assert abs(a.z_score) <= 3


def test_maximizer_paths_agree():
    H = random_hamiltonian(ProductSpace((3, 4)), np.random.default_rng(2))
    c = crp_multinomial_experiment(H, 0.5, 1000, 6)
    assert c.gap < 1e-12
    assert c.maximizer.sum() == pytest.approx(1.0)


def test_maximizer_single_box_is_plain_gibbs():
    H = random_hamiltonian(ProductSpace((3, 1)), np.random.default_rng(2))
    c = crp_multinomial_experiment(H, 0.5, 1, 6)
    w = np.exp(H.values[0])
    np.testing.assert_allclose(c.maximizer[0], w / w.sum(), atol=1e-15)


def test_maximizer_with_zero_hamiltonian():
    space = ProductSpace((4, 2))
    c = crp_multinomial_experiment(CostTensor(space, np.zeros(space.shape)), 0.5, 300, 1)
    nu = np.sort(crp_run(300, 0.5, 1).occupancies)[::-1] / 300
    np.testing.assert_allclose(c.maximizer, np.outer(nu, np.full(4, 0.25)), atol=1e-15)
