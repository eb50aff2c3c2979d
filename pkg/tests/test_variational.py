import math

import numpy as np
import pytest
from scipy.optimize import minimize

from msgibbs.entropy import Multipliers, entropy_profile, phi
from msgibbs.errors import InfeasibleTargetsError
from msgibbs.measure import build_measure
from msgibbs.space import CostTensor, Observable, ProductSpace, ScaleParams, random_hamiltonian, worked_example
from msgibbs.variational import (
    latent_augmented_measure,
    latent_entropy_identity,
    legendre_pressure,
    linear_response_check,
    multipliers_from_zetas,
    solve_constrained_two_scale,
    solve_variational,
    temperature_ratios,
    zetas_from_multipliers,
)


def test_multiplier_scale_map_round_trip():
    mult = Multipliers(0.5, (-0.5,))
    z = zetas_from_multipliers(mult)
    assert z.zetas == (1.0, 0.5)
    back = multipliers_from_zetas(z)
    assert back.mu == 0.5 and back.gammas == (-0.5,)
    with pytest.raises(ValueError):
        zetas_from_multipliers(Multipliers(-1.0, (0.0,)))


def test_worked_example_brute_force_maximum():
    H = worked_example()
    mult = Multipliers(0.5, (-0.5,))

    def neg_phi(x):
        p = np.exp(x - x.max())
        return -phi((p / p.sum()).reshape(2, 2), H, mult)

    best = minimize(neg_phi, np.zeros(4), method="Nelder-Mead", options=dict(xatol=1e-12, fatol=1e-14, maxiter=20000))
    assert -best.fun == pytest.approx(math.log(4), abs=1e-9)
    sol = solve_variational(H, mult)
    assert phi(sol, H, mult) == pytest.approx(math.log(4), abs=1e-12)


def test_solution_matches_measure_and_beats_perturbations(rng):
    space = ProductSpace((3, 2, 2))
    H = random_hamiltonian(space, rng)
    mult = Multipliers(0.9, (1.5, -0.4))
    sol = solve_variational(H, mult)
    ref = build_measure(H, zetas_from_multipliers(mult))
    np.testing.assert_allclose(sol.joint, ref.joint, atol=1e-13)
    best = phi(sol, H, mult)
    for _ in range(200):
        q = sol.joint * np.exp(0.05 * rng.standard_normal(space.shape))
        assert phi(q / q.sum(), H, mult) <= best + 1e-12


def test_literal_scale_convention_is_not_the_maximizer():
    """The measure at zeta_l = (1 + gamma_{l+1})/(1 + gamma_l) scores below the one at mu/(1 + gamma_l)."""
    space = ProductSpace((3, 3))
    H = random_hamiltonian(space, np.random.default_rng(3))
    mult = Multipliers(0.6, (0.8,))
    right = build_measure(H, zetas_from_multipliers(mult))
    other = build_measure(H, ScaleParams((1.0 / 1.8, 1.8)))
    assert phi(right, H, mult) > phi(other, H, mult) + 1e-3


def test_constrained_round_trip():
    space = ProductSpace((3, 3))
    H = random_hamiltonian(space, np.random.default_rng(7))
    mult = Multipliers(0.8, (0.4,))
    m = build_measure(H, zetas_from_multipliers(mult))
    E = float(np.sum(m.joint * H.values))
    S2 = entropy_profile(m).level(2)
    sol = solve_constrained_two_scale(H, E, S2)
    assert sol.multipliers.mu == pytest.approx(0.8, abs=1e-6)
    assert sol.multipliers.gammas[0] == pytest.approx(0.4, abs=1e-6)
    assert max(sol.residual_energy, sol.residual_entropy) < 1e-9
    assert sol.legendre_value == pytest.approx(m.root_log_normalizer - 0.8 * E - 1.4 * S2, abs=1e-9)


@pytest.mark.parametrize("E,S2", [(0.8, 0.9), (10.0, 0.3), (0.8, 0.0)])
def test_infeasible_targets(E, S2):
    with pytest.raises(InfeasibleTargetsError):
        solve_constrained_two_scale(worked_example(), E, S2)


def test_legendre_gradient():
    space = ProductSpace((3, 2))
    H = random_hamiltonian(space, np.random.default_rng(11))
    mult = Multipliers(1.1, (0.3,))
    m = build_measure(H, zetas_from_multipliers(mult))
    E = float(np.sum(m.joint * H.values))
    S2 = entropy_profile(m).level(2)
    h = 1e-6
    gE = (legendre_pressure(H, E + h, S2, initial=mult) - legendre_pressure(H, E - h, S2, initial=mult)) / (2 * h)
    gS = (legendre_pressure(H, E, S2 + h, initial=mult) - legendre_pressure(H, E, S2 - h, initial=mult)) / (2 * h)
    assert gE == pytest.approx(-1.1, rel=1e-5)
    assert gS == pytest.approx(-1.3, rel=1e-5)


def test_temperature_ratios():
    t = temperature_ratios(Multipliers(2.0, (1.0,)))
    assert (t.beta1, t.beta2, t.ratio) == (2.0, 1.0, 2.0)
    assert temperature_ratios(Multipliers(0.7, (0.0,))).ratio == 1.0
    assert temperature_ratios(Multipliers(1.0, (-1 + 1e-12,))).frozen_level2


@pytest.mark.parametrize("level", [1, 2])
def test_linear_response(level, rng):
    space = ProductSpace((3, 3))
    m = build_measure(random_hamiltonian(space, rng), ScaleParams((0.7, 1.6)))
    O = Observable(space, rng.uniform(-1, 1, size=space.shape))
    A = Observable.of_level(space, level, rng.uniform(-1, 1, size=3))
    r = linear_response_check(m, O, A)
    assert r.level == level
    assert r.abs_err < 1e-8


def test_full_average_response_at_level2_carries_extra_covariance(rng):
    """For a level-2 field the full average responds with an extra (zeta_1 - zeta_2) term."""
    space = ProductSpace((3, 2))
    H = random_hamiltonian(space, rng)
    z2, z1 = 1.6, 0.5
    m = build_measure(H, ScaleParams((z2, z1)))
    O = Observable(space, rng.uniform(-1, 1, size=space.shape))
    A = Observable.of_level(space, 2, rng.uniform(-1, 1, size=3))
    h = 1e-5
    plus = build_measure(CostTensor(space, H.values + h * A.values), m.zetas)
    minus = build_measure(CostTensor(space, H.values - h * A.values), m.zetas)
    fd = (np.sum(plus.joint * O.values) - np.sum(minus.joint * O.values)) / (2 * h)
    p = m.joint
    mean = lambda f: float(np.sum(p * f))  # noqa: E731
    cond = lambda f: np.sum(m.conditionals[2] * f, axis=1)  # noqa: E731
    cov_within = mean(O.values * A.values) - float(m.marginals[1] @ (cond(O.values) * cond(A.values)))
    cov_between = float(m.marginals[1] @ (cond(O.values) * cond(A.values))) - mean(O.values) * mean(A.values)
    assert fd == pytest.approx(z2 * cov_within + z1 * cov_between, abs=1e-8)


def test_latent_identity(rng):
    space = ProductSpace((4, 3))
    p = rng.dirichlet(np.ones(12)).reshape(space.shape)
    for zeta in (0.1, 0.5, 0.9):
        lhs, rhs = latent_entropy_identity(p, zeta, space)
        assert lhs == pytest.approx(rhs, abs=1e-13)
    aug = latent_augmented_measure(p, 0.3, space)
    assert aug.shape == (2, 3, 4)
    assert aug.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        latent_augmented_measure(p, 1.0, space)
