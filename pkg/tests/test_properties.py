import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from msgibbs.entropy import Multipliers, entropy_profile, phi, shannon_entropy
from msgibbs.ldp import BaseMeasure, kl_divergence, rate_function
from msgibbs.measure import build_measure
from msgibbs.space import CostTensor, ProductSpace, ScaleParams
from msgibbs.variational import latent_entropy_identity, solve_variational

sizes = st.lists(st.integers(2, 4), min_size=2, max_size=3)


@st.composite
def instances(draw):
    level_sizes = tuple(draw(sizes))
    space = ProductSpace(level_sizes)
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    H = CostTensor(space, rng.uniform(-4, 4, size=space.shape))
    zetas = ScaleParams(tuple(draw(st.floats(0.05, 5.0)) for _ in level_sizes))
    return H, zetas, rng


@settings(max_examples=60, deadline=None)
@given(instances())
def test_chain_rules(inst):
    H, zetas, _ = inst
    m = build_measure(H, zetas)
    assert abs(m.joint.sum() - 1.0) < 1e-12
    prof = entropy_profile(m)
    assert abs(math.fsum(prof.per_level) - shannon_entropy(m.joint)) < 1e-12
    assert all(-1e-15 <= s <= math.log(H.space.size(lv)) + 1e-12 for lv, s in enumerate(prof.per_level, 1))


@settings(max_examples=60, deadline=None)
@given(instances(), st.floats(-3, 3))
def test_shift_invariance(inst, c):
    """Adding a constant to H shifts every pressure by it and leaves the measure unchanged."""
    H, zetas, _ = inst
    a = build_measure(H, zetas)
    b = build_measure(CostTensor(H.space, H.values + c), zetas)
    assert abs(b.log_partition - a.log_partition - c) < 1e-10
    np.testing.assert_allclose(a.joint, b.joint, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(instances())
def test_variational_maximum(inst):
    H, zetas, rng = inst
    mu = zetas.zeta(1)
    mult = Multipliers(mu, tuple(mu / zetas.zeta(lv) - 1.0 for lv in range(H.space.depth, 1, -1)))
    sol = solve_variational(H, mult)
    best = phi(sol, H, mult)
    assert abs(best - sol.root_log_normalizer) < 1e-9
    for _ in range(20):
        q = rng.dirichlet(np.ones(H.space.total_size)).reshape(H.space.shape)
        assert phi(q, H, mult) <= best + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**32 - 1), st.floats(-0.95, 5.0))
def test_rate_is_nonnegative_and_vanishes_at_base(n2, n1, seed, gamma):
    space = ProductSpace((n2, n1))
    rng = np.random.default_rng(seed)
    q = BaseMeasure(space, rng.dirichlet(np.ones(space.total_size)).reshape(space.shape))
    p = rng.dirichlet(np.ones(space.total_size)).reshape(space.shape)
    assert rate_function(p, q, (gamma, 0.0)) >= -1e-14
    assert abs(rate_function(q.q, q, (gamma, 0.0))) < 1e-14
    if gamma == 0.0:
        assert abs(rate_function(p, q, (0.0, 0.0)) - kl_divergence(p, q.q)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5), st.integers(2, 5), st.integers(0, 2**32 - 1), st.floats(0.01, 0.99))
def test_latent_identity(n2, n1, seed, zeta):
    space = ProductSpace((n2, n1))
    p = np.random.default_rng(seed).dirichlet(np.ones(space.total_size)).reshape(space.shape)
    lhs, rhs = latent_entropy_identity(p, zeta, space)
    assert abs(lhs - rhs) < 1e-12
