"""Acceptance checks shared by ``msgibbs selftest`` and the test suite.

Each check returns a :class:`CriterionResult` whose ``metrics`` depend only on
the master seed.  Wall times are kept apart in ``runtime`` so that the metrics
serialize byte-identically across runs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .crp import annealed_value, clear_cache, grand_potential_mc, quenched_value, random_two_scale_average, z_score
from .entropy import Multipliers, entropy_profile, level_entropies, phi, phi_batch, shannon_entropy
from .ldp import BaseMeasure, ReinforcementParams, empirical_rate_estimate, rate_function
from .measure import average, build_measure, tilted_pressure
from .rng import derive_seed, stream
from .space import CostTensor, Observable, ProductSpace, ScaleParams, random_hamiltonian, worked_example
from .variational import (
    latent_entropy_identity,
    legendre_pressure,
    linear_response_check,
    solve_constrained_two_scale,
    solve_variational,
    zetas_from_multipliers,
)

DEFAULT_SEED = 20240617


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict
    runtime: float = field(default=0.0, compare=False)
    limit: float = math.inf

    @property
    def in_time(self) -> bool:
        return self.runtime < self.limit

    def line(self) -> str:
        ok = "PASS" if self.passed and self.in_time else "FAIL"
        return f"[{ok}] criterion {self.number:2d} {self.title}  ({self.runtime:.2f} s, limit {self.limit:g} s)"


def _rel(err: float, scale: float) -> float:
    return err / max(1.0, abs(scale))


# -- 1 ------------------------------------------------------------------------------------


def chain_rules(seed: int) -> dict:
    rng = stream(seed, 1)
    worst_prob = worst_ent = worst_norm = 0.0
    for _ in range(100):
        depth = int(rng.integers(2, 5))
        space = ProductSpace(tuple(int(s) for s in rng.integers(2, 6, size=depth)))
        H = random_hamiltonian(space, rng)
        m = build_measure(H, ScaleParams(tuple(rng.uniform(0.2, 3.0, size=depth))))
        joint = m.joint
        for level in range(1, depth + 1):
            summed = joint.sum(axis=tuple(range(level, depth)))
            chained = m.marginals[level - 1][..., None] * m.conditionals[level]
            worst_prob = max(worst_prob, float(np.max(np.abs(summed - chained))))
            worst_norm = max(worst_norm, float(np.max(np.abs(m.conditionals[level].sum(axis=-1) - 1.0))))
        total = shannon_entropy(joint)
        per_level = entropy_profile(m).per_level
        direct = level_entropies(joint, depth)
        worst_ent = max(worst_ent, abs(total - math.fsum(per_level)), float(np.max(np.abs(direct - per_level))))
    passed = max(worst_prob, worst_norm) <= 1e-12 and worst_ent <= 1e-12
    return dict(passed=passed, instances=100, max_probability_error=worst_prob,
                max_normalization_error=worst_norm, max_entropy_error=worst_ent)


# -- 2 ------------------------------------------------------------------------------------

WORKED_JOINT = (1 / 8, 3 / 8, 1 / 4, 1 / 4)
WORKED_S1 = math.log(2)
WORKED_S2 = 0.5 * (math.log(4) - 0.75 * math.log(3)) + 0.5 * math.log(2)  # 0.627741...


def worked_example_check(seed: int) -> dict:
    H = worked_example()
    m = build_measure(H, ScaleParams((1.0, 0.5)))
    prof = entropy_profile(m)
    value = phi(m, H, Multipliers(0.5, (-0.5,)))
    errs = {
        "root_normalizer": abs(m.root_log_normalizer - math.log(4)),
        "log_partition": abs(m.log_partition - math.log(16)),
        "joint": float(np.max(np.abs(m.joint.ravel() - WORKED_JOINT))),
        "S1": abs(prof.level(1) - WORKED_S1),
        "S2": abs(prof.level(2) - WORKED_S2),
        "phi": abs(value - math.log(4)),
    }
    return dict(passed=max(errs.values()) <= 1e-10, root_normalizer=m.root_log_normalizer,
                log_partition=m.log_partition, joint=m.joint.ravel().tolist(),
                S1=prof.level(1), S2=prof.level(2), phi=value, errors=errs)


# -- 3 ------------------------------------------------------------------------------------


def _random_multipliers(rng, depth: int) -> Multipliers:
    return Multipliers(float(rng.uniform(0.2, 2.0)), tuple(rng.uniform(-0.8, 2.0, size=depth - 1)))


def _perturbations(rng, p: np.ndarray, count: int) -> np.ndarray:
    half = count // 2
    flat = p.ravel()
    eps = np.exp(rng.uniform(np.log(1e-6), 0.0, size=(half, 1)))
    local = flat * np.exp(eps * rng.standard_normal((half, flat.size)))
    local /= local.sum(axis=1, keepdims=True)
    spread = rng.dirichlet(np.ones(flat.size), size=count - half)
    return np.concatenate([local, spread]).reshape((count,) + p.shape)


def variational_principle(seed: int) -> dict:
    rng = stream(seed, 3)
    worst_match = worst_value = 0.0
    worst_excess = -math.inf
    for _ in range(20):
        depth = int(rng.integers(2, 4))
        space = ProductSpace(tuple(int(s) for s in rng.integers(2, 5, size=depth)))
        H = random_hamiltonian(space, rng)
        mult = _random_multipliers(rng, depth)
        sol = solve_variational(H, mult)
        ref = build_measure(H, zetas_from_multipliers(mult))
        worst_match = max(worst_match, float(np.max(np.abs(sol.joint - ref.joint))))
        best = phi(sol, H, mult)
        worst_value = max(worst_value, abs(best - ref.root_log_normalizer))
        trial = phi_batch(_perturbations(rng, sol.joint, 10_000), H, mult)
        worst_excess = max(worst_excess, float(np.max(trial)) - best)
    passed = worst_match <= 1e-12 and worst_excess <= 1e-8 and worst_value <= 1e-10
    return dict(passed=passed, instances=20, perturbations_per_instance=10_000,
                max_entry_mismatch=worst_match, max_phi_excess=worst_excess, max_value_error=worst_value)


# -- 4 ------------------------------------------------------------------------------------


def derivative_identities(seed: int) -> dict:
    rng = stream(seed, 4)
    h = 1e-5
    worst = {"pressure": 0.0, "legendre": 0.0, "response_level1": 0.0, "response_level2": 0.0}
    for _ in range(20):
        depth = int(rng.integers(2, 4))
        space = ProductSpace(tuple(int(s) for s in rng.integers(2, 5, size=depth)))
        H = random_hamiltonian(space, rng)
        zetas = ScaleParams(tuple(rng.uniform(0.3, 2.0, size=depth)))
        f = Observable(space, rng.uniform(-1, 1, size=space.shape))
        exact = average(build_measure(H, zetas), f)
        fd = (tilted_pressure(H, zetas, f, h) - tilted_pressure(H, zetas, f, -h)) / (2 * h)
        worst["pressure"] = max(worst["pressure"], _rel(abs(fd - exact), exact))

        space2 = ProductSpace(tuple(int(s) for s in rng.integers(2, 5, size=2)))
        H2 = random_hamiltonian(space2, rng)
        mult = Multipliers(float(rng.uniform(0.3, 1.5)), (float(rng.uniform(-0.5, 1.5)),))
        m2 = build_measure(H2, zetas_from_multipliers(mult))
        E = float(np.sum(m2.joint * H2.values))
        S2 = entropy_profile(m2).level(2)
        # the transformed pressure is smooth but can curve sharply where the level-1
        # pressures nearly tie, so take small steps and warm-start from the centre
        dE = 1e-6 * float(np.ptp(H2.values))
        dS = 1e-6

        def P(e, s):
            return legendre_pressure(H2, e, s, initial=mult)

        gE = (P(E + dE, S2) - P(E - dE, S2)) / (2 * dE)
        gS = (P(E, S2 + dS) - P(E, S2 - dS)) / (2 * dS)
        g = 1.0 + mult.gammas[0]
        worst["legendre"] = max(worst["legendre"], _rel(abs(gE + mult.mu), mult.mu), _rel(abs(gS + g), g))

        O = Observable(space2, rng.uniform(-1, 1, size=space2.shape))
        for level in (1, 2):
            A = Observable.of_level(space2, level, rng.uniform(-1, 1, size=space2.size(level)))
            r = linear_response_check(m2, O, A, h=h)
            key = f"response_level{level}"
            worst[key] = max(worst[key], _rel(r.abs_err, float(np.max(np.abs(r.rhs)))))
    passed = (worst["pressure"] <= 1e-6 and worst["legendre"] <= 1e-4
              and worst["response_level1"] <= 1e-6 and worst["response_level2"] <= 1e-6)
    return dict(passed=passed, instances=20, max_relative_errors=worst)


# -- 5 ------------------------------------------------------------------------------------


def _slice_stat_target(H: CostTensor, stat) -> float:
    s = stat(H.values, axis=1)
    return float(0.4 * s.mean() + 0.6 * s.max())


def limiting_cases(seed: int) -> dict:
    rng = stream(seed, 5)
    space = ProductSpace((4, 3))
    min_argmax, max_dev = math.inf, 0.0
    instances = 0
    while instances < 3:
        H = random_hamiltonian(space, rng)
        if np.any(np.sort(H.values, axis=1)[:, -1] - np.sort(H.values, axis=1)[:, -2] < 0.1):
            continue  # keep slice maxima well separated
        instances += 1
        low = solve_constrained_two_scale(H, _slice_stat_target(H, np.max), 1e-4)
        cond = low.measure.conditionals[2]
        min_argmax = min(min_argmax, float(np.min(cond.max(axis=1))))
        high = solve_constrained_two_scale(H, _slice_stat_target(H, np.mean), math.log(4) - 1e-6)
        cond = high.measure.conditionals[2]
        max_dev = max(max_dev, float(np.max(np.abs(cond - 0.25))))
    return dict(passed=min_argmax > 0.999 and max_dev < 1e-3, instances=instances,
                min_argmax_mass=min_argmax, max_uniform_deviation=max_dev)


# -- 6 ------------------------------------------------------------------------------------

LDP_MARGINAL = (0.3, 0.7)
LDP_SCENARIOS = {
    "gamma_1": (1.0, ((0.5, 0.5), (0.2, 0.8))),
    "gamma_0": (0.0, ((0.5, 0.5), (0.2, 0.8))),
    "gamma_minus_half": (-0.5, ((0.4, 0.6), (0.2, 0.8))),
}
LDP_LADDER = (100, 1000, 10_000)


def ldp_target(rows) -> np.ndarray:
    return np.array(LDP_MARGINAL)[:, None] * np.array(rows)


def sanov_ladder(seed: int) -> dict:
    q = BaseMeasure.uniform(ProductSpace((2, 2)))
    out = {}
    passed = True
    for name, (gamma, rows) in LDP_SCENARIOS.items():
        est = empirical_rate_estimate(ldp_target(rows), q, ReinforcementParams((gamma, 0.0)), LDP_LADDER)
        gaps = [r.gap for r in est]
        ok = all(g > 0 for g in gaps) and all(a > b for a, b in zip(gaps, gaps[1:])) and gaps[-1] < 0.01
        passed &= ok
        out[name] = dict(gamma=gamma, rate=est[0].rate, gaps=gaps, passed=ok)
    return dict(passed=passed, ladder=list(LDP_LADDER), scenarios=out)


# -- 7 ------------------------------------------------------------------------------------


def entropy_reweighting(seed: int) -> dict:
    rng = stream(seed, 7)
    worst_rate = worst_latent = 0.0
    for _ in range(100):
        space = ProductSpace(tuple(int(s) for s in rng.integers(2, 6, size=2)))
        p = rng.dirichlet(np.ones(space.total_size)).reshape(space.shape)
        gamma = float(rng.uniform(-0.9, 3.0))
        q = BaseMeasure.uniform(space)
        prof = entropy_profile(p, space)
        const = math.log(space.size(1)) + (1 + gamma) * math.log(space.size(2))
        expected = const - prof.level(1) - (1 + gamma) * prof.level(2)
        worst_rate = max(worst_rate, abs(rate_function(p, q, (gamma, 0.0)) - expected))
        for zeta in (0.1, 0.5, 0.9):
            lhs, rhs = latent_entropy_identity(p, zeta, space)
            worst_latent = max(worst_latent, abs(lhs - rhs))
    return dict(passed=worst_rate <= 1e-12 and worst_latent <= 1e-12, instances=100,
                max_rate_error=worst_rate, max_latent_error=worst_latent)


# -- 8, 9 ---------------------------------------------------------------------------------

CASCADE_ZETAS = (0.3, 0.5, 0.7)
CRP_N = 10_000
REPLICATES = 1_000


def cascade_hamiltonians(seed: int) -> dict[str, CostTensor]:
    """The worked example and a generic 3x2 instance sharing its two atoms (so CRP ensembles are reused)."""
    return {"worked_example": worked_example(),
            "random_3x2": random_hamiltonian(ProductSpace((3, 2)), stream(seed, 8, 0))}


def _estimate_row(est) -> dict:
    z = est.z_score
    return dict(mean=est.mean, std_error=est.std_error, target=est.target,
                z_score=z, within_3sigma=abs(z) <= 3)


def cascade_identity(seed: int, jobs: int = 1) -> dict:
    crp_seed = derive_seed(seed, 8)
    rows, passed = {}, True
    for name, H in cascade_hamiltonians(seed).items():
        per = {}
        for zeta in CASCADE_ZETAS:
            est = grand_potential_mc(H, zeta, CRP_N, REPLICATES, crp_seed, jobs=jobs)
            dbl = grand_potential_mc(H, zeta, 2 * CRP_N, REPLICATES, crp_seed, jobs=jobs)
            shift = abs(dbl.mean - est.mean)
            converged = shift < est.std_error or shift <= 1e-12
            row = _estimate_row(est)
            row.update(doubled_mean=dbl.mean, doubling_shift=shift, doubling_converged=converged)
            passed &= row["within_3sigma"] and converged
            per[str(zeta)] = row
        for zeta, label, closed in ((0.99, "annealed", annealed_value(H)), (0.05, "quenched", quenched_value(H))):
            est = grand_potential_mc(H, zeta, CRP_N, REPLICATES, crp_seed, jobs=jobs)
            z = z_score(est.mean, est.std_error, closed)
            passed &= abs(z) <= 3
            per[label] = dict(zeta=zeta, mean=est.mean, std_error=est.std_error, closed_form=closed,
                              z_score=z, within_3sigma=abs(z) <= 3)
        rows[name] = per
    return dict(passed=passed, crp_n=CRP_N, replicates=REPLICATES, hamiltonians=rows)


def random_measure_averages(seed: int, jobs: int = 1) -> dict:
    crp_seed = derive_seed(seed, 8)
    rows, passed = {}, True
    for name, H in cascade_hamiltonians(seed).items():
        observables = {"hamiltonian": Observable(H.space, H.values),
                       "level1_indicator": Observable.of_level(H.space, 1, np.eye(H.space.size(1))[0])}
        per = {}
        for fname, f in observables.items():
            for zeta in CASCADE_ZETAS:
                est = random_two_scale_average(H, f, zeta, CRP_N, REPLICATES, crp_seed, jobs=jobs)
                row = _estimate_row(est)
                passed &= row["within_3sigma"]
                per[f"{fname}@{zeta}"] = row
        rows[name] = per
    return dict(passed=passed, crp_n=CRP_N, replicates=REPLICATES, hamiltonians=rows)


# -- registry -----------------------------------------------------------------------------------

CRITERIA: dict[int, tuple[str, float, Callable]] = {
    1: ("chain rules", 5.0, chain_rules),
    2: ("worked example", 1.0, worked_example_check),
    3: ("variational principle", 30.0, variational_principle),
    4: ("derivative identities", 30.0, derivative_identities),
    5: ("limiting cases", 10.0, limiting_cases),
    6: ("large-deviation ladder", 60.0, sanov_ladder),
    7: ("entropy re-weighting", 5.0, entropy_reweighting),
    8: ("cascade pressure identity", 120.0, cascade_identity),
    9: ("random-measure averages", 60.0, random_measure_averages),
}
DETERMINISM = (10, "selftest determinism", 1.0)


def run_criterion(number: int, seed: int = DEFAULT_SEED, jobs: int = 1) -> CriterionResult:
    title, limit, fn = CRITERIA[number]
    t0 = time.perf_counter()
    metrics = fn(seed, jobs=jobs) if number in (8, 9) else fn(seed)
    runtime = time.perf_counter() - t0
    passed = bool(metrics.pop("passed"))
    return CriterionResult(number, title, passed, metrics, runtime, limit)


def run_all(seed: int = DEFAULT_SEED, jobs: int = 1, only=None) -> list[CriterionResult]:
    clear_cache()  # every run recomputes its CRP ensembles
    numbers = sorted(CRITERIA) if only is None else sorted(only)
    return [run_criterion(k, seed, jobs) for k in numbers]
