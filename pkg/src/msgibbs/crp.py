"""Chinese restaurant process weights and the grand-canonical two-scale pressure.

Poisson-Dirichlet weights ``nu`` are approximated by the sorted box frequencies
of a finite CRP.  Each box carries an atom ``y`` drawn from the a-priori law on
``X_1`` and a partition value ``Z(y) = E_2 exp H(x_2, y)``.  The quenched mean of
``log sum nu Z`` then estimates the two-scale pressure at ``zeta_1 = zeta``.

Replicate ``i`` draws from three derived streams keyed ``(i, purpose)``: which
existing ball to copy, whether to open a new box, and the atoms of boxes in
creation order.  A run of ``2n`` balls therefore extends the run of ``n`` balls
with the same seed, so truncation shifts are measured with common random numbers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .measure import average, build_measure
from .rng import check_seed, stream
from .space import CostTensor, Observable, ScaleParams

PICK, OPEN, ATOM = 0, 1, 2
CHUNK = 250


@dataclass(frozen=True, eq=False)
class CrpState:
    """Box occupancies ``n_alpha`` in creation order after ``n`` balls."""

    zeta: float
    n: int
    occupancies: np.ndarray

    def __post_init__(self):
        occ = np.asarray(self.occupancies, dtype=np.int64)
        if occ.ndim != 1 or occ.size == 0 or np.any(occ < 1):
            raise ValueError("occupancies must be a non-empty list of positive integers")
        if int(occ.sum()) != self.n:
            raise ValueError(f"occupancies sum to {occ.sum()}, expected n={self.n}")
        occ.setflags(write=False)
        object.__setattr__(self, "occupancies", occ)

    @property
    def k(self) -> int:
        return int(self.occupancies.size)


@dataclass(frozen=True, eq=False)
class RandomWeights:
    rho: np.ndarray  # creation order
    nu: np.ndarray  # non-increasing
    n: int


@dataclass(frozen=True, eq=False)
class AtomEnvironment:
    """Atoms ``y_alpha`` on ``X_1`` (one per occupied box) and their ``Z_alpha``."""

    y: np.ndarray
    Z: np.ndarray


@dataclass(frozen=True, eq=False)
class GrandPotentialEstimate:
    mean: float
    std_error: float
    replicates: int
    truncation_n: int
    target: float
    values: np.ndarray = field(repr=False)

    @property
    def z_score(self) -> float:
        return z_score(self.mean, self.std_error, self.target)


def z_score(mean: float, std_error: float, target: float, atol: float = 1e-12) -> float:
    """Standardized deviation; deviations within ``atol`` (rounding of zero-variance runs) count as 0."""
    d = mean - target
    if abs(d) <= atol:
        return 0.0
    if not std_error > 0:
        return math.copysign(math.inf, d)
    return d / std_error


def _check_zeta(zeta: float) -> float:
    zeta = float(zeta)
    if not 0 < zeta < 1:
        raise ValueError(f"zeta must lie in (0, 1), got {zeta}")
    return zeta


def crp_transition_probabilities(occupancies, zeta):
    """``(P(new box), [P(join box alpha)])`` after ``m = sum(occupancies)`` balls.

    Pass a :class:`fractions.Fraction` for ``zeta`` to get exact rationals.
    """
    occ = [int(a) for a in occupancies]
    m, k = sum(occ), len(occ)
    if m == 0:
        raise ValueError("the first ball always opens box 1")
    new = zeta * k / m if isinstance(zeta, Fraction) else Fraction(zeta) * k / m
    join = [(Fraction(a) - Fraction(zeta)) / m for a in occ]
    if not isinstance(zeta, Fraction):
        return float(new), [float(j) for j in join]
    return new, join


def _crp_block(n: int, zeta: float, seed: int, reps: range) -> tuple[np.ndarray, np.ndarray]:
    """Box labels of every ball and box counts for a block of replicates.

    Placing ball ``m + 1``: copy the box of a uniform earlier ball, and with
    probability ``zeta / n_box`` open a new box instead.  This gives
    ``P(new) = zeta k / m`` and ``P(box alpha) = (n_alpha - zeta) / m``.
    """
    R = len(reps)
    u_pick = np.stack([stream(seed, i, PICK).random(n) for i in reps])
    u_open = np.stack([stream(seed, i, OPEN).random(n) for i in reps])
    labels = np.zeros((R, n), dtype=np.int32)
    occ = np.zeros((R, n), dtype=np.int32)
    occ[:, 0] = 1
    k = np.ones(R, dtype=np.int32)
    rows = np.arange(R)
    for m in range(1, n):
        picked = labels[rows, (u_pick[:, m] * m).astype(np.int64)]
        new = u_open[:, m] * occ[rows, picked] < zeta
        lab = np.where(new, k, picked)
        k += new
        occ[rows, lab] += 1
        labels[:, m] = lab
    return occ, k


def crp_run(n: int, zeta: float, seed: int) -> CrpState:
    """One CRP of ``n`` balls; ball 1 opens box 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    zeta = _check_zeta(zeta)
    occ, k = _crp_block(int(n), zeta, check_seed(seed), range(1))
    return CrpState(zeta=zeta, n=int(n), occupancies=occ[0, : k[0]].copy())


def pd_weights(state: CrpState) -> RandomWeights:
    rho = state.occupancies / state.n
    return RandomWeights(rho=rho, nu=np.sort(rho)[::-1], n=state.n)


def _prior(p, size: int, name: str) -> np.ndarray:
    if p is None:
        return np.full(size, 1.0 / size)
    p = np.asarray(p, dtype=float)
    if p.shape != (size,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} must be a probability vector of length {size}")
    return p


def draw_atoms(k: int, prior1: np.ndarray, seed: int, replicate: int = 0) -> np.ndarray:
    """Atoms of the first ``k`` boxes (creation order) of one replicate."""
    u = stream(seed, replicate, ATOM).random(k)
    return np.minimum(np.searchsorted(np.cumsum(prior1), u, side="right"), prior1.size - 1)


def atom_environment(H: CostTensor, y: np.ndarray, prior2=None) -> AtomEnvironment:
    _check_two_level(H)
    q2 = _prior(prior2, H.space.size(2), "prior on X_2")
    Z = np.exp(H.values) @ q2
    return AtomEnvironment(y=np.asarray(y), Z=Z[np.asarray(y)])


def _atom_mass_block(n, zeta, seed, reps, prior1, ordering):
    occ, k = _crp_block(n, zeta, seed, reps)
    out = np.zeros((len(reps), prior1.size), dtype=np.int64)
    for row, i in enumerate(reps):
        counts = occ[row, : k[row]].astype(np.int64)
        atoms = draw_atoms(int(k[row]), prior1, seed, i)
        if ordering == "nu":
            perm = np.argsort(-counts, kind="stable")
            counts, atoms = counts[perm], atoms[perm]
        # integer masses: the sum does not depend on box order
        np.add.at(out[row], atoms, counts)
    return out, k.astype(np.int64)


@lru_cache(maxsize=32)
def _atom_masses(n, zeta, replicates, seed, prior1, ordering, jobs):
    prior1 = np.array(prior1)
    blocks = [range(s, min(s + CHUNK, replicates)) for s in range(0, replicates, CHUNK)]
    args = [(n, zeta, seed, b, prior1, ordering) for b in blocks]
    if jobs > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_atom_mass_block, *zip(*args)))
    else:
        parts = [_atom_mass_block(*a) for a in args]
    masses = np.concatenate([p[0] for p in parts])
    ks = np.concatenate([p[1] for p in parts])
    masses.setflags(write=False)
    ks.setflags(write=False)
    return masses, ks


def clear_cache() -> None:
    _atom_masses.cache_clear()


def atom_masses(n, zeta, replicates, seed, prior1=None, ordering="nu", jobs=1, size1=None):
    """Per replicate, the number of balls whose box carries atom ``y`` (shape ``(replicates, |X_1|)``).

    ``sum_alpha nu_alpha g(y_alpha) = masses @ g / n`` for any ``g`` on ``X_1``.
    """
    if n < 1 or replicates < 1:
        raise ValueError("crp_n and replicates must be >= 1")
    if ordering not in ("nu", "rho"):
        raise ValueError("ordering must be 'nu' or 'rho'")
    prior1 = _prior(prior1, size1, "prior on X_1")
    return _atom_masses(int(n), _check_zeta(zeta), int(replicates), check_seed(seed),
                        tuple(prior1), ordering, max(1, int(jobs)))


def _check_two_level(H: CostTensor):
    if H.space.depth != 2:
        raise ValueError(f"the cascade needs a two-level space, got depth {H.space.depth}")


def exact_target_measure(H: CostTensor, zeta: float, prior1=None, prior2=None):
    """Two-scale measure with ``zeta_2 = 1``, ``zeta_1 = zeta`` and a-priori product weights."""
    _check_two_level(H)
    q1 = _prior(prior1, H.space.size(1), "prior on X_1")
    q2 = _prior(prior2, H.space.size(2), "prior on X_2")
    return build_measure(H, ScaleParams((1.0, _check_zeta(zeta))), reference=np.outer(q1, q2))


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    mean = math.fsum(values) / values.size
    if values.size < 2:
        return mean, math.nan
    # centring on one sample keeps identical samples at exactly zero spread
    return mean, float(np.std(values - values[0], ddof=1) / math.sqrt(values.size))


def grand_potential_mc(H: CostTensor, zeta: float, crp_n: int, replicates: int, seed: int,
                       prior1=None, prior2=None, ordering="nu", jobs=1) -> GrandPotentialEstimate:
    """Quenched mean of ``log sum_alpha nu_alpha Z_alpha`` over CRP replicates."""
    _check_two_level(H)
    q2 = _prior(prior2, H.space.size(2), "prior on X_2")
    masses, _ = atom_masses(crp_n, zeta, replicates, seed, prior1, ordering, jobs, H.space.size(1))
    logZ = np.log(np.exp(H.values) @ q2)
    top = logZ.max()
    # relative weights are exactly 1 where Z ties its maximum, so a constant Z gives zero variance
    values = top + np.log(masses @ np.exp(logZ - top) / crp_n)
    mean, se = _mean_se(values)
    target = exact_target_measure(H, zeta, prior1, prior2).log_partition
    return GrandPotentialEstimate(mean=mean, std_error=se, replicates=int(replicates),
                                  truncation_n=int(crp_n), target=target, values=values)


def annealed_value(H: CostTensor, prior1=None, prior2=None) -> float:
    """``log E_1 Z``: the cascade value as ``zeta -> 1``."""
    q1 = _prior(prior1, H.space.size(1), "prior on X_1")
    q2 = _prior(prior2, H.space.size(2), "prior on X_2")
    return float(np.log(q1 @ (np.exp(H.values) @ q2)))


def quenched_value(H: CostTensor, prior1=None, prior2=None) -> float:
    """``E_1 log Z``: the cascade value as ``zeta -> 0`` (one box carries all the mass)."""
    q1 = _prior(prior1, H.space.size(1), "prior on X_1")
    q2 = _prior(prior2, H.space.size(2), "prior on X_2")
    return float(q1 @ np.log(np.exp(H.values) @ q2))


@dataclass(frozen=True, eq=False)
class AverageEstimate:
    mean: float
    std_error: float
    replicates: int
    truncation_n: int
    target: float
    values: np.ndarray = field(repr=False)

    @property
    def z_score(self) -> float:
        return z_score(self.mean, self.std_error, self.target)


def random_two_scale_average(H: CostTensor, f: Observable, zeta: float, crp_n: int, replicates: int,
                             seed: int, prior1=None, prior2=None, jobs=1) -> AverageEstimate:
    """Quenched mean of ``<f>*`` under ``mu(x_2, alpha) ~ nu_alpha q_2(x_2) exp H(x_2, y_alpha)``."""
    _check_two_level(H)
    if f.space != H.space:
        raise ValueError("observable and Hamiltonian live on different spaces")
    q2 = _prior(prior2, H.space.size(2), "prior on X_2")
    masses, _ = atom_masses(crp_n, zeta, replicates, seed, prior1, "nu", jobs, H.space.size(1))
    w = np.exp(H.values) * q2
    values = (masses @ (w * f.values).sum(axis=1)) / (masses @ w.sum(axis=1))
    mean, se = _mean_se(values)
    target = average(exact_target_measure(H, zeta, prior1, prior2), f)
    return AverageEstimate(mean=mean, std_error=se, replicates=int(replicates),
                           truncation_n=int(crp_n), target=target, values=values)


@dataclass(frozen=True, eq=False)
class MaximizerComparison:
    maximizer: np.ndarray  # closed form, boxes sorted by weight; shape (k, |X_2|)
    reference: np.ndarray  # random measure on (alpha, x_2) built from nu
    gap: float


def crp_multinomial_experiment(H: CostTensor, zeta: float, n: int, seed: int,
                               prior1=None, prior2=None) -> MaximizerComparison:
    """Compare the Gibbs maximizer with chemical potential ``log rho`` against the random measure.

    Path 1 normalizes ``rho_alpha q_2 e^{H(x_2, y_alpha)}`` in creation order and
    then sorts the boxes.  Path 2 sorts first, forms ``nu_alpha Z_alpha`` and the
    per-box Gibbs conditional ``q_2 e^H / Z_alpha``, and multiplies.
    """
    _check_two_level(H)
    q1 = _prior(prior1, H.space.size(1), "prior on X_1")
    q2 = _prior(prior2, H.space.size(2), "prior on X_2")
    state = crp_run(n, zeta, seed)
    y = draw_atoms(state.k, q1, check_seed(seed))
    weights = pd_weights(state)
    order = np.argsort(-state.occupancies, kind="stable")

    boltz = q2 * np.exp(H.values[y])
    p = weights.rho[:, None] * boltz
    p = (p / p.sum())[order]

    env = atom_environment(H, y[order], q2)
    box = weights.nu * env.Z
    cond = q2 * np.exp(H.values[env.y]) / env.Z[:, None]
    mu = (box / box.sum())[:, None] * cond
    return MaximizerComparison(maximizer=p, reference=mu, gap=float(np.max(np.abs(p - mu))))
