"""Multinomial large deviations and the reinforced multinomial process.

Balls are thrown level by level down the tree ``X_1 -> X_2 x X_1 -> ...``.  On
entering a node at level ``l - 1`` each ball is reinforced with parameter
``gamma_l`` (duplicated or annihilated independently) and the surviving balls
are scattered into the children by ``q^{<l}``.  The exponential decay rate of the
nested histogram event is a ``(1 + gamma)``-weighted sum of per-level
conditional KL divergences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy
from scipy.stats import binom

from .measure import MultiscaleMeasure
from .rng import as_generator, check_seed, stream
from .space import CostTensor, ProductSpace

REINFORCE, SCATTER = 0, 1


@dataclass(frozen=True, eq=False)
class Histogram:
    """Integer ball counts over a product space."""

    space: ProductSpace
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim == 1 and c.size == self.space.total_size:
            c = c.reshape(self.space.shape)
        if c.shape != self.space.shape:
            raise ValueError(f"counts shape {c.shape} does not match {self.space.shape}")
        if np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("counts must be non-negative integers")
        c = c.astype(np.int64)
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def empirical(self) -> np.ndarray:
        if self.n == 0:
            raise ValueError("empty histogram has no empirical distribution")
        return self.counts / self.n


@dataclass(frozen=True, eq=False)
class BaseMeasure:
    """A-priori probability ``q`` over a product space, with its level conditionals."""

    space: ProductSpace
    q: np.ndarray

    def __post_init__(self):
        q = self.space.as_array(self.q, "base measure")
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
            raise ValueError("base measure must be non-negative and sum to 1")
        q = np.array(q)
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def uniform(cls, space: ProductSpace) -> "BaseMeasure":
        return cls(space, np.full(space.shape, 1.0 / space.total_size))

    def marginal(self, level: int) -> np.ndarray:
        return marginal(self.q, self.space, level)

    def conditional(self, level: int) -> np.ndarray:
        """``q^{<l}`` over ``(x_l, ..., x_1)``; zero where the parent has no mass."""
        return conditional(self.q, self.space, level)


def marginal(p: np.ndarray, space: ProductSpace, level: int) -> np.ndarray:
    """``p^{(l)}``: the joint summed over ``x_r, ..., x_{l+1}``."""
    return np.asarray(p).sum(axis=tuple(range(level, space.depth)))


def conditional(p: np.ndarray, space: ProductSpace, level: int) -> np.ndarray:
    child = marginal(p, space, level)
    parent = marginal(p, space, level - 1)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(parent > 0, child / np.where(parent > 0, parent, 1.0), 0.0)


@dataclass(frozen=True)
class ReinforcementParams:
    """Reinforcement parameters ``(gamma_r, ..., gamma_1)``, each > -1.

    ``gamma_l`` acts on the balls entering a node of level ``l - 1``; ``gamma_1``
    acts on the initial ``n`` balls.
    """

    gammas: tuple[float, ...]

    def __post_init__(self):
        gs = tuple(float(g) for g in self.gammas)
        if not gs or any(not np.isfinite(g) or g <= -1 for g in gs):
            raise ValueError(f"reinforcement parameters must be > -1, got {gs}")
        object.__setattr__(self, "gammas", gs)

    @property
    def depth(self) -> int:
        return len(self.gammas)

    def gamma(self, level: int) -> float:
        return self.gammas[self.depth - level]

    def cumulative(self) -> "ReinforcementParams":
        """Parameters whose per-level weights are the running products ``prod_{k<=l} (1 + gamma_k)``.

        The nested event of the process decays at the rate of these cumulative
        weights; for ``gamma_1 = 0`` and two levels they coincide with the originals.
        """
        w = np.cumprod([1.0 + self.gamma(level) for level in range(1, self.depth + 1)])
        return ReinforcementParams(tuple(w[level - 1] - 1.0 for level in range(self.depth, 0, -1)))


def _params(gammas, depth: int) -> ReinforcementParams:
    if not isinstance(gammas, ReinforcementParams):
        gammas = ReinforcementParams(tuple(np.atleast_1d(gammas)))
    if gammas.depth != depth:
        raise ValueError(f"{gammas.depth} reinforcement parameters for a depth-{depth} space")
    return gammas


def _joint(p, space: ProductSpace) -> np.ndarray:
    if isinstance(p, MultiscaleMeasure):
        return p.joint
    arr = space.as_array(p, "distribution")
    if np.any(arr < 0) or abs(arr.sum() - 1.0) > 1e-9:
        raise ValueError("distribution must be non-negative and sum to 1")
    return arr


# -- plain multinomial ------------------------------------------------------------------


def multinomial_sample(n: int, q: BaseMeasure, seed) -> Histogram:
    """Throw ``n`` balls independently into the boxes of ``q.space``."""
    if n < 0:
        raise ValueError("n must be >= 0")
    rng = as_generator(seed)
    counts = rng.multinomial(n, q.q.ravel())
    return Histogram(q.space, counts)


def kl_divergence(p, q) -> float:
    """``sum p log(p/q)``; ``+inf`` if ``p`` charges a ``q``-null box."""
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q, dtype=float).ravel()
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.size} vs {q.size}")
    if np.any((p > 0) & (q == 0)):
        return math.inf
    with np.errstate(divide="ignore"):
        return float(np.sum(xlogy(p, p)) - np.sum(xlogy(p, np.where(p > 0, q, 1.0))))


def log_multinomial_pmf(counts, probs) -> float:
    """Exact ``log P(Y = counts)`` for ``Y ~ Multinomial(sum(counts), probs)``."""
    counts = np.asarray(counts, dtype=float).ravel()
    probs = np.asarray(probs, dtype=float).ravel()
    if np.any((counts > 0) & (probs == 0)):
        return -math.inf
    n = counts.sum()
    with np.errstate(divide="ignore"):
        return float(
            gammaln(n + 1) - np.sum(gammaln(counts + 1)) + np.sum(xlogy(counts, np.where(counts > 0, probs, 1.0)))
        )


def exact_log_multinomial_pmf(h: Histogram, q: BaseMeasure) -> float:
    if h.space != q.space:
        raise ValueError("histogram and base measure live on different spaces")
    return log_multinomial_pmf(h.counts, q.q)


# -- reinforcement -------------------------------------------------------------------------


def reinforce_balls(count: int, gamma: float, seed) -> int:
    """Apply the per-ball reinforcement rule to ``count`` balls.

    ``gamma`` in (-1, 0): each ball survives with probability ``1 + gamma``.
    ``gamma >= 0``: each ball becomes ``1 + floor(gamma) + Bernoulli(frac(gamma))``
    balls.  The mean output is ``count * (1 + gamma)`` in every regime.
    """
    if gamma <= -1:
        raise ValueError(f"gamma must be > -1, got {gamma}")
    if count < 0:
        raise ValueError("count must be >= 0")
    count = int(count)
    if count == 0 or gamma == 0:
        return count
    rng = as_generator(seed)
    if gamma < 0:
        return int(rng.binomial(count, 1.0 + gamma))
    whole = math.floor(gamma)
    frac = gamma - whole
    extra = int(rng.binomial(count, frac)) if frac > 0 else 0
    return count * (1 + whole) + extra


def reinforcement_log_pmf(count: int, gamma: float, total: int) -> float:
    """Exact ``log P(reinforce_balls(count, gamma) = total)``."""
    if gamma <= -1:
        raise ValueError(f"gamma must be > -1, got {gamma}")
    if count == 0 or gamma == 0:
        return 0.0 if total == count else -math.inf
    if gamma < 0:
        return float(binom.logpmf(total, count, 1.0 + gamma))
    whole = math.floor(gamma)
    frac = gamma - whole
    extra = total - count * (1 + whole)
    if frac == 0:
        return 0.0 if extra == 0 else -math.inf
    return float(binom.logpmf(extra, count, frac))


@dataclass(frozen=True, eq=False)
class ReinforcedOutcome:
    """Counts of one run of the reinforced process.

    ``node_counts[l]`` is ``Y^{<l,gamma}`` over ``(x_l, ..., x_1)`` (index 0: the
    ``n`` initial balls).  ``reinforced[l]`` holds, for every node of level
    ``l - 1``, the ball count after reinforcement with ``gamma_l``;
    ``node_counts[l - 1]`` is the count before it.
    """

    space: ProductSpace
    gammas: ReinforcementParams
    seed: int
    node_counts: tuple[np.ndarray, ...]
    reinforced: tuple[np.ndarray, ...] = field(repr=False)

    def parent_counts(self, level: int) -> np.ndarray:
        return self.node_counts[level - 1]

    @property
    def histogram(self) -> Histogram:
        return Histogram(self.space, self.node_counts[self.space.depth])


def run_reinforced_two_scale(n: int, gamma: float, q: BaseMeasure, seed: int) -> ReinforcedOutcome:
    """Two-scale process: ``Y^{<1} ~ M(n, q^{<1})``, then reinforce and scatter inside each parent."""
    space = q.space
    if space.depth != 2:
        raise ValueError("two-scale process needs a two-level space")
    seed = check_seed(seed)
    parents = stream(seed, 1, 0, SCATTER).multinomial(n, q.marginal(1))
    q2 = q.conditional(2)
    totals = np.zeros_like(parents)
    children = np.zeros(space.shape, dtype=np.int64)
    for j, y in enumerate(parents):
        totals[j] = reinforce_balls(int(y), gamma, stream(seed, 2, j, REINFORCE))
        if totals[j]:
            children[j] = stream(seed, 2, j, SCATTER).multinomial(totals[j], q2[j])
    return ReinforcedOutcome(
        space=space,
        gammas=ReinforcementParams((gamma, 0.0)),
        seed=seed,
        node_counts=(np.array(n), parents, children),
        reinforced=(None, np.array(n), totals),
    )


def run_reinforced_multiscale(n: int, gammas, q: BaseMeasure, seed: int) -> ReinforcedOutcome:
    """The ``r``-step process: at each level reinforce every node with ``gamma_l`` and scatter by ``q^{<l}``."""
    space = q.space
    gammas = _params(gammas, space.depth)
    seed = check_seed(seed)
    counts = [np.array(int(n))]
    reinforced = [None]
    for level in range(1, space.depth + 1):
        g = gammas.gamma(level)
        parents = counts[-1]
        cond = q.conditional(level).reshape(-1, space.size(level))
        flat_parents = parents.reshape(-1)
        totals = np.zeros_like(flat_parents)
        children = np.zeros(cond.shape, dtype=np.int64)
        for v, y in enumerate(flat_parents):
            totals[v] = reinforce_balls(int(y), g, stream(seed, level, v, REINFORCE))
            if totals[v]:
                children[v] = stream(seed, level, v, SCATTER).multinomial(totals[v], cond[v])
        reinforced.append(totals.reshape(parents.shape))
        counts.append(children.reshape(space.prefix_shape(level)))
    return ReinforcedOutcome(
        space=space, gammas=gammas, seed=seed, node_counts=tuple(counts), reinforced=tuple(reinforced)
    )


# -- rate functions --------------------------------------------------------------------------


def charges_null_box(p, q: BaseMeasure) -> bool:
    arr = _joint(p, q.space)
    return bool(np.any((arr > 0) & (q.q == 0)))


def level_divergences(p, q: BaseMeasure) -> np.ndarray:
    """``sum_parents p^{(l-1)} KL(p^{<l} || q^{<l})`` for each level (index ``l - 1``)."""
    space = q.space
    arr = _joint(p, space)
    out = []
    for level in range(1, space.depth + 1):
        pm = marginal(arr, space, level)
        pc = conditional(arr, space, level)
        qc = q.conditional(level)
        if np.any((pm > 0) & (qc == 0)):
            out.append(math.inf)
            continue
        with np.errstate(divide="ignore"):
            out.append(float(np.sum(xlogy(pm, pc)) - np.sum(xlogy(pm, np.where(pm > 0, qc, 1.0)))))
    return np.array(out)


def rate_function(p, q: BaseMeasure, gammas) -> float:
    """``sum_l (1 + gamma_l) sum_parents p^{(l-1)} KL(p^{<l} || q^{<l})``; ``+inf`` on null boxes."""
    g = _params(gammas, q.space.depth)
    d = level_divergences(p, q)
    if not np.all(np.isfinite(d)):
        return math.inf
    weights = np.array([1.0 + g.gamma(level) for level in range(1, q.space.depth + 1)])
    return float(weights @ d)


def _integral(x: float, what: str) -> int:
    k = round(x)
    if abs(x - k) > 1e-9 * max(1.0, abs(x)):
        raise ValueError(f"{what} = {x!r} is not an integer; choose n so that all nested targets are integral")
    return int(k)


def nested_log_probability(n: int, p, q: BaseMeasure, gammas) -> float:
    """Exact ``log P(Y^{<l,gamma} hits its target for every l)``.

    Targets are built top-down: a node with target count ``c`` must see exactly
    ``(1 + gamma_l) c`` balls after reinforcement, which must then split as
    ``(1 + gamma_l) c * p^{<l}(.|node)`` among its children.  The reinforcement
    factor is the exact binomial probability of that total.
    """
    space = q.space
    g = _params(gammas, space.depth)
    arr = _joint(p, space)
    if charges_null_box(arr, q):
        return -math.inf
    total = 0.0
    counts = np.array([_integral(float(n), "n")])
    for level in range(1, space.depth + 1):
        gl = g.gamma(level)
        pc = conditional(arr, space, level).reshape(-1, space.size(level))
        qc = q.conditional(level).reshape(-1, space.size(level))
        children = np.zeros(pc.shape, dtype=np.int64)
        for v, c in enumerate(counts):
            if c == 0:
                continue
            t = _integral((1.0 + gl) * c, f"reinforced total at level {level}")
            total += reinforcement_log_pmf(int(c), gl, t)
            kids = [_integral(t * x, f"child target at level {level}") for x in pc[v]]
            if sum(kids) != t:
                raise ValueError(f"child targets {kids} do not add up to {t}")
            children[v] = kids
            total += log_multinomial_pmf(kids, qc[v])
        counts = children.reshape(-1)
    return total


@dataclass(frozen=True)
class RateEstimate:
    n: int
    log_probability: float
    estimate: float  # -(1/n) log P
    rate: float
    gap: float
    null_box: bool


def empirical_rate_estimate(p, q: BaseMeasure, gammas, n_list: Sequence[int]) -> list[RateEstimate]:
    """``-(1/n) log P`` of the nested event for every ``n`` in ``n_list``.

    The limit is :func:`rate_function` with the cumulative weights of
    :meth:`ReinforcementParams.cumulative` (equal to the plain weights when
    only one level reinforces).
    """
    g = _params(gammas, q.space.depth)
    null = charges_null_box(p, q)
    rate = rate_function(p, q, g.cumulative())
    rows = []
    for n in n_list:
        lp = nested_log_probability(n, p, q, g)
        est = -lp / n
        rows.append(RateEstimate(n=int(n), log_probability=lp, estimate=est, rate=rate,
                                 gap=est - rate if not null else math.inf, null_box=null))
    return rows


def tilted_rate_minimizer(H: CostTensor, q: BaseMeasure, gammas, mu: float) -> np.ndarray:
    """Minimize ``rate_function(p) - mu <H>_p`` over distributions on ``H.space``.

    Backward sweep with reference weights: ``V_r = mu H``,
    ``p^{<l} ~ q^{<l} exp(V_l / (1 + gamma_l))``,
    ``V_{l-1} = (1 + gamma_l) log sum q^{<l} exp(V_l / (1 + gamma_l))``.
    """
    space = H.space
    if q.space != space:
        raise ValueError("space mismatch")
    g = _params(gammas, space.depth)
    V = mu * H.values
    conds = [None] * (space.depth + 1)
    for level in range(space.depth, 0, -1):
        t = 1.0 + g.gamma(level)
        with np.errstate(divide="ignore"):
            s = V / t + np.log(q.conditional(level))
        lse = logsumexp(s, axis=-1)
        finite = np.isfinite(lse)[..., None]
        conds[level] = np.where(finite, np.exp(s - np.where(finite, lse[..., None], 0.0)), 0.0)
        V = t * lse
    if not np.isfinite(V):
        raise ValueError("rate is infinite for every distribution (degenerate base measure)")
    joint = np.array(1.0)
    for level in range(1, space.depth + 1):
        joint = joint[..., None] * conds[level]
    return joint
