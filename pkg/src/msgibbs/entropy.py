"""Shannon entropy, its per-level decomposition and the constrained MaxEnt functional."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .measure import MultiscaleMeasure
from .space import CostTensor, ProductSpace


def shannon_entropy(p) -> float:
    """``-sum p log p`` in nats, with ``0 log 0 = 0``."""
    p = np.asarray(p, dtype=float).ravel()
    if np.any(p < 0):
        raise ValueError("probability vector has negative entries")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probability vector sums to {p.sum()!r}, not 1")
    return float(-np.sum(xlogy(p, p)))


@dataclass(frozen=True)
class EntropyProfile:
    """Total entropy and the conditional entropies ``(S^1, ..., S^r)`` (nats).

    ``per_level[l - 1]`` is ``S^l``.
    """

    total: float
    per_level: tuple[float, ...]

    def level(self, level: int) -> float:
        return self.per_level[level - 1]


def level_entropies(p: np.ndarray, depth: int) -> np.ndarray:
    """Conditional entropies of (a batch of) joints.

    ``p`` has shape ``batch + space.shape`` where the space occupies the last
    ``depth`` axes.  Returns shape ``batch + (depth,)`` with ``S^l`` at index
    ``l - 1``.  Parent slices of zero mass contribute zero.
    """
    nb = p.ndim - depth
    out = []
    parent = p.sum(axis=tuple(range(nb, p.ndim)))
    for level in range(1, depth + 1):
        marg = p.sum(axis=tuple(range(nb + level, p.ndim))) if level < depth else p
        par = parent[..., None]
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(par > 0, marg / np.where(par > 0, par, 1.0), 1.0)
        out.append(-np.sum(xlogy(marg, cond), axis=tuple(range(nb, nb + level))))
        parent = marg
    return np.stack(out, axis=-1)


def entropy_profile(p, space: ProductSpace | None = None) -> EntropyProfile:
    """Chain-rule decomposition ``S[p] = sum_l S^l[p]`` with ``S^l = <S[p^{<l}]>_{l-1}``.

    ``p`` is a :class:`MultiscaleMeasure` or a joint over ``space``.
    """
    if isinstance(p, MultiscaleMeasure):
        per = []
        for level in range(1, p.depth + 1):
            per.append(float(-np.sum(xlogy(p.marginals[level], p.conditionals[level]))))
        return EntropyProfile(total=shannon_entropy(p.joint), per_level=tuple(per))
    if space is None:
        raise ValueError("a bare joint needs its ProductSpace")
    arr = space.as_array(p, "joint")
    total = shannon_entropy(arr)  # also validates
    per = tuple(float(s) for s in level_entropies(arr, space.depth))
    return EntropyProfile(total=total, per_level=per)


@dataclass(frozen=True)
class Multipliers:
    """Lagrange multipliers ``mu`` and ``(gamma_r, ..., gamma_2)``; ``gamma_1 = 0``.

    The gammas are listed deepest level first, like scale parameters.
    """

    mu: float
    gammas: tuple[float, ...] = ()

    def __post_init__(self):
        gs = tuple(float(g) for g in self.gammas)
        if any(not np.isfinite(g) or 1.0 + g <= 0 for g in gs):
            raise ValueError(f"every gamma must be finite and > -1, got {gs}")
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "gammas", gs)

    @property
    def depth(self) -> int:
        return len(self.gammas) + 1

    def gamma(self, level: int) -> float:
        if level == 1:
            return 0.0
        if not 2 <= level <= self.depth:
            raise ValueError(f"level {level} outside [1, {self.depth}]")
        return self.gammas[self.depth - level]


def _phi_terms(p: np.ndarray, H: CostTensor, mult: Multipliers) -> np.ndarray:
    depth = H.space.depth
    s = level_entropies(p, depth)
    weights = np.array([1.0 + mult.gamma(level) for level in range(1, depth + 1)])
    energy = np.sum(p * H.values, axis=tuple(range(p.ndim - depth, p.ndim)))
    return s @ weights + mult.mu * energy


def phi(p, H: CostTensor, mult: Multipliers) -> float:
    """``S[p] + mu <H>_p + sum_{l>=2} gamma_l S^l[p]``."""
    if mult.depth != H.space.depth:
        raise ValueError(f"multipliers for depth {mult.depth}, Hamiltonian of depth {H.space.depth}")
    if isinstance(p, MultiscaleMeasure):
        if p.space != H.space:
            raise ValueError("space mismatch")
        p = p.joint
    arr = H.space.as_array(p, "joint")
    return float(_phi_terms(arr, H, mult))


def phi_batch(ps: np.ndarray, H: CostTensor, mult: Multipliers) -> np.ndarray:
    """:func:`phi` over a stack of joints of shape ``(k,) + space.shape``."""
    return _phi_terms(np.asarray(ps, dtype=float), H, mult)


def bernoulli_entropy(z: float) -> float:
    return shannon_entropy([z, 1.0 - z])

