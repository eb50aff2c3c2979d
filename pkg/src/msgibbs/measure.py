"""Multiscale measures built by the backward pressure recursion.

Given ``H`` and scales ``zeta``, the pressures ``P_l = log Z_l`` satisfy

    P_r = H,    exp(zeta_l P_{l-1}) = sum_{x_l} exp(zeta_l P_l),

and the level-``l`` conditional is ``exp(zeta_l (P_l - P_{l-1}))``.  Everything
is done in the log domain.  An optional a-priori reference measure replaces
each sum over ``x_l`` by an expectation under its level conditional.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp, softmax

from .space import CostTensor, Observable, ProductSpace, ScaleParams

#: Above this many states the joint is not materialized.
JOINT_GUARD = 10**7


def _frozen(arr) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def reference_log_conditionals(space: ProductSpace, reference) -> list[np.ndarray]:
    """Log conditionals ``log q^{<l}`` (index ``l - 1``) of a reference joint on ``space``.

    Zero-mass parent slices get a uniform conditional; they carry no weight.
    """
    q = space.as_array(reference, "reference")
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("reference must be a probability vector")
    logs = []
    parent = np.array(q.sum())
    for level in range(1, space.depth + 1):
        marg = q.sum(axis=tuple(range(level, space.depth)))
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(parent[..., None] > 0, marg / parent[..., None], 1.0 / marg.shape[-1])
            logs.append(np.log(cond))
        parent = marg
    return logs


@dataclass(frozen=True, eq=False)
class MultiscaleMeasure:
    """The solved multiscale measure.

    ``pressures[l]`` is ``P_l`` over ``(x_l, ..., x_1)`` (``P_0`` is 0-d),
    ``conditionals[l]`` is ``p^{<l}`` for ``1 <= l <= r`` and ``marginals[l]`` is
    ``p^{(l)}``.  Index 0 of ``conditionals`` and ``marginals`` holds the
    trivial 0-d array ``1.0`` so that lists are indexed by level.
    """

    space: ProductSpace
    zetas: ScaleParams
    pressures: tuple[np.ndarray, ...]
    conditionals: tuple[np.ndarray, ...]
    marginals: tuple[np.ndarray, ...]
    reference: np.ndarray | None = None

    @property
    def depth(self) -> int:
        return self.space.depth

    @property
    def log_partition(self) -> float:
        """``P_0``."""
        return float(self.pressures[0])

    @property
    def hamiltonian(self) -> CostTensor:
        """``H``, which is the deepest pressure ``P_r``."""
        return CostTensor(self.space, self.pressures[self.depth])

    @property
    def root_log_normalizer(self) -> float:
        """``zeta_1 P_0 = log sum_{x_1} exp(zeta_1 P_1)``, the normalizer of ``p^{<1}``."""
        return self.zetas.zeta(1) * self.log_partition

    @cached_property
    def joint(self) -> np.ndarray:
        if self.space.total_size > JOINT_GUARD:
            raise MemoryError(
                f"joint over {self.space.total_size} states not materialized; use joint_entry"
            )
        return self.marginals[self.depth]

    def joint_entry(self, index: int) -> float:
        """``p(x)`` for a flat index, as a product of conditionals along the path."""
        coords = tuple(reversed(self.space.decode(index)))  # (x_1, ..., x_r)
        out = 1.0
        for level in range(1, self.depth + 1):
            out *= float(self.conditionals[level][coords[:level]])
        return out


def _assemble_marginals(space, conds, materialize):
    marginals = [np.array(1.0)]
    m = np.array(1.0)
    for level in range(1, space.depth + 1):
        if level == space.depth and not materialize:
            break
        m = m[..., None] * conds[level]
        marginals.append(m)
    return marginals


def build_measure(H: CostTensor, zetas: ScaleParams, reference=None) -> MultiscaleMeasure:
    """Run the backward recursion for ``(X, zeta, H)``.

    Parameters
    ----------
    H : CostTensor
    zetas : ScaleParams
        ``(zeta_r, ..., zeta_1)``; must match the depth of ``H.space``.
    reference : array, optional
        A-priori probability over ``X``.  When given, sums over ``x_l`` become
        expectations under its conditionals ``q^{<l}``.
    """
    space = H.space
    if zetas.depth != space.depth:
        raise ValueError(f"got {zetas.depth} scale parameters for a depth-{space.depth} space")
    log_ref = None if reference is None else reference_log_conditionals(space, reference)

    r = space.depth
    pressures: list[np.ndarray] = [None] * (r + 1)
    conds: list[np.ndarray] = [None] * (r + 1)
    pressures[r] = np.array(H.values, dtype=float)
    for level in range(r, 0, -1):
        z = zetas.zeta(level)
        s = z * pressures[level]
        if log_ref is not None:
            s = s + log_ref[level - 1]
        lse = logsumexp(s, axis=-1)
        pressures[level - 1] = lse / z
        conds[level] = softmax(s, axis=-1)
    conds[0] = np.array(1.0)

    marginals = _assemble_marginals(space, conds, space.total_size <= JOINT_GUARD)
    return MultiscaleMeasure(
        space=space,
        zetas=zetas,
        pressures=tuple(_frozen(p) for p in pressures),
        conditionals=tuple(_frozen(c) for c in conds),
        marginals=tuple(_frozen(m) for m in marginals),
        reference=None if reference is None else _frozen(space.as_array(reference)),
    )


def measure_from_conditionals(space, zetas, pressures, conds) -> MultiscaleMeasure:
    """Assemble a measure from externally computed level tables (index by level)."""
    conds = [np.array(1.0)] + [np.asarray(c, dtype=float) for c in conds[1:]]
    marginals = _assemble_marginals(space, conds, space.total_size <= JOINT_GUARD)
    return MultiscaleMeasure(
        space=space,
        zetas=zetas,
        pressures=tuple(_frozen(p) for p in pressures),
        conditionals=tuple(_frozen(c) for c in conds),
        marginals=tuple(_frozen(m) for m in marginals),
    )


def _check_space(m: MultiscaleMeasure, f: Observable):
    if f.space != m.space:
        raise ValueError(f"observable lives on {f.space.level_sizes}, measure on {m.space.level_sizes}")


def average(m: MultiscaleMeasure, f: Observable) -> float:
    """``<f> = sum_x p(x) f(x)``, folded level by level through the conditionals."""
    _check_space(m, f)
    g = f.values
    for level in range(m.depth, 0, -1):
        g = np.sum(m.conditionals[level] * g, axis=-1)
    return float(g)


def conditional_average(m: MultiscaleMeasure, f: Observable, level: int) -> np.ndarray:
    """``<f>_{<l}`` as a table over ``(x_{l-1}, ..., x_1)``.

    ``f`` must not read coordinates deeper than ``level``.
    """
    _check_space(m, f)
    if not 1 <= level <= m.depth:
        raise ValueError(f"level {level} outside [1, {m.depth}]")
    if f.depends_up_to > level:
        raise ValueError(
            f"observable depends on level {f.depends_up_to}, deeper than {level}"
        )
    return np.sum(m.conditionals[level] * f.table(level), axis=-1)


def tilted_pressure(H: CostTensor, zetas: ScaleParams, f: Observable, lam: float, reference=None) -> float:
    """``P_0`` of the measure for ``H + lam * f``."""
    if f.space != H.space:
        raise ValueError("space mismatch")
    tilted = CostTensor(H.space, H.values + lam * f.values)
    return build_measure(tilted, zetas, reference).log_partition


def rebuild(m: MultiscaleMeasure, H: CostTensor) -> MultiscaleMeasure:
    """The measure with the same scales and reference as ``m`` but Hamiltonian ``H``."""
    return build_measure(H, m.zetas, m.reference)


@dataclass(frozen=True, eq=False)
class FreeEnergies:
    """Level free energies ``F_l = -P_l / beta`` and inverse temperatures ``beta_l = zeta_l beta``."""

    beta: float
    free_energies: tuple[np.ndarray, ...]
    betas: tuple[float, ...]  # (beta_r, ..., beta_1)
    identity_error: float


def free_energies(m: MultiscaleMeasure, beta: float) -> FreeEnergies:
    """Free energies at inverse temperature ``beta``.

    ``identity_error`` is the largest deviation between ``p^{<l}`` and
    ``exp(-beta_l (F_l - F_{l-1}))`` over all levels.
    """
    if not beta > 0:
        raise ValueError(f"beta must be > 0, got {beta}")
    F = tuple(_frozen(-p / beta) for p in m.pressures)
    err = 0.0
    for level in range(1, m.depth + 1):
        b = m.zetas.zeta(level) * beta
        rebuilt = np.exp(-b * (F[level] - F[level - 1][..., None]))
        err = max(err, float(np.max(np.abs(rebuilt - m.conditionals[level]))))
    betas = tuple(z * beta for z in m.zetas.zetas)
    return FreeEnergies(beta=beta, free_energies=F, betas=betas, identity_error=err)
