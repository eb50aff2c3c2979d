"""The hierarchical maximizer of the constrained entropy functional and two-temperature tools.

The multipliers ``(mu, gamma)`` and the scale parameters of the resulting
measure are related by ``zeta_l = mu / (1 + gamma_l)`` with ``gamma_1 = 0``.
In two-scale language ``beta_1 = zeta_1 = mu``, ``beta_2 = zeta_2 = mu / (1 + gamma)``
and ``beta_1 / beta_2 = 1 + gamma``.  The optimal value of the functional is
``zeta_1 P_0`` (the log normalizer of the root conditional).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .entropy import Multipliers, bernoulli_entropy, entropy_profile, phi, shannon_entropy
from .errors import InfeasibleTargetsError, NumericalError
from .measure import (
    MultiscaleMeasure,
    average,
    build_measure,
    conditional_average,
    measure_from_conditionals,
    rebuild,
)
from .space import CostTensor, Observable, ProductSpace, ScaleParams

FROZEN_BETA = 1e8


def zetas_from_multipliers(mult: Multipliers) -> ScaleParams:
    if mult.mu <= 0:
        raise ValueError(
            f"mu = {mult.mu} gives zeta_r = mu/(1+gamma_r) <= 0; no valid multiscale measure"
        )
    return ScaleParams(tuple(mult.mu / (1.0 + mult.gamma(level)) for level in range(mult.depth, 0, -1)))


def multipliers_from_zetas(zetas: ScaleParams) -> Multipliers:
    mu = zetas.zeta(1)
    return Multipliers(mu, tuple(mu / zetas.zeta(level) - 1.0 for level in range(zetas.depth, 1, -1)))


def solve_variational(H: CostTensor, mult: Multipliers) -> MultiscaleMeasure:
    """Maximize ``S + mu <H> + sum gamma_l S^l`` by a backward sweep over levels.

    At level ``l`` the conditional maximizes ``(1 + gamma_l) S[p^{<l}] + <V_l>_{<l}``
    with ``V_r = mu H``; the optimum is ``p^{<l} ~ exp(V_l / (1 + gamma_l))`` and
    ``V_{l-1} = (1 + gamma_l) log sum exp(V_l / (1 + gamma_l))``.  ``V_0`` is the
    optimal value.  Raises :class:`NumericalError` if the functional evaluated at
    the returned measure misses ``V_0`` by more than 1e-10.
    """
    space = H.space
    if mult.depth != space.depth:
        raise ValueError(f"multipliers for depth {mult.depth}, Hamiltonian of depth {space.depth}")
    zetas = zetas_from_multipliers(mult)

    r = space.depth
    values = [None] * (r + 1)
    conds = [None] * (r + 1)
    values[r] = mult.mu * H.values
    for level in range(r, 0, -1):
        t = 1.0 + mult.gamma(level)
        s = values[level] / t
        lse = logsumexp(s, axis=-1)
        conds[level] = softmax(s, axis=-1)
        values[level - 1] = t * lse
    optimum = float(values[0])

    pressures = [v / mult.mu for v in values]
    m = measure_from_conditionals(space, zetas, pressures, conds)
    achieved = phi(m, H, mult)
    if abs(achieved - optimum) > 1e-10 * max(1.0, abs(optimum)):
        raise NumericalError(f"phi at maximizer {achieved!r} != optimal value {optimum!r}")
    return m


def optimal_value(m: MultiscaleMeasure) -> float:
    """Optimal value of the functional for a measure produced by :func:`solve_variational`."""
    return m.root_log_normalizer


# -- two-scale constrained problem -------------------------------------------------


def _two_scale_stats(H: CostTensor, u: np.ndarray, reference=None):
    z1, z2 = np.exp(u)
    m = build_measure(H, ScaleParams((z2, z1)), reference)
    energy = float(np.sum(m.joint * H.values))
    s2 = entropy_profile(m).level(2)
    return m, energy, s2


@dataclass(frozen=True)
class ConstrainedSolution:
    energy_target: float
    entropy_target: float
    multipliers: Multipliers
    measure: MultiscaleMeasure = field(repr=False)
    residual_energy: float
    residual_entropy: float
    iterations: int
    roots: tuple[Multipliers, ...]
    legendre_value: float

    def to_record(self) -> dict:
        return {
            "E": self.energy_target,
            "S2": self.entropy_target,
            "mu": self.multipliers.mu,
            "gamma": self.multipliers.gammas[0],
            "residual_energy": self.residual_energy,
            "residual_entropy": self.residual_entropy,
            "iterations": self.iterations,
            "n_roots": len(self.roots),
            "roots": [[m.mu, m.gammas[0]] for m in self.roots],
            "legendre_value": self.legendre_value,
        }


def _newton(H, target, u0, max_iter, tol, fd_step=1e-6):
    """Damped Newton on ``(log zeta_1, log zeta_2)``.  Returns (u, |F|, iterations, converged)."""

    def residual(u):
        _, e, s = _two_scale_stats(H, u)
        return np.array([e, s]) - target

    u = np.array(u0, dtype=float)
    F = residual(u)
    norm = np.max(np.abs(F))
    for it in range(1, max_iter + 1):
        if norm < tol:
            return u, norm, it - 1, True
        J = np.empty((2, 2))
        for k in range(2):
            du = np.zeros(2)
            du[k] = fd_step
            J[:, k] = (residual(u + du) - residual(u - du)) / (2 * fd_step)
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return u, norm, it, False
        big = np.max(np.abs(step))
        if big > 2.0:
            step *= 2.0 / big
        t = 1.0
        while t > 1e-6:
            trial = u + t * step
            if np.all(np.abs(trial) < 50):
                Ft = residual(trial)
                nt = np.max(np.abs(Ft))
                if nt < norm:
                    break
            t *= 0.5
        else:
            return u, norm, it, False
        u, F, norm = trial, Ft, nt
    return u, norm, max_iter, norm < tol


def _grid_seeds(H, target, n=20):
    """Grid points ordered by residual, keeping only the best point of each ``zeta_1`` row.

    One seed per row keeps the candidates spread along ``zeta_1``, the direction
    in which the statistics are flattest.
    """
    rows = []
    for a in np.linspace(np.log(1e-2), np.log(1e2), n):
        best = None
        for b in np.linspace(np.log(1e-4), np.log(1e3), n):
            u = np.array([a, b])
            _, e, s = _two_scale_stats(H, u)
            r = float(np.max(np.abs(np.array([e, s]) - target)))
            if best is None or r < best[0]:
                best = (r, u)
        rows.append(best)
    rows.sort(key=lambda t: t[0])
    return [u for _, u in rows]


def _continuation(H, target, u0, max_iter, tol):
    _, e0, s0 = _two_scale_stats(H, u0)
    start = np.array([e0, s0])
    u, t, dt, total = u0, 0.0, 0.1, 0
    while t < 1.0 and dt > 1e-4:
        t_next = min(1.0, t + dt)
        goal = (1 - t_next) * start + t_next * target
        cand, _, its, ok = _newton(H, goal, u, max_iter, tol)
        total += its
        if ok:
            u, t = cand, t_next
            dt = min(0.25, dt * 1.5)
        else:
            dt *= 0.5
    return u, t >= 1.0, total


def solve_constrained_two_scale(
    H: CostTensor,
    E: float,
    S2: float,
    *,
    max_iter: int = 200,
    tol: float = 1e-11,
    n_seeds: int = 8,
    initial: Multipliers | None = None,
) -> ConstrainedSolution:
    """Find ``(mu, gamma)`` whose two-scale measure has ``<H> = E`` and ``S^2 = S2``.

    The stationarity conditions of the Legendre transform are solved by damped
    Newton in ``(log zeta_1, log zeta_2)`` from the best seeds of a 20x20 grid,
    with a continuation fallback.  ``initial`` multipliers, if given, are tried
    first (warm start along a sweep of targets); when that start converges the
    grid search is skipped and only its root is reported.  Otherwise all
    distinct roots found from the grid seeds are reported.

    Raises
    ------
    InfeasibleTargetsError
        if the residual cannot be driven below 1e-6 from any seed.
    """
    space = H.space
    if space.depth != 2:
        raise ValueError("the constrained solver handles two-level spaces only")
    if not 0.0 < S2 < np.log(space.size(2)):
        raise InfeasibleTargetsError(f"S2={S2} outside (0, log|X_2|) = (0, {np.log(space.size(2))})")
    if not H.values.min() < E < H.values.max():
        raise InfeasibleTargetsError(f"E={E} outside the range of H")
    target = np.array([E, S2], dtype=float)

    roots: list[np.ndarray] = []
    best = None
    if initial is not None:
        u0 = np.log(zetas_from_multipliers(initial).zetas[::-1])
        u, norm, its, ok = _newton(H, target, u0, max_iter, tol)
        best = (u, norm, its)
        if norm < 1e-6:
            roots.append(u)
    seeds = [] if roots else _grid_seeds(H, target)
    for u0 in seeds[:n_seeds]:
        u, norm, its, ok = _newton(H, target, u0, max_iter, tol)
        if best is None or norm < best[1]:
            best = (u, norm, its)
        if norm < 1e-6 and not any(np.max(np.abs(u - v)) < 1e-6 for v in roots):
            roots.append(u)
    if not roots:
        u, ok, its = _continuation(H, target, seeds[0], max_iter, tol)
        if ok:
            u, norm, more, _ = _newton(H, target, u, max_iter, tol)
            roots.append(u)
            best = (u, norm, its + more)
    if not roots:
        raise InfeasibleTargetsError(
            f"infeasible targets E={E}, S2={S2}: best residual {best[1]:.3g} after Newton and continuation"
        )

    chosen = min(roots, key=lambda u: np.max(np.abs(_stats_residual(H, u, target))))
    m, e, s = _two_scale_stats(H, chosen)
    z1, z2 = np.exp(chosen)
    mult = Multipliers(z1, (z1 / z2 - 1.0,))
    as_mult = tuple(Multipliers(np.exp(u[0]), (np.exp(u[0] - u[1]) - 1.0,)) for u in roots)
    return ConstrainedSolution(
        energy_target=E,
        entropy_target=S2,
        multipliers=mult,
        measure=m,
        residual_energy=abs(e - E),
        residual_entropy=abs(s - S2),
        iterations=int(best[2]),
        roots=as_mult,
        legendre_value=legendre_value(m, mult, E, S2),
    )


def _stats_residual(H, u, target):
    _, e, s = _two_scale_stats(H, u)
    return np.array([e, s]) - target


def legendre_value(m: MultiscaleMeasure, mult: Multipliers, E: float, S2: float) -> float:
    """``P_0(mu, gamma) - mu E - (1 + gamma) S2`` with ``P_0(mu, gamma)`` the optimal functional value."""
    return optimal_value(m) - mult.mu * E - (1.0 + mult.gammas[0]) * S2


def legendre_pressure(H: CostTensor, E: float, S2: float, **kwargs) -> float:
    """The transformed pressure ``P_0(E, S_2)`` at its stationary multipliers."""
    return solve_constrained_two_scale(H, E, S2, **kwargs).legendre_value


# -- thermodynamics -----------------------------------------------------------------


@dataclass(frozen=True)
class TemperatureReport:
    beta1: float
    beta2: float
    ratio: float  # beta1 / beta2
    frozen_level2: bool


def temperature_ratios(mult: Multipliers) -> TemperatureReport:
    """``beta_2 = mu / (1 + gamma)`` and ``beta_1 / beta_2 = 1 + gamma`` for a two-scale system."""
    if mult.depth != 2:
        raise ValueError("temperature ratios are defined for two-scale multipliers")
    g = mult.gammas[0]
    beta2 = mult.mu / (1.0 + g)
    return TemperatureReport(
        beta1=mult.mu, beta2=beta2, ratio=1.0 + g, frozen_level2=abs(beta2) > FROZEN_BETA
    )


@dataclass(frozen=True)
class LinearResponse:
    level: int
    lhs: np.ndarray | float
    rhs: np.ndarray | float
    abs_err: float


def linear_response_check(
    m: MultiscaleMeasure, O: Observable, A: Observable, h: float = 1e-5, level: int | None = None
) -> LinearResponse:
    """Compare the response of ``<O>`` to ``H -> H + lam A`` with ``beta_alpha Cov(O, A)``.

    ``A`` must read only ``x_alpha``.  For ``alpha = 1`` the averages are full
    averages.  For ``alpha = 2`` the equilibrium at level 2 is partial: ``x_1``
    is frozen, so both sides are tables over ``x_1`` built from the level-2
    conditional averages ``<.>_{<2}``.
    """
    if m.depth != 2:
        raise ValueError("linear response check is defined on two-level spaces")
    alpha = A.only_level()
    if alpha is None:
        raise ValueError("A depends on both levels")
    if alpha == 0:
        alpha = level or 1
    elif level is not None and level != alpha:
        raise ValueError(f"A reads level {alpha}, not {level}")
    H = m.hamiltonian
    plus = rebuild(m, CostTensor(H.space, H.values + h * A.values))
    minus = rebuild(m, CostTensor(H.space, H.values - h * A.values))
    OA = Observable(m.space, O.values * A.values)
    beta = m.zetas.zeta(alpha)
    if alpha == 1:
        lhs = (average(plus, O) - average(minus, O)) / (2 * h)
        rhs = beta * (average(m, OA) - average(m, O) * average(m, A))
    else:
        lhs = (conditional_average(plus, O, 2) - conditional_average(minus, O, 2)) / (2 * h)
        rhs = beta * (
            conditional_average(m, OA, 2)
            - conditional_average(m, O, 2) * conditional_average(m, A, 2)
        )
    return LinearResponse(level=alpha, lhs=lhs, rhs=rhs, abs_err=float(np.max(np.abs(lhs - rhs))))


# -- latent variable ------------------------------------------------------------------


def latent_augmented_measure(p, zeta: float, space: ProductSpace | None = None) -> np.ndarray:
    """The measure on ``{0,1} x X_1 x X_2`` (array axes: bit, x_1, x_2).

    The bit is Bernoulli(zeta) and independent of ``x_1 ~ p^{<1}``.  With bit 1,
    ``x_2`` follows ``p^{<2}(.|x_1)``; with bit 0 it is the per-slice argmax of
    ``p^{<2}`` (lowest index on ties).
    """
    if not 0.0 < zeta < 1.0:
        raise ValueError(f"zeta must lie in (0, 1), got {zeta}")
    if isinstance(p, MultiscaleMeasure):
        space, joint = p.space, p.joint
    else:
        if space is None:
            raise ValueError("a bare joint needs its ProductSpace")
        joint = space.as_array(p, "joint")
    if space.depth != 2:
        raise ValueError("latent construction needs a two-level space")
    p1 = joint.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        p2 = np.where(p1[:, None] > 0, joint / np.where(p1 > 0, p1, 1.0)[:, None], 1.0 / space.size(2))
    det = np.zeros_like(p2)
    det[np.arange(p2.shape[0]), np.argmax(p2, axis=1)] = 1.0
    return np.stack([(1 - zeta) * p1[:, None] * det, zeta * p1[:, None] * p2])


def latent_entropy_identity(p, zeta: float, space: ProductSpace | None = None) -> tuple[float, float]:
    """``(S[mu_p], S[Ber(zeta)] + S^1 + zeta S^2)``; the two agree exactly in theory."""
    aug = latent_augmented_measure(p, zeta, space)
    prof = entropy_profile(p, space)
    lhs = shannon_entropy(aug)
    rhs = bernoulli_entropy(zeta) + prof.level(1) + zeta * prof.level(2)
    return lhs, rhs
