"""Finite product spaces, Hamiltonians, scale parameters and observables.

A product space ``X = X_r x ... x X_1`` is described by its level sizes listed
from the deepest level ``r`` down to level 1.  Arrays over ``X`` are stored
with shape ``(|X_1|, |X_2|, ..., |X_r|)`` in C order, so that in the flat
index ``x_1`` is the slowest-varying digit and ``x_r`` the fastest.  Level
``l`` lives on axis ``l - 1``; a table indexed by ``(x_l, ..., x_1)`` has
shape ``(|X_1|, ..., |X_l|)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ProductSpace:
    """Hierarchy of finite levels ``X_r x ... x X_1``.

    Parameters
    ----------
    level_sizes : sequence of int
        ``(|X_r|, ..., |X_1|)``, deepest level first.
    """

    level_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.level_sizes)
        if not sizes:
            raise ValueError("a product space needs at least one level")
        if any(s < 1 for s in sizes):
            raise ValueError(f"level sizes must be >= 1, got {sizes}")
        object.__setattr__(self, "level_sizes", sizes)

    @property
    def depth(self) -> int:
        return len(self.level_sizes)

    @property
    def total_size(self) -> int:
        return prod(self.level_sizes)

    @property
    def shape(self) -> tuple[int, ...]:
        """Array shape ``(|X_1|, ..., |X_r|)``."""
        return tuple(reversed(self.level_sizes))

    def size(self, level: int) -> int:
        """``|X_level|`` for ``1 <= level <= r``."""
        self._check_level(level)
        return self.level_sizes[self.depth - level]

    def prefix_shape(self, level: int) -> tuple[int, ...]:
        """Shape of a table indexed by ``(x_level, ..., x_1)``."""
        if not 0 <= level <= self.depth:
            raise ValueError(f"level {level} outside [0, {self.depth}]")
        return self.shape[:level]

    def truncated(self, level: int) -> "ProductSpace":
        """The space ``X_level x ... x X_1``."""
        self._check_level(level)
        return ProductSpace(self.level_sizes[self.depth - level:])

    def encode(self, coords: Sequence[int]) -> int:
        """Flat index of the coordinate tuple ``(x_r, ..., x_1)``."""
        if len(coords) != self.depth:
            raise ValueError(f"expected {self.depth} coordinates, got {len(coords)}")
        for c, s in zip(coords, self.level_sizes):
            if not 0 <= c < s:
                raise ValueError(f"coordinate {c} outside [0, {s})")
        return int(np.ravel_multi_index(tuple(reversed(coords)), self.shape))

    def decode(self, index: int) -> tuple[int, ...]:
        """Coordinate tuple ``(x_r, ..., x_1)`` of a flat index."""
        if not 0 <= index < self.total_size:
            raise ValueError(f"index {index} outside [0, {self.total_size})")
        return tuple(int(c) for c in reversed(np.unravel_index(index, self.shape)))

    def as_array(self, values, name: str = "values") -> np.ndarray:
        """Coerce a flat or shaped array over the space to the canonical shape."""
        arr = np.asarray(values, dtype=float)
        if arr.shape == self.shape:
            return arr
        if arr.ndim == 1 and arr.size == self.total_size:
            return arr.reshape(self.shape)
        raise ValueError(
            f"{name} has shape {arr.shape}; expected {self.shape} or ({self.total_size},)"
        )

    def _check_level(self, level: int):
        if not 1 <= level <= self.depth:
            raise ValueError(f"level {level} outside [1, {self.depth}]")


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CostTensor:
    """Hamiltonian ``H: X -> R`` as a dense table (weights are ``e^{+zeta H}``)."""

    space: ProductSpace
    values: np.ndarray

    def __post_init__(self):
        arr = self.space.as_array(self.values, "Hamiltonian")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Hamiltonian has non-finite entries")
        object.__setattr__(self, "values", _readonly(arr))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def __add__(self, other: "CostTensor | Observable") -> "CostTensor":
        if other.space != self.space:
            raise ValueError("space mismatch")
        return CostTensor(self.space, self.values + other.values)

    def scaled(self, factor: float) -> "CostTensor":
        return CostTensor(self.space, factor * self.values)


@dataclass(frozen=True)
class ScaleParams:
    """Scale parameters ``(zeta_r, ..., zeta_1)``, all strictly positive."""

    zetas: tuple[float, ...]

    def __post_init__(self):
        zs = tuple(float(z) for z in self.zetas)
        if not zs:
            raise ValueError("need at least one scale parameter")
        if not all(np.isfinite(z) and z > 0 for z in zs):
            raise ValueError(f"scale parameters must be finite and > 0, got {zs}")
        object.__setattr__(self, "zetas", zs)

    @property
    def depth(self) -> int:
        return len(self.zetas)

    def zeta(self, level: int) -> float:
        if not 1 <= level <= self.depth:
            raise ValueError(f"level {level} outside [1, {self.depth}]")
        return self.zetas[self.depth - level]


@dataclass(frozen=True, eq=False)
class Observable:
    """A real function on ``X`` that reads coordinates up to ``depends_up_to``.

    The declaration is checked exhaustively: the values must be constant over
    ``(x_r, ..., x_{l+1})`` for every fixed ``(x_l, ..., x_1)``.
    """

    space: ProductSpace
    values: np.ndarray
    depends_up_to: int | None = None

    def __post_init__(self):
        arr = self.space.as_array(self.values, "observable")
        if not np.all(np.isfinite(arr)):
            raise ValueError("observable has non-finite entries")
        level = self.space.depth if self.depends_up_to is None else int(self.depends_up_to)
        if not 0 <= level <= self.space.depth:
            raise ValueError(f"depends_up_to={level} outside [0, {self.space.depth}]")
        deep_axes = tuple(range(level, self.space.depth))
        if deep_axes:
            spread = np.ptp(arr, axis=deep_axes)
            scale = max(1.0, float(np.max(np.abs(arr))))
            if np.max(spread) > 1e-12 * scale:
                raise ValueError(
                    f"observable declared to depend up to level {level} "
                    f"varies over deeper coordinates (spread {np.max(spread):.3g})"
                )
        object.__setattr__(self, "values", _readonly(arr))
        object.__setattr__(self, "depends_up_to", level)

    @classmethod
    def lift(cls, space: ProductSpace, table) -> "Observable":
        """Extend a table over ``(x_l, ..., x_1)`` (shape ``(|X_1|, ..., |X_l|)``) to ``X``."""
        table = np.asarray(table, dtype=float)
        level = table.ndim
        if table.shape != space.prefix_shape(level):
            raise ValueError(f"table shape {table.shape} is not a prefix of {space.shape}")
        full = np.broadcast_to(table.reshape(table.shape + (1,) * (space.depth - level)), space.shape)
        return cls(space, full, level)

    @classmethod
    def of_level(cls, space: ProductSpace, level: int, per_state) -> "Observable":
        """Observable ``f(x) = g(x_level)`` with ``g`` given as a vector over ``X_level``."""
        g = np.asarray(per_state, dtype=float)
        if g.shape != (space.size(level),):
            raise ValueError(f"expected {space.size(level)} values for level {level}")
        shape = [1] * space.depth
        shape[level - 1] = g.size
        return cls(space, np.broadcast_to(g.reshape(shape), space.shape), level)

    @classmethod
    def constant(cls, space: ProductSpace, c: float) -> "Observable":
        return cls(space, np.full(space.shape, float(c)), 0)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def table(self, level: int | None = None) -> np.ndarray:
        """The values as a table over ``(x_level, ..., x_1)``; level defaults to ``depends_up_to``."""
        level = self.depends_up_to if level is None else level
        if level < self.depends_up_to:
            raise ValueError(f"observable depends up to level {self.depends_up_to} > {level}")
        index = (slice(None),) * level + (0,) * (self.space.depth - level)
        return self.values[index]

    def only_level(self) -> int | None:
        """The single level this observable reads, or None if it reads several (0 for constants)."""
        arr = self.values
        active = [
            ax + 1 for ax in range(self.space.depth)
            if np.max(np.ptp(arr, axis=ax)) > 1e-12 * max(1.0, float(np.max(np.abs(arr))))
        ]
        if not active:
            return 0
        return active[0] if len(active) == 1 else None


def worked_example() -> CostTensor:
    """The 2x2 two-scale instance with ``H(., a) = (log 1, log 3)`` and ``H(., b) = (log 2, log 2)``."""
    space = ProductSpace((2, 2))
    return CostTensor(space, np.log([[1.0, 3.0], [2.0, 2.0]]))


def random_hamiltonian(space: ProductSpace, rng: np.random.Generator, low=-3.0, high=3.0) -> CostTensor:
    return CostTensor(space, rng.uniform(low, high, size=space.shape))
