"""Flat parameter vectors, alignment-group layouts, and seeded randomness.

Every optimizer in this package works on a single flat float64 vector.
Alignment groups are contiguous index ranges over that vector, described by
an offsets array; reductions over groups go through ``np.add.reduceat`` so
per-element grouping on large models stays vectorized.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

__all__ = [
    "GroupMode",
    "GroupSpec",
    "make_rng",
    "gaussian_sample",
    "dot",
    "norm",
    "group_dot",
    "group_norm",
]


class GroupMode(str, Enum):
    """Granularity at which gradient-velocity alignment is measured."""

    GLOBAL = "global"
    PER_TENSOR = "per_tensor"
    PER_FILTER = "per_filter"
    PER_ELEMENT = "per_element"


@dataclass(frozen=True)
class GroupSpec:
    """Exact partition of ``[0, length)`` into contiguous, nonempty groups.

    ``offsets`` has ``num_groups + 1`` entries: group ``i`` spans
    ``[offsets[i], offsets[i+1])``. The partition property (disjoint groups
    whose union is the full index set) holds by construction and is checked
    at creation time.
    """

    mode: GroupMode
    offsets: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        offs = np.asarray(self.offsets, dtype=np.intp)
        object.__setattr__(self, "offsets", offs)
        if offs.ndim != 1 or len(offs) < 2:
            raise ValueError("offsets must hold at least one group")
        if offs[0] != 0:
            raise ValueError("partition must start at index 0")
        if np.any(np.diff(offs) <= 0):
            raise ValueError("groups must be nonempty and strictly increasing")
        if self.mode is GroupMode.GLOBAL and self.num_groups != 1:
            raise ValueError("global mode requires exactly one group")
        if self.mode is GroupMode.PER_ELEMENT and self.num_groups != self.length:
            raise ValueError("per-element mode requires singleton groups")

    @property
    def length(self) -> int:
        return int(self.offsets[-1])

    @property
    def num_groups(self) -> int:
        return len(self.offsets) - 1

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    @classmethod
    def single(cls, n: int) -> "GroupSpec":
        return cls(GroupMode.GLOBAL, np.array([0, n]))

    @classmethod
    def per_element(cls, n: int) -> "GroupSpec":
        return cls(GroupMode.PER_ELEMENT, np.arange(n + 1))

    @classmethod
    def from_sizes(cls, mode: GroupMode, sizes) -> "GroupSpec":
        offs = np.concatenate([[0], np.cumsum(np.asarray(sizes, dtype=np.intp))])
        return cls(mode, offs)

    def expand(self, per_group: np.ndarray) -> np.ndarray:
        """Broadcast one value per group out to one value per element."""
        return np.repeat(per_group, self.sizes)


def make_rng(seed: int, *subkey: int) -> np.random.Generator:
    """Deterministic counter-based generator (Philox).

    Distinct ``subkey`` tuples under the same master seed yield independent
    substreams, so sweep cells can run in any order or in parallel and still
    reproduce bit-identically.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, *subkey))))


def gaussian_sample(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` i.i.d. standard-normal float64 draws."""
    if n <= 0:
        raise ValueError("sample size must be positive")
    return rng.standard_normal(n)


def _check_range(n: int, start: int, stop: int) -> None:
    if not (0 <= start < stop <= n):
        raise ValueError(f"index range [{start}, {stop}) out of bounds for length {n}")


def dot(a: np.ndarray, b: np.ndarray, start: int = 0, stop: int | None = None) -> float:
    """Inner product of ``a`` and ``b`` over one index range."""
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    stop = len(a) if stop is None else stop
    _check_range(len(a), start, stop)
    return float(a[start:stop] @ b[start:stop])


def norm(a: np.ndarray, start: int = 0, stop: int | None = None) -> float:
    """Euclidean norm over one index range; exactly 0 for a zero slice."""
    stop = len(a) if stop is None else stop
    _check_range(len(a), start, stop)
    s = a[start:stop]
    return float(np.sqrt(s @ s))


def group_dot(a: np.ndarray, b: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Per-group inner products, one scalar per group."""
    if a.shape != b.shape or len(a) != spec.length:
        raise ValueError("vector/group shape mismatch")
    if spec.num_groups == 1:
        return np.array([a @ b])
    return np.add.reduceat(a * b, spec.offsets[:-1])


def group_norm(a: np.ndarray, spec: GroupSpec) -> np.ndarray:
    """Per-group Euclidean norms."""
    if len(a) != spec.length:
        raise ValueError("vector/group shape mismatch")
    if spec.num_groups == 1:
        return np.array([np.sqrt(a @ a)])
    return np.sqrt(np.add.reduceat(a * a, spec.offsets[:-1]))
