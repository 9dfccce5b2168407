"""Grid geometry: dyadic boxes V_N, torus identification and torus metrics."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Dyadic square grid of side ``N = 2**n``."""

    n: int

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)) or self.n < 0:
            raise ValueError(f"number of scales must be a nonnegative integer, got {self.n!r}")

    @property
    def N(self) -> int:
        return 1 << int(self.n)

    @classmethod
    def from_side(cls, N: int) -> "GridSpec":
        N = int(N)
        if N < 1 or N & (N - 1):
            raise ValueError(f"side {N} is not a power of two")
        return cls(N.bit_length() - 1)


def as_spec(spec: "GridSpec | int") -> GridSpec:
    """Accept a GridSpec or a dyadic side length."""
    if isinstance(spec, GridSpec):
        return spec
    return GridSpec.from_side(spec)


class GridPoint(NamedTuple):
    x1: int
    x2: int

    def in_grid(self, N: int) -> bool:
        return 0 <= self.x1 < N and 0 <= self.x2 < N


def is_interior(z, N: int) -> bool:
    """True when ``z`` lies in V_N^o = (0, N-1)^2."""
    return 0 < z[0] < N - 1 and 0 < z[1] < N - 1


def is_boundary(z, N: int) -> bool:
    return GridPoint(*z).in_grid(N) and not is_interior(z, N)


def _check_point(z, N: int) -> None:
    if not (0 <= z[0] < N and 0 <= z[1] < N):
        raise ValueError(f"point {tuple(z)} outside V_{N}")


@dataclass(frozen=True)
class DyadicBox:
    """Square of side ``2**k`` with lower-left ``corner``."""

    k: int
    corner: tuple[int, int]

    @property
    def side(self) -> int:
        return 1 << self.k

    def contains(self, z, N: int | None = None) -> bool:
        """Membership; with ``N`` given, membership of the torus class of ``z``."""
        L = self.side
        d1, d2 = z[0] - self.corner[0], z[1] - self.corner[1]
        if N is not None:
            d1, d2 = d1 % N, d2 % N
        return 0 <= d1 < L and 0 <= d2 < L

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.k, self.corner[0], self.corner[1])


def canonical_rep(B: DyadicBox, N: int) -> DyadicBox:
    """Representative of the class of ``B`` under translation by (N Z)^2."""
    return DyadicBox(B.k, (B.corner[0] % N, B.corner[1] % N))


def t_components(x, y, N: int) -> tuple[int, int]:
    """Per-coordinate torus distances t_i = min(|x_i-y_i|, |x_i-y_i-N|, |x_i-y_i+N|)."""
    out = []
    for a, b in zip(x, y):
        d = a - b
        out.append(min(abs(d), abs(d - N), abs(d + N)))
    return out[0], out[1]


def torus_distances(x, y, N: int) -> tuple[float, int]:
    """Euclidean and sup-norm distances between the torus classes of x and y."""
    t1, t2 = t_components(x, y, N)
    return math.hypot(t1, t2), max(t1, t2)


def ceil_log2_plus1(d: int) -> int:
    """ceil(log2(d + 1)) for an integer d >= 0, computed exactly."""
    return int(d).bit_length()


def boxes_containing(z, k: int, N: int, collection: str = "aligned", wrap: bool = True) -> list[DyadicBox]:
    """Side-``2**k`` boxes containing ``z``.

    ``collection="aligned"`` returns the single box of BD_k(z);
    ``collection="all"`` returns the ``2**(2k)`` boxes of B_k(z), corners
    ranging over ``[z1-2^k+1, z1] x [z2-2^k+1, z2]`` and, with ``wrap``,
    reduced to their canonical torus representatives.
    """
    n = as_spec(N).n
    if not 0 <= k <= n:
        raise ValueError(f"scale {k} outside [0, {n}]")
    _check_point(z, N)
    L = 1 << k
    if collection == "aligned":
        return [DyadicBox(k, ((z[0] // L) * L, (z[1] // L) * L))]
    if collection != "all":
        raise ValueError(f"unknown box collection {collection!r}")
    boxes = []
    for c1 in range(z[0] - L + 1, z[0] + 1):
        for c2 in range(z[1] - L + 1, z[1] + 1):
            B = DyadicBox(k, (c1, c2))
            boxes.append(canonical_rep(B, N) if wrap else B)
    return boxes


class Restriction(str, Enum):
    FULL = "full"
    INNER = "inner"
    SHIFTED = "shifted"


@dataclass(frozen=True)
class SubgridSpec:
    """Index set inside a grid.

    ``full`` is V_N itself; ``inner`` is V_N' = V_{N/2} + (N/4, N/4);
    ``shifted`` is V_N + (2N, 2N) viewed inside the box V_{4N}.
    """

    kind: Restriction = Restriction.FULL

    def slices(self, N: int) -> tuple[slice, slice]:
        """Slices of the host array (side N, or 4N for ``shifted``)."""
        kind = Restriction(self.kind)
        if kind is Restriction.FULL:
            return slice(0, N), slice(0, N)
        if kind is Restriction.INNER:
            if N % 4:
                raise ValueError(f"V_N' needs N divisible by 4, got {N}")
            s = slice(N // 4, N // 4 + N // 2)
            return s, s
        s = slice(2 * N, 3 * N)
        return s, s

    def host_side(self, N: int) -> int:
        return 4 * N if Restriction(self.kind) is Restriction.SHIFTED else N

    def contains(self, z, N: int) -> bool:
        s1, s2 = self.slices(N)
        return s1.start <= z[0] < s1.stop and s2.start <= z[1] < s2.stop

    def points(self, N: int) -> np.ndarray:
        s1, s2 = self.slices(N)
        a, b = np.meshgrid(np.arange(s1.start, s1.stop), np.arange(s2.start, s2.stop), indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)


def offset_components(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Arrays t1, t2 over the offset grid v = (v1, v2) in [0, N)^2."""
    v = np.arange(N)
    t = np.minimum(v, N - v)
    return np.broadcast_to(t[:, None], (N, N)), np.broadcast_to(t[None, :], (N, N))


def offset_distances(N: int) -> tuple[np.ndarray, np.ndarray]:
    """Torus Euclidean and sup distances from the origin for every offset."""
    t1, t2 = offset_components(N)
    return np.hypot(t1, t2), np.maximum(t1, t2)


def pair_components(points_a: np.ndarray, points_b: np.ndarray, N: int) -> tuple[np.ndarray, np.ndarray]:
    """t1, t2 for every pair (a in points_a, b in points_b) as 2-D arrays."""
    d1 = np.abs(points_a[:, None, 0] - points_b[None, :, 0]) % N
    d2 = np.abs(points_a[:, None, 1] - points_b[None, :, 1]) % N
    return np.minimum(d1, N - d1), np.minimum(d2, N - d2)
