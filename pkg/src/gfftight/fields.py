"""Samplers for the Dirichlet GFF, torus GFF, branching random walk and modified BRW.

Each sampler is a frozen dataclass of parameters; heavy precomputation
(factorizations, spectra) is cached per process, so samplers pickle cheaply
and can be shipped to worker processes.  ``draw(rngs)`` returns one field per
generator, stacked along the leading axis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np
from scipy.fft import dstn, irfft2, rfft2

from .green import _dirichlet_spectrum, default_survival, interior_factor, torus_spectrum
from .lattice import GridSpec, Restriction, SubgridSpec, boxes_containing
from .replicates import block_size_for, check_side, map_blocks, replicate_rng, replicate_rngs


class FieldKind(str, Enum):
    GFF = "gff"
    TGFF = "tgff"
    BRW = "brw"
    MBRW = "mbrw"


@dataclass(frozen=True)
class ScaleWindow:
    k_lo: int
    k_hi: int

    def validate(self, n: int) -> "ScaleWindow":
        if not 0 <= self.k_lo <= self.k_hi <= n:
            raise ValueError(f"invalid scale window [{self.k_lo}, {self.k_hi}] for n={n}")
        return self

    @classmethod
    def full(cls, n: int) -> "ScaleWindow":
        return cls(0, n)


@dataclass
class FieldSample:
    kind: FieldKind
    N: int
    values: np.ndarray
    seed: int | None = None
    window: ScaleWindow | None = None
    killing: float | None = None

    @property
    def n(self) -> int | None:
        return self.N.bit_length() - 1 if self.N & (self.N - 1) == 0 else None

    def sidecar(self) -> dict:
        return {
            "kind": FieldKind(self.kind).value,
            "n": self.n,
            "N": self.N,
            "window": None if self.window is None else [self.window.k_lo, self.window.k_hi],
            "seed": self.seed,
            "killing": self.killing,
        }

    def write(self, path, fmt: str = "csv") -> None:
        """Dump the grid as ``x1,x2,value`` CSV (or JSON) plus a ``.json`` sidecar."""
        path = str(path)
        if fmt == "csv":
            with open(path, "w") as fh:
                fh.write("x1,x2,value\n")
                for (i, j), v in np.ndenumerate(self.values):
                    fh.write(f"{i},{j},{v:.17g}\n")
        elif fmt == "json":
            with open(path, "w") as fh:
                json.dump({**self.sidecar(), "values": self.values.tolist()}, fh)
        else:
            raise ValueError(f"unknown format {fmt!r}")
        with open(path + ".json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=2, sort_keys=True)


@dataclass
class NoiseBank:
    """Per-scale white noise of one MBRW or BRW realization.

    MBRW: ``scales[k]`` is an (N, N) array of variance ``2**(-2k)`` indexed by
    canonical box corners.  BRW: ``scales[k]`` is an (N/2^k, N/2^k) array of
    unit variance indexed by aligned boxes.
    """

    kind: FieldKind
    n: int
    scales: list[np.ndarray] = field(default_factory=list)

    @property
    def N(self) -> int:
        return 1 << self.n


@dataclass
class ScalePath:
    z: tuple[int, int]
    values: np.ndarray  # S_z(j), j = 0..n


# --------------------------------------------------------------------------- GFF


@lru_cache(maxsize=8)
def _gff_spectral_scale(N: int) -> np.ndarray:
    return np.sqrt(_dirichlet_spectrum(N)[1])


@dataclass(frozen=True)
class GFFSampler:
    """Exact sampler of the GFF on V_N with zero boundary values.

    ``method="factor"``: X = Q^{-1} W Z with the sparse factor Q = W W^T of the
    interior operator, so Cov(X) = Q^{-1} = G_N.  ``method="spectral"``: the
    discrete sine eigenbasis of the box.
    """

    N: int
    method: str = "factor"

    def __post_init__(self):
        if self.N < 3:
            raise ValueError("GFF needs N >= 3")
        if self.method not in ("factor", "spectral"):
            raise ValueError(f"unknown GFF method {self.method!r}")
        check_side(self.N)

    @property
    def kind(self) -> FieldKind:
        return FieldKind.GFF

    def draw(self, rngs) -> np.ndarray:
        N, m = self.N, self.N - 2
        out = np.zeros((len(rngs), N, N))
        if self.method == "factor":
            f = interior_factor(N)
            Z = np.stack([r.standard_normal(m * m) for r in rngs], axis=1)
            X = f.solve(np.asarray(f.W @ Z))
            out[:, 1:-1, 1:-1] = X.T.reshape(-1, m, m)
        else:
            s = _gff_spectral_scale(N)
            Z = np.stack([r.standard_normal((m, m)) for r in rngs])
            out[:, 1:-1, 1:-1] = dstn(Z * s, type=1, norm="ortho", axes=(1, 2))
        return out


# -------------------------------------------------------------------------- TGFF


@lru_cache(maxsize=8)
def _tgff_root(N: int, q: float) -> np.ndarray:
    return np.sqrt(torus_spectrum(N, q)[:, : N // 2 + 1])


@dataclass(frozen=True)
class TGFFSampler:
    """Stationary torus GFF via the square root of its circulant covariance."""

    N: int
    q: float | None = None

    def __post_init__(self):
        GridSpec.from_side(self.N)
        if self.N < 2:
            raise ValueError("TGFF needs N >= 2")
        if not 0.0 < self.survival < 1.0:
            raise ValueError("survival probability must lie in (0, 1)")
        check_side(self.N)

    @property
    def kind(self) -> FieldKind:
        return FieldKind.TGFF

    @property
    def survival(self) -> float:
        return default_survival(self.N) if self.q is None else float(self.q)

    def draw(self, rngs) -> np.ndarray:
        N = self.N
        xi = np.stack([r.standard_normal((N, N)) for r in rngs])
        root = _tgff_root(N, self.survival)
        return irfft2(rfft2(xi, axes=(1, 2)) * root, s=(N, N), axes=(1, 2))


# --------------------------------------------------------------------------- BRW


@dataclass(frozen=True)
class BRWSampler:
    """Branching random walk: one unit Gaussian per aligned dyadic ancestor box."""

    n: int

    def __post_init__(self):
        GridSpec(self.n)
        check_side(1 << self.n)

    @property
    def N(self) -> int:
        return 1 << self.n

    @property
    def kind(self) -> FieldKind:
        return FieldKind.BRW

    def noise_bank(self, rng: np.random.Generator) -> NoiseBank:
        n = self.n
        return NoiseBank(FieldKind.BRW, n, [rng.standard_normal((1 << (n - k), 1 << (n - k))) for k in range(n + 1)])

    def field(self, bank: NoiseBank) -> np.ndarray:
        N = self.N
        out = np.zeros((N, N))
        for k in range(self.n, -1, -1):
            L = 1 << k
            view = out.reshape(N // L, L, N // L, L)
            view += bank.scales[k][:, None, :, None]
        return out

    def draw(self, rngs) -> np.ndarray:
        return np.stack([self.field(self.noise_bank(r)) for r in rngs])


# -------------------------------------------------------------------------- MBRW


def circular_box_sum(a: np.ndarray, L: int) -> np.ndarray:
    """out[..., z1, z2] = sum of a over corners [z1-L+1, z1] x [z2-L+1, z2] mod N.

    Circular convolution with the indicator of an L x L square, evaluated with
    running sums along each of the last two axes.
    """
    if L == 1:
        return a.copy()
    for axis in (-2, -1):
        N = a.shape[axis]
        head = np.take(a, np.arange(N - L + 1, N), axis=axis)
        ext = np.concatenate([head, a], axis=axis)
        c = np.cumsum(ext, axis=axis)
        shape = list(c.shape)
        shape[axis] = 1
        c = np.concatenate([np.zeros(shape), c], axis=axis)
        hi = np.take(c, np.arange(L, L + N), axis=axis)
        lo = np.take(c, np.arange(0, N), axis=axis)
        a = hi - lo
    return a


def mbrw_layer_enumerate(noise: np.ndarray, k: int) -> np.ndarray:
    """Scale-k MBRW layer by explicit enumeration of the 2^{2k} torus boxes per site.

    Brute-force reference for :func:`circular_box_sum`; intended for N <= 16.
    """
    N = noise.shape[-1]
    out = np.zeros((N, N))
    for z1 in range(N):
        for z2 in range(N):
            out[z1, z2] = sum(noise[B.corner] for B in boxes_containing((z1, z2), k, N, "all"))
    return out


@dataclass(frozen=True)
class MBRWSampler:
    """Modified branching random walk restricted to a scale window.

    Every scale k in 0..n is always drawn (so fields with different windows
    are coupled through one noise bank); only layers inside the window are
    summed.
    """

    n: int
    window: ScaleWindow | None = None

    def __post_init__(self):
        GridSpec(self.n)
        self.effective_window.validate(self.n)
        check_side(1 << self.n)

    @property
    def N(self) -> int:
        return 1 << self.n

    @property
    def kind(self) -> FieldKind:
        return FieldKind.MBRW

    @property
    def effective_window(self) -> ScaleWindow:
        return ScaleWindow.full(self.n) if self.window is None else self.window

    def noise_bank(self, rng: np.random.Generator) -> NoiseBank:
        N = self.N
        return NoiseBank(FieldKind.MBRW, self.n,
                         [rng.standard_normal((N, N)) * 2.0 ** (-k) for k in range(self.n + 1)])

    def layers(self, bank: NoiseBank) -> np.ndarray:
        """Scale layers, shape (n+1, N, N); layer k is stationary with unit variance."""
        return np.stack([circular_box_sum(bank.scales[k], 1 << k) for k in range(self.n + 1)])

    def field_from_layers(self, layers: np.ndarray) -> np.ndarray:
        w = self.effective_window
        acc = layers[w.k_hi].copy()
        for k in range(w.k_hi - 1, w.k_lo - 1, -1):
            acc += layers[k]
        return acc

    def field(self, bank: NoiseBank) -> np.ndarray:
        w = self.effective_window
        acc = circular_box_sum(bank.scales[w.k_hi], 1 << w.k_hi)
        for k in range(w.k_hi - 1, w.k_lo - 1, -1):
            acc += circular_box_sum(bank.scales[k], 1 << k)
        return acc

    def draw(self, rngs) -> np.ndarray:
        return np.stack([self.field(self.noise_bank(r)) for r in rngs])


def scale_paths(layers: np.ndarray) -> np.ndarray:
    """All scale paths at once: out[j] = sum_{k=n-j}^{n} layers[k], j = 0..n."""
    return np.cumsum(layers[::-1], axis=0)


def mbrw_scale_path(bank: NoiseBank, z) -> ScalePath:
    """Partial sums S_z(j) over scales n-j..n at site z, from the coarsest scale down."""
    if len(bank.scales) != bank.n + 1:
        raise ValueError("noise bank must cover scales 0..n")
    layers = MBRWSampler(bank.n).layers(bank)
    return ScalePath((int(z[0]), int(z[1])), scale_paths(layers)[:, z[0], z[1]].copy())


@dataclass(frozen=True)
class FieldDraw:
    """Picklable replicate function: fields of a sampler restricted and flattened.

    Replicate ``i`` draws from stream ``stream`` of ``seed``; with ``noise`` an
    independent standard normal per site, scaled by ``noise``, is added after
    the field draw.  ``reduce="max"`` returns only the maximum of each field.
    """

    sampler: object
    seed: int
    stream: int = 0
    restriction: Restriction = Restriction.FULL
    scale: float = 1.0
    noise: float = 0.0
    reduce: str = "none"  # "none" or "max"

    def __call__(self, a: int, b: int) -> np.ndarray:
        rngs = replicate_rngs(self.seed, a, b, self.stream)
        X = self.sampler.draw(rngs)
        host = X.shape[-1]
        N = host // 4 if Restriction(self.restriction) is Restriction.SHIFTED else host
        s1, s2 = SubgridSpec(self.restriction).slices(N)
        X = X[:, s1, s2].reshape(len(rngs), -1) * self.scale
        if self.noise:
            X = X + self.noise * self.scale * np.stack([r.standard_normal(X.shape[1]) for r in rngs])
        return X.max(axis=1) if self.reduce == "max" else X


def draw_samples(draw: "FieldDraw", reps: int, workers: int = 1) -> np.ndarray:
    """Evaluate ``draw`` over ``reps`` replicates in fixed-size blocks."""
    return map_blocks(draw, reps, block_size_for(4 * draw.sampler.N ** 2), workers)


# ------------------------------------------------------------------ public API


def make_sampler(kind, N: int, window: ScaleWindow | None = None, q: float | None = None,
                 method: str = "factor"):
    kind = FieldKind(kind)
    if kind is FieldKind.GFF:
        return GFFSampler(N, method)
    if kind is FieldKind.TGFF:
        return TGFFSampler(N, q)
    spec = GridSpec.from_side(N)
    if kind is FieldKind.BRW:
        return BRWSampler(spec.n)
    return MBRWSampler(spec.n, window)


def _single(sampler, seed: int) -> np.ndarray:
    return sampler.draw([replicate_rng(seed, 0)])[0]


def sample_gff(N: int, seed: int, method: str = "factor") -> FieldSample:
    return FieldSample(FieldKind.GFF, N, _single(GFFSampler(N, method), seed), seed)


def sample_tgff(N: int, seed: int, q: float | None = None) -> FieldSample:
    s = TGFFSampler(N, q)
    return FieldSample(FieldKind.TGFF, N, _single(s, seed), seed, killing=s.survival)


def sample_brw(N: int, seed: int) -> FieldSample:
    s = BRWSampler(GridSpec.from_side(N).n)
    return FieldSample(FieldKind.BRW, N, _single(s, seed), seed)


def sample_mbrw(N: int, seed: int, window: ScaleWindow | None = None) -> FieldSample:
    s = MBRWSampler(GridSpec.from_side(N).n, window)
    return FieldSample(FieldKind.MBRW, N, _single(s, seed), seed, window=s.effective_window)
