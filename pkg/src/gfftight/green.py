"""Green functions of simple random walk: Dirichlet box, killed torus, hitting probabilities.

Index conventions: a box kernel over V_N is stored as an ``(N*N, N*N)`` array
with the flat index ``x1 * N + x2``; a torus kernel is stored as an ``(N, N)``
array over offsets ``(x - y) mod N``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache, partial

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.fft import dstn

from .lattice import is_interior
from .replicates import check_side, map_blocks, replicate_rng

DENSE_GREEN_CAP = 64
WALK_STREAM = 101


def interior_operator(N: int) -> sp.csc_matrix:
    """Sparse I - P restricted to V_N^o, interior points in row-major order."""
    m = N - 2
    if m < 1:
        raise ValueError(f"V_{N} has no interior")
    off = np.full(m - 1, -0.25)
    T = sp.diags([off, off], [-1, 1], shape=(m, m))
    I = sp.identity(m, format="csr")
    return (sp.identity(m * m) + sp.kron(I, T) + sp.kron(T, I)).tocsc()


@dataclass(frozen=True)
class InteriorFactor:
    """Symmetric sparse factorization Q = W W^T of the interior operator.

    ``W = Pr^T L D^{1/2}`` from a SuperLU factorization run in symmetric mode
    without pivoting (``Pr^T L U Pr = Q`` with ``U = D L^T``).
    """

    N: int
    lu: spla.SuperLU
    W: sp.csr_matrix

    @property
    def size(self) -> int:
        return (self.N - 2) ** 2

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return self.lu.solve(rhs)


@lru_cache(maxsize=8)
def interior_factor(N: int) -> InteriorFactor:
    Q = interior_operator(N)
    lu = spla.splu(
        Q,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options=dict(SymmetricMode=True),
    )
    if not np.array_equal(lu.perm_r, lu.perm_c):
        raise RuntimeError("sparse factorization pivoted; symmetric factor unavailable")
    d = lu.U.diagonal()
    if np.any(d <= 0):
        raise RuntimeError("interior operator is not positive definite")
    W = (lu.L @ sp.diags(np.sqrt(d))).tocsr()[lu.perm_r]
    return InteriorFactor(N, lu, W)


def _embed(interior: np.ndarray, N: int) -> np.ndarray:
    """Place interior values (leading axes preserved) into zero-padded N x N grids."""
    m = N - 2
    lead = interior.shape[:-1]
    out = np.zeros(lead + (N, N))
    out[..., 1:-1, 1:-1] = interior.reshape(lead + (m, m))
    return out


@dataclass(frozen=True)
class DirichletGreen:
    N: int
    values: np.ndarray

    def __call__(self, x, y) -> float:
        return float(self.values[x[0] * self.N + x[1], y[0] * self.N + y[1]])

    def diagonal(self) -> np.ndarray:
        return np.diag(self.values).reshape(self.N, self.N)


def dirichlet_green(N: int, cap: int = DENSE_GREEN_CAP) -> DirichletGreen:
    """Full Green function of the walk killed on the boundary of V_N.

    G(x, y) is the expected number of visits to y strictly before the walk
    leaves V_N^o; rows and columns of boundary points are zero.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    check_side(N, cap, "dense Green function")
    G = np.zeros((N * N, N * N))
    if N > 2:
        f = interior_factor(N)
        inner = f.solve(np.eye(f.size))
        inner = 0.5 * (inner + inner.T)
        idx = np.array([i * N + j for i in range(1, N - 1) for j in range(1, N - 1)])
        G[np.ix_(idx, idx)] = inner
    return DirichletGreen(N, G)


def _dirichlet_spectrum(M: int) -> tuple[np.ndarray, np.ndarray]:
    m = M - 2
    j = np.arange(1, m + 1)
    c = np.cos(np.pi * j / (M - 1))
    lam = 0.5 * (c[:, None] + c[None, :])
    return j, 1.0 / (1.0 - lam)


def dirichlet_green_columns(M: int, targets, method: str = "spectral") -> np.ndarray:
    """G_M(., y) on the full grid V_M for each target y; shape (len(targets), M, M).

    ``method="factor"`` solves with the sparse factorization;
    ``method="spectral"`` uses the discrete sine eigenbasis of the box.
    """
    targets = np.asarray(targets, dtype=int).reshape(-1, 2)
    out = np.zeros((len(targets), M, M))
    inner = np.array([is_interior(t, M) for t in targets], dtype=bool)
    if M < 3 or not inner.any():
        return out
    tin = targets[inner]
    m = M - 2
    if method == "factor":
        f = interior_factor(M)
        rhs = np.zeros((f.size, len(tin)))
        rhs[(tin[:, 0] - 1) * m + (tin[:, 1] - 1), np.arange(len(tin))] = 1.0
        cols = f.solve(rhs).T
        out[inner] = _embed(cols, M)
        return out
    if method != "spectral":
        raise ValueError(f"unknown method {method!r}")
    j, spec = _dirichlet_spectrum(M)
    norm = np.sqrt(2.0 / (M - 1))
    chunk = max(1, (1 << 22) // (m * m))
    res = np.empty((len(tin), M, M))
    for s in range(0, len(tin), chunk):
        t = tin[s:s + chunk]
        phi1 = norm * np.sin(np.pi * np.outer(t[:, 0], j) / (M - 1))
        phi2 = norm * np.sin(np.pi * np.outer(t[:, 1], j) / (M - 1))
        coef = phi1[:, :, None] * phi2[:, None, :] * spec
        res[s:s + chunk] = _embed(dstn(coef, type=1, norm="ortho", axes=(1, 2)).reshape(len(t), -1), M)
    out[inner] = res
    return out


def hitting_prob(x, y, M: int) -> float:
    """P^x(walk hits y before leaving V_M^o) = G_M(x, y) / G_M(y, y)."""
    if not is_interior(y, M):
        raise ValueError(f"target {tuple(y)} is not interior to V_{M}")
    if not (0 <= x[0] < M and 0 <= x[1] < M):
        raise ValueError(f"start {tuple(x)} outside V_{M}")
    col = dirichlet_green_columns(M, [y], method="factor")[0]
    return float(min(1.0, col[x[0], x[1]] / col[y[0], y[1]]))


def default_survival(N: int, law: str = "mean") -> float:
    """Per-step survival probability of the torus killing clock.

    ``law="mean"``: geometric step count with mean N^2, q = N^2/(N^2+1).
    ``law="rate"``: q = 1 - 1/N^2.
    """
    if law == "mean":
        return N * N / (N * N + 1.0)
    if law == "rate":
        return 1.0 - 1.0 / (N * N)
    raise ValueError(f"unknown killing law {law!r}")


@dataclass(frozen=True)
class TorusGreen:
    N: int
    q: float
    kernel: np.ndarray
    spectrum: np.ndarray

    def __call__(self, x, y) -> float:
        return float(self.kernel[(x[0] - y[0]) % self.N, (x[1] - y[1]) % self.N])

    def matrix(self) -> np.ndarray:
        """Dense (N*N, N*N) covariance over V_N."""
        N = self.N
        i = np.arange(N)
        d1 = (i[:, None] - i[None, :]) % N
        K = self.kernel[d1[:, None, :, None], d1[None, :, None, :]]
        return K.reshape(N * N, N * N)


def torus_spectrum(N: int, q: float) -> np.ndarray:
    theta = 2.0 * np.pi * np.arange(N) / N
    lam = 0.5 * (np.cos(theta)[:, None] + np.cos(theta)[None, :])
    return 1.0 / (1.0 - q * lam)


def torus_green(N: int, q: float | None = None) -> TorusGreen:
    """Green function of the walk on the N-torus killed after a geometric number of steps."""
    if N < 2:
        raise ValueError("N must be at least 2")
    q = default_survival(N) if q is None else float(q)
    if not 0.0 < q < 1.0:
        raise ValueError(f"survival probability must lie in (0, 1), got {q}")
    spec = torus_spectrum(N, q)
    kernel = np.fft.ifft2(spec).real
    return TorusGreen(N, q, kernel, spec)


@dataclass(frozen=True)
class WalkDomain:
    kind: str  # "box" or "torus"
    N: int
    q: float | None = None

    def survival(self) -> float:
        return default_survival(self.N) if self.q is None else self.q


@dataclass(frozen=True)
class WalkOracleResult:
    visits: np.ndarray      # (N, N) mean visit counts
    se: np.ndarray          # (N, N) standard errors
    total: float            # mean total visits per walk
    total_se: float
    reps: int


_MOVES = np.array([[1, 0], [-1, 0], [0, 1], [0, -1]])


def _walk_block(domain: WalkDomain, start: tuple[int, int], seed: int, block: int, a: int, b: int) -> np.ndarray:
    N = domain.N
    rng = replicate_rng(seed, a // block, WALK_STREAM)
    W = b - a
    pos = np.tile(np.asarray(start, dtype=np.int64), (W, 1))
    counts = np.zeros((W, N * N), dtype=np.int64)
    torus = domain.kind == "torus"
    q = domain.survival() if torus else 1.0
    if torus:
        alive = np.ones(W, dtype=bool)
    else:
        alive = (pos[:, 0] > 0) & (pos[:, 0] < N - 1) & (pos[:, 1] > 0) & (pos[:, 1] < N - 1)
    rows = np.arange(W)
    while alive.any():
        idx = rows[alive]
        np.add.at(counts, (idx, pos[idx, 0] * N + pos[idx, 1]), 1)
        if torus:
            die = rng.random(len(idx)) >= q
            alive[idx[die]] = False
            idx = idx[~die]
        pos[idx] += _MOVES[rng.integers(0, 4, len(idx))]
        if torus:
            pos[idx] %= N
        else:
            p = pos[idx]
            alive[idx] = (p[:, 0] > 0) & (p[:, 0] < N - 1) & (p[:, 1] > 0) & (p[:, 1] < N - 1)
    return counts


def mc_walk_oracle(start, domain: WalkDomain, reps: int, seed: int, workers: int = 1,
                   block: int = 1024) -> WalkOracleResult:
    """Monte Carlo visit counts of ``reps`` independent walks started at ``start``.

    Walks are grouped in fixed blocks of ``block`` walks, each block driven by
    its own seeded stream, so results do not depend on ``workers``.
    """
    if reps < 1:
        raise ValueError("reps must be at least 1")
    N = domain.N
    if N * N > 4096:
        raise ValueError("walk oracle is limited to N*N <= 4096")
    if domain.kind not in ("box", "torus"):
        raise ValueError(f"unknown domain {domain.kind!r}")
    fn = partial(_walk_block, domain, tuple(int(s) for s in start), int(seed), block)
    counts = map_blocks(fn, reps, block, workers).astype(float)
    mean = counts.mean(axis=0)
    sd = counts.std(axis=0, ddof=1) if reps > 1 else np.zeros_like(mean)
    tot = counts.sum(axis=1)
    return WalkOracleResult(
        visits=mean.reshape(N, N),
        se=(sd / np.sqrt(reps)).reshape(N, N),
        total=float(tot.mean()),
        total_se=float(tot.std(ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0,
        reps=reps,
    )


def write_kernel_csv(dest, green: DirichletGreen | TorusGreen) -> None:
    """Export a kernel to a path or text stream.

    Rows are ``x1,x2,y1,y2,value`` for a box and ``dx,dy,value`` for a torus.
    """
    if hasattr(dest, "write"):
        _write_kernel_rows(dest, green)
        return
    with open(dest, "w", newline="") as fh:
        _write_kernel_rows(fh, green)


def _write_kernel_rows(fh, green) -> None:
    N = green.N
    w = csv.writer(fh, lineterminator="\n")
    if isinstance(green, TorusGreen):
        w.writerow(["dx", "dy", "value"])
        for dx in range(N):
            for dy in range(N):
                w.writerow([dx, dy, f"{green.kernel[dx, dy]:.17g}"])
        return
    w.writerow(["x1", "x2", "y1", "y2", "value"])
    V = green.values
    for i in range(N * N):
        for j in range(N * N):
            w.writerow([i // N, i % N, j // N, j % N, f"{V[i, j]:.17g}"])
