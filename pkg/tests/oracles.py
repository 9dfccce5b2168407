"""Independent reference computations used by the tests.

Nothing here calls into the package's numerical code: each routine rebuilds
its quantity from first principles (dense linear algebra, explicit box
enumeration, density recursions on a grid, closed forms).
"""
from __future__ import annotations

import math

import numpy as np
from scipy import integrate, stats


def brute_green(N: int) -> np.ndarray:
    """Dirichlet Green function on V_N via a dense inverse over all N^2 sites."""
    idx = lambda a, b: a * N + b
    P = np.zeros((N * N, N * N))
    for a in range(1, N - 1):
        for b in range(1, N - 1):
            for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                P[idx(a, b), idx(a + da, b + db)] = 0.25
    interior = [idx(a, b) for a in range(1, N - 1) for b in range(1, N - 1)]
    G = np.zeros((N * N, N * N))
    if interior:
        Q = np.eye(len(interior)) - P[np.ix_(interior, interior)]
        G[np.ix_(interior, interior)] = np.linalg.inv(Q)
    return G


def torus_green_series(N: int, q: float, terms: int = 4000) -> np.ndarray:
    """Killed torus Green function by summing q^t P^t for the lazy-free walk."""
    dist = np.zeros((N, N))
    dist[0, 0] = 1.0
    G = np.zeros((N, N))
    w = 1.0
    for _ in range(terms):
        G += w * dist
        dist = 0.25 * (np.roll(dist, 1, 0) + np.roll(dist, -1, 0) + np.roll(dist, 1, 1) + np.roll(dist, -1, 1))
        w *= q
    return G


def mbrw_cov_enumerate(x, y, N: int) -> float:
    """Sum over scales and torus boxes containing both points of 2^{-2k}."""
    n = N.bit_length() - 1
    total = 0.0
    for k in range(n + 1):
        L = 1 << k
        count = 0
        for c1 in range(N):
            for c2 in range(N):
                inx = (x[0] - c1) % N < L and (x[1] - c2) % N < L
                iny = (y[0] - c1) % N < L and (y[1] - c2) % N < L
                count += inx and iny
        total += count / 4.0**k
    return total


def brw_ancestors(x, y, n: int) -> int:
    return sum(x[0] // 2**k == y[0] // 2**k and x[1] // 2**k == y[1] // 2**k for k in range(n + 1))


def mbrw_paths_enumerate(scales, N: int, sites) -> dict:
    """Scale paths S_z(j), j = 0..n, from a per-scale noise bank by explicit box sums.

    ``scales[k][c1, c2]`` is the variable attached to the torus box of side
    2^k with corner (c1, c2).
    """
    n = N.bit_length() - 1
    out = {}
    for z in sites:
        layer = []
        for k in range(n + 1):
            L = 1 << k
            s = 0.0
            for a in range(L):
                for b in range(L):
                    s += scales[k][(z[0] - a) % N, (z[1] - b) % N]
            layer.append(s)
        out[tuple(z)] = np.cumsum(layer[::-1])
    return out


def half_normal_max_mean() -> float:
    """E max(0, Z) by quadrature."""
    return integrate.quad(lambda z: z * stats.norm.pdf(z), 0, np.inf)[0]


def brw_expected_max(n: int, h: float = 0.005, lo: float = -15.0, hi: float = 45.0) -> float:
    """E max of the 4-ary BRW with n+1 unit Gaussian levels, by CDF recursion on a grid."""
    x = h * np.arange(round(lo / h), round(hi / h) + 1)
    F = stats.norm.cdf(x)
    k = stats.norm.pdf(np.arange(-8.0, 8.0 + h / 2, h)) * h
    for _ in range(n):
        dens = np.gradient(F**4, h)
        F = np.cumsum(np.convolve(dens, k, mode="same")) * h
        F = np.clip(F, 0.0, 1.0)
    pos, neg = x >= 0, x <= 0
    return float(integrate.trapezoid(1.0 - F[pos], x[pos]) - integrate.trapezoid(F[neg], x[neg]))


def iid_max_quantile(p: float, m: int) -> float:
    """p-quantile of the max of m i.i.d. standard normals."""
    return float(stats.norm.ppf(p ** (1.0 / m)))


def gaussian_walk_below(upper, start_sd: float = 1.0, h: float = 0.005, lo: float = -60.0) -> np.ndarray:
    """Sub-probability density of a unit-step Gaussian walk killed above ``upper(j)``.

    The walk starts from N(0, start_sd^2) (or from 0 when ``start_sd == 0``);
    returns (grid, density after the last step).
    """
    n = len(upper) - 1
    x = np.arange(lo, max(upper) + 10.0, h)
    if start_sd > 0:
        dens = stats.norm.pdf(x, scale=start_sd)
    else:
        dens = np.zeros_like(x)
        dens[np.argmin(np.abs(x))] = 1.0 / h
        if upper[0] <= 0:
            dens[:] = 0.0
    dens[x > upper[0]] = 0.0
    k = stats.norm.pdf(np.arange(-8.0, 8.0 + h / 2, h)) * h
    for j in range(1, n + 1):
        dens = np.convolve(dens, k, mode="same")
        dens[x > upper[j]] = 0.0
    return x, dens


def barrier_event_prob(n: int, c5: float) -> float:
    """P(C_z) for one site: walk from N(0,1) with n unit steps below the tent, ending in [A_n, A_n+1]."""
    l2 = math.log(2.0)
    A = 2 * math.sqrt(l2) * n - 3 / (4 * math.sqrt(l2)) * math.log(n)
    L = [0.0] + [c5 * math.log(j) if j <= n // 2 else c5 * math.log(n - j) for j in range(1, n)] + [0.0]
    upper = [j / n * (A + 1) - L[j] + 1 for j in range(n + 1)]
    x, dens = gaussian_walk_below(upper, 1.0)
    m = (x >= A) & (x <= A + 1)
    return float(dens[m].sum() * (x[1] - x[0]))


def bridge_below(n: int, barrier, h: float = 0.005) -> float:
    """P(bridge at integer times 0..n stays strictly below barrier(j)) for unit Gaussian steps."""
    upper = [barrier(j) for j in range(n + 1)]
    if upper[0] <= 0:
        return 0.0
    x, dens = gaussian_walk_below(upper, 0.0, h=h)
    return float(dens[np.argmin(np.abs(x))] / stats.norm.pdf(0.0, scale=math.sqrt(n)))
