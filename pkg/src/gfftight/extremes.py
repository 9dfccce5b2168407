"""Monte Carlo extremes: maxima, (c1, c2) fits, tightness widths, barrier events and bridges."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fields import FieldDraw, FieldKind, MBRWSampler, ScaleWindow, draw_samples, make_sampler, scale_paths
from .lattice import Restriction, SubgridSpec, as_spec, ceil_log2_plus1, t_components
from .replicates import block_size_for, map_blocks, replicate_rng

LOG2 = math.log(2.0)
# E max ~ c1 n - c2 log n for the GFF on V_{2^n} and for the BRW/MBRW
GFF_C1 = 2.0 * math.sqrt(2.0 / math.pi) * LOG2
GFF_C2 = 0.75 * math.sqrt(2.0 / math.pi)
BRW_C1 = 2.0 * math.sqrt(LOG2)
BRW_C2 = 3.0 / (4.0 * math.sqrt(LOG2))
GFF_LOG_RATE = 2.0 * math.sqrt(2.0 / math.pi)

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
BOOT_STREAM = 900
BARRIER_STREAM = 1000
BRIDGE_STREAM = 2000
MIN_RELIABLE_REPS = 30


def _bootstrap(x: np.ndarray, stat, seed: int, reps: int = 200, stream: int = BOOT_STREAM) -> float:
    """Bootstrap standard error of ``stat`` (applied along axis 1 of resampled rows)."""
    if len(x) < 2:
        return float("nan")
    rng = replicate_rng(seed, 0, stream)
    vals = []
    for s in range(0, reps, 50):
        idx = rng.integers(0, len(x), size=(min(50, reps - s), len(x)))
        vals.append(stat(x[idx]))
    return float(np.concatenate(vals).std(ddof=1))


# -------------------------------------------------------------------- maxima


@dataclass
class MaxStats:
    kind: str
    N: int
    restriction: str
    reps: int
    mean: float
    var: float
    quantiles: dict
    mean_se: float
    var_se: float
    quantile_se: dict
    maxima: np.ndarray = field(repr=False, default=None)

    def rows(self) -> list[tuple[str, float, float]]:
        out = [("mean_max", self.mean, self.mean_se), ("var_max", self.var, self.var_se)]
        out += [(f"q{int(round(100 * p)):02d}", self.quantiles[p], self.quantile_se[p]) for p in QUANTILES]
        return out


def sample_maxima(kind, N: int, reps: int, seed: int, restriction="full", workers: int = 1,
                  stream: int = 0, window: ScaleWindow | None = None, q: float | None = None,
                  method: str = "factor") -> np.ndarray:
    """Per-replicate maxima of a field over V_N or V_N'."""
    sampler = make_sampler(kind, N, window=window, q=q, method=method)
    return draw_samples(FieldDraw(sampler, seed, stream, Restriction(restriction), reduce="max"), reps, workers)


def summarize_maxima(maxima: np.ndarray, kind: str, N: int, restriction: str, seed: int) -> MaxStats:
    m = np.asarray(maxima, dtype=float)
    R = len(m)
    mean, var = float(m.mean()), float(m.var(ddof=1)) if R > 1 else 0.0
    m4 = float(np.mean((m - mean) ** 4))
    qs = np.quantile(m, QUANTILES)
    qse = [_bootstrap(m, lambda b, p=p: np.quantile(b, p, axis=1), seed, stream=BOOT_STREAM + i)
           for i, p in enumerate(QUANTILES)]
    return MaxStats(
        kind, N, restriction, R, mean, var,
        dict(zip(QUANTILES, map(float, qs))),
        math.sqrt(var / R) if R > 1 else float("nan"),
        math.sqrt(max(m4 - var * var, 0.0) / R) if R > 1 else float("nan"),
        dict(zip(QUANTILES, qse)),
        m,
    )


def max_stats(kind, N: int, reps: int, seed: int, restriction="full", workers: int = 1,
              stream: int = 0, window: ScaleWindow | None = None, q: float | None = None,
              method: str = "factor") -> MaxStats:
    """Monte Carlo summary of the maximum over V_N (``full``) or V_N' (``inner``)."""
    if reps < 100:
        raise ValueError(f"max_stats needs reps >= 100, got {reps}")
    m = sample_maxima(kind, N, reps, seed, restriction, workers, stream, window, q, method)
    return summarize_maxima(m, FieldKind(kind).value, N, Restriction(restriction).value, seed)


# ----------------------------------------------------------------------- fit


@dataclass
class FitResult:
    c1: float
    c2: float
    intercept: float
    ns: np.ndarray
    residuals: np.ndarray
    c1_halfwidth: float
    c2_halfwidth: float
    stats: list = field(default_factory=list, repr=False)


def fit_coefficients(ns, means, ses=None) -> FitResult:
    """Weighted least squares of E max on (n, -log n, 1).

    Half-widths are 1.96 standard errors from the known per-point SEs (or from
    the residual scatter when no SEs are given).
    """
    ns = np.asarray(ns, dtype=float)
    y = np.asarray(means, dtype=float)
    if len(np.unique(ns)) < 4:
        raise ValueError("fit needs at least 4 distinct n values")
    if np.any(ns <= 0):
        raise ValueError("n values must be positive")
    X = np.column_stack([ns, -np.log(ns), np.ones_like(ns)])
    if np.linalg.matrix_rank(X) < 3:
        raise ValueError("degenerate design matrix")
    w = np.ones_like(y) if ses is None else 1.0 / np.asarray(ses, dtype=float) ** 2
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=None)
    resid = y - X @ beta
    cov = np.linalg.inv((X * w[:, None]).T @ X)
    if ses is None:
        dof = max(len(y) - 3, 1)
        cov *= float(resid @ resid) / dof
    hw = 1.96 * np.sqrt(np.diag(cov))
    return FitResult(float(beta[0]), float(beta[1]), float(beta[2]), ns, resid, float(hw[0]), float(hw[1]))


def fit_expected_max(kind, n_values, reps: int, seed: int, workers: int = 1, method: str = "factor") -> FitResult:
    """Fit c1 n - c2 log n + c to Monte Carlo E max over V_{2^n}, one stream per n."""
    n_values = sorted(int(n) for n in n_values)
    if len(set(n_values)) < 4:
        raise ValueError("fit needs at least 4 distinct n values")
    stats = [max_stats(kind, 1 << n, reps, seed, workers=workers, stream=n, method=method) for n in n_values]
    fit = fit_coefficients(n_values, [s.mean for s in stats], [s.mean_se for s in stats])
    fit.stats = stats
    return fit


# ----------------------------------------------------------------- tightness


@dataclass
class TightnessRow:
    N: int
    reps: int
    iqr: float
    width90: float
    iqr_se: float
    width90_se: float
    unreliable: bool


@dataclass
class TightnessReport:
    kind: str
    rows: list
    width_ratio: float
    iqr_ratio: float


def _widths(centered: np.ndarray, seed: int) -> tuple[float, float, float, float]:
    def w(b, lo, hi):
        a = np.quantile(b, [lo, hi], axis=-1)
        return a[1] - a[0]
    iqr, w90 = float(w(centered, 0.25, 0.75)), float(w(centered, 0.05, 0.95))
    return (iqr, w90, _bootstrap(centered, lambda b: w(b, 0.25, 0.75), seed),
            _bootstrap(centered, lambda b: w(b, 0.05, 0.95), seed, stream=BOOT_STREAM + 1))


def tightness_report(kind, N_list, reps: int, seed: int, workers: int = 1,
                     window: ScaleWindow | None = None, method: str = "factor") -> TightnessReport:
    """Quantile widths of the recentered maximum max - mean(max) for each N."""
    N_list = [int(N) for N in N_list]
    if len(N_list) < 3:
        raise ValueError("tightness needs at least 3 grid sizes")
    rows = []
    for N in N_list:
        m = sample_maxima(kind, N, reps, seed, workers=workers, stream=N, window=window, method=method)
        iqr, w90, iqr_se, w90_se = _widths(m - m.mean(), seed)
        rows.append(TightnessRow(N, reps, iqr, w90, iqr_se, w90_se, reps < MIN_RELIABLE_REPS))
    w = [r.width90 for r in rows]
    i = [r.iqr for r in rows]
    return TightnessReport(FieldKind(kind).value, rows, max(w) / min(w) if min(w) > 0 else math.inf,
                           max(i) / min(i) if min(i) > 0 else math.inf)


# ------------------------------------------------------------ barrier events


def A_n(n: int) -> float:
    """Target level 2 sqrt(log 2) n - 3/(4 sqrt(log 2)) log n."""
    return BRW_C1 * n - BRW_C2 * math.log(n)


def barrier_curve(n: int, c5: float) -> np.ndarray:
    """Tent L_n(j), j = 0..n: c5 log j up to floor(n/2), c5 log(n-j) above, zero at both ends."""
    if n < 1:
        raise ValueError("barrier needs n >= 1")
    j = np.arange(n + 1)
    L = np.where(j <= n // 2, np.log(np.maximum(j, 1)), np.log(np.maximum(n - j, 1))) * c5
    L[0] = L[n] = 0.0
    return L


@dataclass(frozen=True)
class BarrierSpec:
    n: int
    c5: float = 10.0

    @property
    def A(self) -> float:
        return A_n(self.n)

    @property
    def L(self) -> np.ndarray:
        return barrier_curve(self.n, self.c5)

    def upper(self) -> np.ndarray:
        """Path ceiling (j/n)(A_n + 1) - L_n(j) + 1, j = 0..n."""
        j = np.arange(self.n + 1)
        return j / self.n * (self.A + 1.0) - self.L + 1.0

    def events(self, paths: np.ndarray) -> np.ndarray:
        """C_z for scale paths of shape (n+1, ...); weak inequalities throughout."""
        up = self.upper().reshape((-1,) + (1,) * (paths.ndim - 1))
        end = paths[self.n]
        return np.all(paths <= up, axis=0) & (end >= self.A) & (end <= self.A + 1.0)


@dataclass(frozen=True)
class BarrierDraw:
    """Per replicate: (h, max of the MBRW over V_N') from one noise bank."""

    spec: BarrierSpec
    seed: int

    def __call__(self, a: int, b: int) -> np.ndarray:
        n = self.spec.n
        sampler = MBRWSampler(n)
        s1, s2 = SubgridSpec(Restriction.INNER).slices(sampler.N)
        out = np.empty((b - a, 2))
        for r, i in enumerate(range(a, b)):
            bank = sampler.noise_bank(replicate_rng(self.seed, i, BARRIER_STREAM + n))
            paths = scale_paths(sampler.layers(bank))[:, s1, s2]
            out[r, 0] = self.spec.events(paths).sum()
            out[r, 1] = paths[n].max()
        return out


@dataclass
class EventCounts:
    n: int
    c5: float
    reps: int
    A: float
    h: np.ndarray = field(repr=False)
    smax: np.ndarray = field(repr=False)
    eh: float
    eh_se: float
    eh2: float
    eh2_se: float
    p_h: float
    p_h_se: float
    p_s: float
    p_s_se: float
    lower: float
    lower_se: float
    moment_ratio: float
    implication_violations: int
    degenerate: bool

    def chain_ok(self) -> bool:
        """(Eh)^2/Eh^2 <= P(h >= 1) <= P(S* >= A_n), each within 3 combined SE."""
        a = self.lower <= self.p_h + 3.0 * math.hypot(self.lower_se, self.p_h_se)
        b = self.p_h <= self.p_s + 3.0 * math.hypot(self.p_h_se, self.p_s_se)
        return bool(a and b)

    def rows(self) -> list[tuple[str, float, float]]:
        return [
            ("A_n", self.A, 0.0),
            ("Eh", self.eh, self.eh_se),
            ("Eh2", self.eh2, self.eh2_se),
            ("P_h_ge_1", self.p_h, self.p_h_se),
            ("P_smax_ge_A", self.p_s, self.p_s_se),
            ("second_moment_bound", self.lower, self.lower_se),
            ("Eh2_over_Eh_sq", self.moment_ratio, float("nan")),
            ("implication_violations", float(self.implication_violations), 0.0),
        ]


def _prop(x: np.ndarray) -> tuple[float, float]:
    p = float(np.mean(x))
    return p, math.sqrt(p * (1.0 - p) / len(x))


def count_barrier_events(n: int, c5: float, reps: int, seed: int, workers: int = 1) -> EventCounts:
    """Tally h = #{z in V_N' : C_z} per MBRW replicate with the second-moment chain."""
    if n < 2:
        raise ValueError("barrier events need n >= 2")
    if reps < 1:
        raise ValueError("reps must be positive")
    spec = BarrierSpec(n, float(c5))
    res = map_blocks(BarrierDraw(spec, seed), reps, block_size_for((n + 3) << (2 * n), cap=16), workers)
    h, smax = res[:, 0], res[:, 1]
    A = spec.A
    m1, m2 = float(h.mean()), float((h * h).mean())
    R = len(h)
    s1 = float(h.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
    s2 = float((h * h).std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
    degenerate = m2 == 0.0
    if degenerate:
        lower = lower_se = ratio = float("nan")
    else:
        lower = m1 * m1 / m2
        ratio = m2 / (m1 * m1) if m1 > 0 else math.inf
        C = np.cov(np.vstack([h, h * h])) / R if R > 1 else np.zeros((2, 2))
        g = np.array([2.0 * m1 / m2, -m1 * m1 / (m2 * m2)])
        lower_se = float(math.sqrt(max(g @ C @ g, 0.0)))
    p_h, p_h_se = _prop(h >= 1)
    p_s, p_s_se = _prop(smax >= A)
    viol = int(np.sum((h >= 1) & (smax < A)))
    return EventCounts(n, float(c5), R, A, h, smax, m1, s1, m2, s2, p_h, p_h_se, p_s, p_s_se,
                       lower, lower_se, ratio, viol, degenerate)


def pair_overlap(z, zp, spec) -> tuple[int, int]:
    """(r, u) with u = ceil(log2(d_inf + 1)) on the torus and r = n - u."""
    spec = as_spec(spec)
    u = ceil_log2_plus1(max(t_components(z, zp, spec.N)))
    return spec.n - u, u


# ------------------------------------------------------------- left tail


@dataclass
class LeftTail:
    n: int
    c5: float
    alphas: np.ndarray
    probs: np.ndarray
    ses: np.ndarray
    delta0: float
    delta0_se: float

    def log_decrements(self) -> np.ndarray:
        """log P(alpha_i) - log P(alpha_{i+1}); inf where only the second vanishes, NaN where both do."""
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = np.log(self.probs)
            return lp[:-1] - lp[1:]


def lefttail_decay(n: int, c5: float, reps: int, alphas, seed: int, workers: int = 1) -> LeftTail:
    """P(S* <= A_n - alpha) over V_N' for an increasing alpha grid.

    Uses the replicates of :func:`count_barrier_events` with the same seed, so
    the alpha = 0 entry and the reported delta0 = P(S* >= A_n) share samples.
    """
    a = np.asarray(alphas, dtype=float)
    if a.ndim != 1 or len(a) == 0 or np.any(a < 0) or np.any(np.diff(a) <= 0):
        raise ValueError("alphas must be a nonnegative increasing grid")
    ev = count_barrier_events(n, c5, reps, seed, workers)
    probs = np.array([np.mean(ev.smax <= ev.A - x) for x in a])
    ses = np.sqrt(probs * (1.0 - probs) / ev.reps)
    return LeftTail(n, float(c5), a, probs, ses, ev.p_s, ev.p_s_se)


# ------------------------------------------------------------------ bridge


@dataclass(frozen=True)
class BridgeBarrier:
    """``tent``: 1 - L(s) with the c5-log tent; ``constant``: the level ``c``."""

    kind: str = "tent"
    c: float = 2.0
    c5: float = 10.0

    def __post_init__(self):
        if self.kind not in ("tent", "constant"):
            raise ValueError(f"unknown barrier {self.kind!r}")

    def values(self, n: int, s: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full(s.shape, float(self.c))
        m = np.where(s <= n // 2, s, n - s)
        L = self.c5 * np.log(np.maximum(m, 1.0))
        L = np.where((s == 0) | (s == n), 0.0, L)
        return 1.0 - L

    def describe(self) -> str:
        return f"constant:{self.c:g}" if self.kind == "constant" else f"tent:c5={self.c5:g}"


@dataclass
class BridgeEstimate:
    n: int
    barrier: str
    prob: float
    se: float
    reps: int
    substeps: int


@dataclass(frozen=True)
class BridgeDraw:
    n: int
    substeps: int
    seed: int
    barrier: BridgeBarrier | None = None

    def paths(self, a: int, b: int) -> np.ndarray:
        """Bridges W(s) - (s/n) W(n) on the grid s = i/substeps, shape (b-a, n*substeps+1)."""
        K = self.n * self.substeps
        out = np.zeros((b - a, K + 1))
        sd = 1.0 / math.sqrt(self.substeps)
        for r, i in enumerate(range(a, b)):
            rng = replicate_rng(self.seed, i, BRIDGE_STREAM + self.n)
            np.cumsum(rng.standard_normal(K) * sd, out=out[r, 1:])
        frac = np.arange(K + 1) / K
        return out - frac * out[:, -1:]

    def __call__(self, a: int, b: int) -> np.ndarray:
        z = self.paths(a, b)
        s = np.arange(z.shape[1]) / self.substeps
        return np.all(z < self.barrier.values(self.n, s), axis=1)


def sample_bridges(n: int, reps: int, seed: int, substeps: int = 1) -> np.ndarray:
    return BridgeDraw(n, substeps, seed).paths(0, reps)


def bridge_barrier_prob(n: int, barrier: BridgeBarrier, reps: int, seed: int, substeps: int = 1,
                        workers: int = 1) -> BridgeEstimate:
    """Probability that a Gaussian bridge of length n stays strictly below the barrier.

    The bridge is a Gaussian walk with ``n * substeps`` steps of variance
    ``1/substeps`` pinned to 0 at time n; the barrier is checked at every step.
    """
    if n < 2:
        raise ValueError("bridge needs n >= 2")
    if substeps < 1:
        raise ValueError("substeps must be positive")
    block = block_size_for(n * substeps + 1, budget=1 << 20, cap=256)
    ok = map_blocks(BridgeDraw(n, substeps, seed, barrier), reps, block, workers)
    p, se = _prop(ok)
    return BridgeEstimate(n, barrier.describe(), p, se, reps, substeps)


@dataclass
class BridgeDecay:
    estimates: list
    slope: float
    slope_se: float


def bridge_decay(ns, barrier: BridgeBarrier, reps: int, seed: int, substeps: int = 1,
                 workers: int = 1) -> BridgeDecay:
    """Fit log P against log n; the slope is NaN when some estimate is zero."""
    est = [bridge_barrier_prob(n, barrier, reps, seed, substeps, workers) for n in ns]
    p = np.array([e.prob for e in est])
    if np.any(p <= 0) or len(est) < 2:
        return BridgeDecay(est, float("nan"), float("nan"))
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(p)
    w = 1.0 / np.array([(e.se / e.prob) ** 2 if e.se > 0 else 1e-12 for e in est])
    X = np.column_stack([x, np.ones_like(x)])
    cov = np.linalg.inv((X * w[:, None]).T @ X)
    beta = cov @ ((X * w[:, None]).T @ y)
    return BridgeDecay(est, float(beta[0]), float(math.sqrt(cov[0, 0])))
