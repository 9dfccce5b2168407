import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gfftight.covariance import (
    brw_cov_exact,
    empirical_kernel,
    empirical_vs_exact,
    exact_kernel,
    gff_mbrw_comparison,
    lemma22_check,
    mbrw_cov_exact,
    mbrw_cov_literal,
    mbrw_cov_offsets,
    min_noise_constant,
    rho_trunc,
    rho_trunc_pairs,
    sudakov_fernique_compare,
    with_noise,
)
from gfftight.fields import BRWSampler, FieldDraw, MBRWSampler, ScaleWindow
from gfftight.lattice import GridSpec, offset_components

import oracles


@st.composite
def pair_on(draw, sides=(2, 4, 8, 16, 32)):
    N = draw(st.sampled_from(sides))
    c = st.integers(0, N - 1)
    return N, (draw(c), draw(c)), (draw(c), draw(c))


@pytest.mark.parametrize("N", [2, 4, 8])
def test_mbrw_matches_box_enumeration(N):
    pts = [(a, b) for a in range(N) for b in range(N)]
    for x in pts[:: max(1, len(pts) // 16)]:
        for y in pts:
            ref = oracles.mbrw_cov_enumerate(x, y, N)
            assert mbrw_cov_exact(x, y, N) == pytest.approx(ref, rel=1e-12)


def test_mbrw_neighbour_value():
    assert mbrw_cov_exact((0, 0), (1, 0), 4) == pytest.approx(oracles.mbrw_cov_enumerate((0, 0), (1, 0), 4))


@given(pair_on())
def test_mbrw_diagonal_and_symmetry(p):
    N, x, y = p
    n = GridSpec.from_side(N).n
    assert mbrw_cov_exact(x, x, N) == n + 1
    assert mbrw_cov_exact(x, y, N) == mbrw_cov_exact(y, x, N)


def test_mbrw_explicit_upper_bound():
    # R <= n - log2(d+1) + 3 at every pair of V_16
    N, n = 16, 4
    R = mbrw_cov_offsets(N)
    t1, t2 = offset_components(N)
    d = np.hypot(t1, t2)
    assert np.all(R <= n - np.log2(d + 1) + 3)


def test_literal_sum_differs_only_in_top_scale():
    # the construction makes the top layer common to all sites; the literal
    # sum weights it by (1 - t1/N)(1 - t2/N)
    N, n = 16, 4
    for x, y in [((0, 0), (3, 5)), ((1, 2), (9, 9)), ((0, 0), (8, 8))]:
        t1, t2 = (min(abs(a - b), N - abs(a - b)) for a, b in zip(x, y))
        top = (1 - t1 / N) * (1 - t2 / N)
        K = math.ceil(math.log2(max(t1, t2) + 1))
        if K <= n:
            assert mbrw_cov_literal(x, y, N) == pytest.approx(mbrw_cov_exact(x, y, N) - 1 + top)


def test_kernel_oracle_mbrw():
    k = exact_kernel("mbrw", 8)
    assert k.provenance == "exact-formula"
    assert np.allclose(np.diag(k.values), 4)
    assert np.array_equal(k.values, k.values.T)
    assert k((1, 2), (6, 7)) == pytest.approx(mbrw_cov_exact((1, 2), (6, 7), 8))


def test_rho_diagonal_zero():
    assert rho_trunc((3, 4), (3, 4), 32, 2) == 0.0


@given(pair_on(sides=(4, 8, 16, 32, 64)))
def test_rho_nonincreasing_in_k0(p):
    N, x, y = p
    n = N.bit_length() - 1
    vals = [rho_trunc(x, y, N, k0) for k0 in range(n + 1)]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


@given(pair_on(sides=(4, 8, 16, 32, 64)), st.data())
def test_rho_is_windowed_increment_variance(p, data):
    N, x, y = p
    n = N.bit_length() - 1
    k0 = data.draw(st.integers(0, n))
    w = ScaleWindow(k0, n)
    v = mbrw_cov_exact(x, x, N, w) + mbrw_cov_exact(y, y, N, w) - 2 * mbrw_cov_exact(x, y, N, w)
    assert rho_trunc(x, y, N, k0) == pytest.approx(v, abs=1e-10)


def test_rho_gap_property():
    N = 64
    t1, t2 = offset_components(N)
    dinf = np.maximum(t1, t2)
    base = rho_trunc_pairs(t1, t2, 6, 0)
    for k0 in range(7):
        gap = base - rho_trunc_pairs(t1, t2, 6, k0)
        with np.errstate(divide="ignore"):
            sel = np.log2(dinf) >= math.sqrt(k0) - 1
        assert np.all(gap[sel] >= math.sqrt(k0) - 1 - 1e-12)


def test_rho_range_check():
    with pytest.raises(ValueError):
        rho_trunc((0, 0), (1, 1), 8, 4)


def test_brw_cov_cases():
    assert brw_cov_exact((2, 3), (2, 3), 8) == 4
    assert brw_cov_exact((0, 0), (4, 4), 8) == 1
    assert brw_cov_exact((0, 0), (1, 1), 8) == 3


@given(pair_on(sides=(2, 4, 8, 16)))
def test_brw_cov_matches_ancestor_count(p):
    N, x, y = p
    assert brw_cov_exact(x, y, N) == oracles.brw_ancestors(x, y, N.bit_length() - 1)


def test_brw_empirical_small():
    res = empirical_vs_exact("brw", 8, 10_000, seed=3)
    assert res["fraction_within_3se"] >= 0.99


def test_empirical_kernel_known_mean():
    pts = np.array([[0, 0], [0, 1]])
    X = np.array([[1.0, 2.0], [-1.0, 0.0], [1.0, -2.0], [-1.0, 0.0]])
    k, se = empirical_kernel(X, pts)
    assert np.allclose(k.values, [[1.0, 0.0], [0.0, 2.0]])
    assert se.shape == (2, 2) and np.all(se >= 0)


def test_exact_kernels_all_fields():
    for kind in ("gff", "tgff", "brw", "mbrw"):
        k = exact_kernel(kind, 8)
        assert k.values.shape == (64, 64)
        assert np.allclose(k.values, k.values.T)
        assert np.linalg.eigvalsh(k.values).min() > -1e-9


def test_log_profile_reports():
    reps = {r.estimate_name: r for r in lemma22_check(16)}
    m = reps["mbrw_log_profile"]
    assert m.extras["diagonal_deviation"] == 1.0
    assert m.extras["upper_slack"] <= 3
    assert m.argmax_pair[1] != [0, 0]
    g = reps["gff4n_log_profile"]
    assert g.extras["sources"] == 256 and g.extras["near_diagonal_deviation"] is not None
    js = json.loads(m.to_json())
    assert {"estimate_name", "N", "sup_deviation", "argmax_pair", "violations"} <= set(js)


def test_log_profile_sup_bounded_over_sizes():
    vals = {N: {r.estimate_name: r.sup_deviation for r in lemma22_check(N, which=("tgff", "mbrw"))}
            for N in (8, 16, 32, 64, 128)}
    for name in ("tgff_log_profile", "mbrw_log_profile"):
        s = [vals[N][name] for N in vals]
        assert max(s) < 2 * min(s)


def test_gff4n_strided_sources_cover_corners():
    r = lemma22_check(64, which=("gff",))[0]
    assert r.extras["sources"] == 32 * 32


def _draw_pair(sampler, seed, stream=0, **kw):
    return FieldDraw(sampler, seed, stream, **kw)


def test_sf_identical_fields():
    k = exact_kernel("mbrw", 8)
    rep = sudakov_fernique_compare(k, k, _draw_pair(MBRWSampler(3), 1, 1), _draw_pair(MBRWSampler(3), 1, 2), 3000)
    assert rep.violations == [] and rep.extras["dominates"]
    assert rep.sup_deviation == 0.0
    x = rep.extras
    assert abs(x["emax_a"] - x["emax_b"]) <= 3 * math.hypot(x["se_a"], x["se_b"])


def test_sf_index_mismatch():
    a, b = exact_kernel("mbrw", 4), exact_kernel("mbrw", 8)
    with pytest.raises(ValueError):
        sudakov_fernique_compare(a, b, None, None, 10)


def test_sf_reports_violations():
    a, b = exact_kernel("brw", 8), exact_kernel("mbrw", 8)
    rep = sudakov_fernique_compare(a, b, _draw_pair(BRWSampler(3), 1, 1), _draw_pair(MBRWSampler(3), 1, 2), 200)
    assert rep.extras["violation_count"] > 0 and not rep.extras["dominates"]
    assert len(rep.violations) == min(100, rep.extras["violation_count"])
    assert rep.sup_deviation > 0


def test_noise_raises_expected_max():
    k = exact_kernel("mbrw", 8)
    rep = sudakov_fernique_compare(
        with_noise(k, 1.0), k,
        _draw_pair(MBRWSampler(3), 4, 1, noise=1.0), _draw_pair(MBRWSampler(3), 4, 2), 4000)
    assert rep.extras["dominates"]
    assert rep.extras["emax_a"] > rep.extras["emax_b"]


def test_min_noise_constant_search():
    mbrw = exact_kernel("mbrw", 8)
    brw = exact_kernel("brw", 8)
    c = min_noise_constant(mbrw, brw)
    Da, Db = mbrw.increments(), brw.increments()
    off = ~np.eye(64, dtype=bool)
    assert np.all((Da + 2 * c * c)[off] >= Db[off])
    if c > 0:
        assert np.any((Da + 2 * (c - 1) ** 2)[off] < Db[off])
    assert min_noise_constant(mbrw, mbrw) == 0


def test_gff_mbrw_comparison_n16():
    c1, rep = gff_mbrw_comparison(16, 500, seed=2)
    assert c1 >= 1 and rep.extras["dominates"]
    assert rep.extras["ordering_consistent"]
