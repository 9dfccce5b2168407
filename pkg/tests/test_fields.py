import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gfftight.covariance import exact_kernel
from gfftight.fields import (
    BRWSampler,
    FieldDraw,
    GFFSampler,
    MBRWSampler,
    ScaleWindow,
    TGFFSampler,
    circular_box_sum,
    draw_samples,
    make_sampler,
    mbrw_layer_enumerate,
    mbrw_scale_path,
    sample_brw,
    sample_gff,
    sample_mbrw,
    sample_tgff,
    scale_paths,
)
from gfftight.green import torus_green
from gfftight.lattice import Restriction
from gfftight.replicates import ResourceCapError, replicate_rng, replicate_rngs

import oracles


def draws(sampler, reps, seed=0):
    return draw_samples(FieldDraw(sampler, seed), reps)


def within(emp, exact, se, k=3.0):
    return np.abs(emp - exact) <= k * se + 1e-12


# ---------------------------------------------------------------- GFF


@pytest.mark.parametrize("method", ["factor", "spectral"])
def test_gff_boundary_is_zero(method):
    x = sample_gff(12, seed=4, method=method).values
    assert np.all(x[0] == 0) and np.all(x[-1] == 0) and np.all(x[:, 0] == 0) and np.all(x[:, -1] == 0)


def test_gff_single_site_variance():
    x = draws(GFFSampler(3), 10_000, seed=1)[:, 4]
    assert abs(x.var() - 1.0) <= 3 * np.sqrt(2.0 / len(x))


@pytest.mark.parametrize("method", ["factor", "spectral"])
def test_gff_covariance_matches_green(method):
    N, R = 8, 10_000
    X = draws(GFFSampler(N, method), R, seed=2)
    C = X.T @ X / R
    se = np.sqrt(np.maximum((X**2).T @ X**2 / R - C**2, 0) / R)
    ok = within(C, exact_kernel("gff", N).values, se)
    assert ok.mean() >= 0.99


def test_gff_method_validation():
    with pytest.raises(ValueError):
        GFFSampler(2)
    with pytest.raises(ValueError):
        GFFSampler(8, "cholesky")
    with pytest.raises(ResourceCapError):
        GFFSampler(1024)


# --------------------------------------------------------------- TGFF


def test_tgff_stationary_variance_and_offset():
    N, R = 32, 10_000
    X = draws(TGFFSampler(N), R, seed=3).reshape(R, N, N)
    K = torus_green(N).kernel
    var = (X**2).mean(axis=0)
    assert np.mean(np.abs(var - K[0, 0]) <= 3 * K[0, 0] * np.sqrt(2.0 / R)) >= 0.99
    prod = X * np.roll(X, -1, axis=1)
    c, se = prod.mean(), prod.mean(axis=(1, 2)).std(ddof=1) / np.sqrt(R)
    assert abs(c - K[0, 1]) <= 3 * se
    m = X.mean(axis=(1, 2))
    assert abs(m.mean()) <= 3 * m.std(ddof=1) / np.sqrt(R)


def test_tgff_invalid():
    with pytest.raises(ValueError):
        TGFFSampler(8, 1.0)
    with pytest.raises(ValueError):
        TGFFSampler(12)


def test_tgff_sample_records_survival():
    s = sample_tgff(8, seed=1)
    assert s.killing == pytest.approx(64 / 65)


# ---------------------------------------------------------------- BRW


def test_brw_single_site():
    vals = np.array([sample_brw(1, seed=s).values[0, 0] for s in range(2000)])
    assert abs(vals.mean()) <= 3 / np.sqrt(2000)


def test_brw_field_is_ancestor_sum():
    s = BRWSampler(3)
    bank = s.noise_bank(replicate_rng(5, 0))
    f = s.field(bank)
    for z in [(0, 0), (3, 6), (7, 7)]:
        want = sum(bank.scales[k][z[0] >> k, z[1] >> k] for k in range(4))
        assert f[z] == pytest.approx(want, abs=1e-12)


def test_brw_covariance_matches_ancestor_count():
    N, R = 8, 10_000
    X = draws(BRWSampler(3), R, seed=4)
    C = X.T @ X / R
    se = np.sqrt(np.maximum((X**2).T @ X**2 / R - C**2, 0) / R)
    pts = [(i, j) for i in range(N) for j in range(N)]
    A = np.array([[oracles.brw_ancestors(x, y, 3) for y in pts] for x in pts])
    assert within(C, A, se).mean() >= 0.99
    assert np.abs(np.diag(C) - 4).max() <= 3 * np.sqrt(2 * 16 / R) + 0.05


# --------------------------------------------------------------- MBRW


@pytest.mark.parametrize("N", [2, 4, 8])
def test_box_sum_matches_enumeration(N):
    rng = np.random.default_rng(N)
    for k in range(N.bit_length()):
        noise = rng.standard_normal((N, N))
        assert np.allclose(circular_box_sum(noise, 1 << k), mbrw_layer_enumerate(noise, k), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([4, 8, 16]), st.integers(0, 4), st.integers(0, 2**31))
def test_box_sum_linear_and_mass_preserving(N, k, seed):
    L = 1 << min(k, N.bit_length() - 1)
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((2, N, N))
    s = circular_box_sum(a + 2 * b, L)
    assert np.allclose(s, circular_box_sum(a, L) + 2 * circular_box_sum(b, L))
    assert s.sum() == pytest.approx(L * L * (a + 2 * b).sum(), abs=1e-8 * L * L * N * N)


def test_mbrw_iid_window():
    R = 4000
    X = draws(MBRWSampler(3, ScaleWindow(0, 0)), R, seed=6)
    C = X.T @ X / R
    off = C[~np.eye(64, dtype=bool)]
    assert np.abs(np.diag(C) - 1).max() <= 4 * np.sqrt(2 / R)
    assert np.mean(np.abs(off) <= 3 / np.sqrt(R)) >= 0.99


def test_mbrw_window_validation():
    with pytest.raises(ValueError):
        MBRWSampler(3, ScaleWindow(2, 5))
    with pytest.raises(ValueError):
        MBRWSampler(3, ScaleWindow(2, 1))


def test_mbrw_variance_and_stationarity():
    N, R = 16, 10_000
    X = draws(MBRWSampler(4), R, seed=7).reshape(R, N, N)
    var = (X**2).mean(axis=0)
    assert np.mean(np.abs(var - 5) <= 3 * 5 * np.sqrt(2 / R)) >= 0.99
    # covariance at a fixed offset does not depend on the base point
    a = (X[:, 2, 3] * X[:, 5, 4]).mean()
    b = (X[:, 9, 14] * X[:, 12, 15]).mean()
    se = np.hypot((X[:, 2, 3] * X[:, 5, 4]).std(), (X[:, 9, 14] * X[:, 12, 15]).std()) / np.sqrt(R)
    assert abs(a - b) <= 3 * se


def test_mbrw_covariance_matches_formula():
    N, R = 32, 10_000
    X = draws(MBRWSampler(5), R, seed=8)
    C = X.T @ X / R
    se = np.sqrt(np.maximum((X**2).T @ X**2 / R - C**2, 0) / R)
    assert within(C, exact_kernel("mbrw", N).values, se).mean() >= 0.99


def test_scale_path_endpoint_is_field_value():
    s = MBRWSampler(4)
    bank = s.noise_bank(replicate_rng(11, 0))
    f = s.field(bank)
    for z in [(0, 0), (5, 9), (15, 15)]:
        p = mbrw_scale_path(bank, z)
        assert len(p.values) == 5
        assert p.values[-1] == f[z]
    paths = scale_paths(s.layers(bank))
    assert np.array_equal(paths[-1], f)
    assert np.array_equal(s.field_from_layers(s.layers(bank)), f)


def test_scale_path_matches_enumeration():
    s = MBRWSampler(3)
    bank = s.noise_bank(replicate_rng(12, 0))
    sites = [(0, 0), (3, 5), (7, 1)]
    ref = oracles.mbrw_paths_enumerate(bank.scales, 8, sites)
    for z in sites:
        assert np.allclose(mbrw_scale_path(bank, z).values, ref[z], atol=1e-12)


def test_scale_path_increments_independent():
    s = MBRWSampler(4)
    R = 10_000
    P = np.array([mbrw_scale_path(s.noise_bank(r), (3, 3)).values for r in replicate_rngs(13, 0, R)])
    inc = np.column_stack([P[:, 0], np.diff(P, axis=1)])
    C = inc.T @ inc / R
    se = np.sqrt(np.maximum((inc**2).T @ inc**2 / R - C**2, 0) / R)
    assert np.all(within(C, np.eye(5), se, 3.5))


def test_scale_path_independence_across_sites():
    # with r = n - ceil(log2(d_inf+1)), the increments of S_{z'} after time r
    # are uncorrelated with the whole path of z and with S_{z'} up to time r
    s = MBRWSampler(4)
    z, zp = (2, 2), (7, 4)  # d_inf = 5, u = 3, r = 1
    r = 1
    R = 10_000
    rows = []
    for g in replicate_rngs(14, 0, R):
        layers = s.layers(s.noise_bank(g))
        p = scale_paths(layers)
        rows.append(np.concatenate([p[r + 1:, zp[0], zp[1]] - p[r, zp[0], zp[1]], p[:, z[0], z[1]], p[:r + 1, zp[0], zp[1]]]))
    M = np.array(rows)
    a, b = M[:, : 4 - r], M[:, 4 - r:]
    C = a.T @ b / R
    se = np.sqrt(np.maximum((a**2).T @ b**2 / R - C**2, 0) / R)
    assert np.all(np.abs(C) <= 3.5 * se)


# ----------------------------------------------------------- plumbing


@pytest.mark.parametrize("kind", ["gff", "tgff", "brw", "mbrw"])
def test_deterministic_given_seed(kind):
    a = make_sampler(kind, 16).draw(replicate_rngs(21, 0, 3))
    b = make_sampler(kind, 16).draw(replicate_rngs(21, 0, 3))
    assert np.array_equal(a, b)
    c = make_sampler(kind, 16).draw(replicate_rngs(22, 0, 3))
    assert not np.array_equal(a, c)


def test_blocks_do_not_change_replicates():
    d = FieldDraw(MBRWSampler(3), seed=5)
    whole = d(0, 10)
    assert np.array_equal(np.concatenate([d(0, 4), d(4, 10)]), whole)


def test_restricted_draw_and_max():
    d = FieldDraw(GFFSampler(16), seed=5, restriction=Restriction.INNER)
    X = d(0, 3)
    assert X.shape == (3, 64)
    m = FieldDraw(GFFSampler(16), seed=5, restriction=Restriction.INNER, reduce="max")(0, 3)
    assert np.array_equal(m, X.max(axis=1))


def test_field_sample_write(tmp_path):
    s = sample_mbrw(4, seed=3, window=ScaleWindow(1, 2))
    p = tmp_path / "f.csv"
    s.write(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x1,x2,value" and len(lines) == 17
    side = json.loads((tmp_path / "f.csv.json").read_text())
    assert side == {"kind": "mbrw", "n": 2, "N": 4, "window": [1, 2], "seed": 3, "killing": None}
    s.write(tmp_path / "f.json", fmt="json")
    assert np.allclose(json.loads((tmp_path / "f.json").read_text())["values"], s.values)
    with pytest.raises(ValueError):
        s.write(tmp_path / "f.bin", fmt="npy")
