"""Noise streams, the stationary linear field, Wick powers, and trees."""

import math

import numpy as np
import pytest

from onsigma.torus import create_grid, fft_coeffs, ifft_values, RealField
from onsigma.stochastic import (
    NoiseStreams,
    make_streams,
    white_increment,
    mode_variance_table,
    ou_update_tables,
    ou_init_stationary,
    ou_step,
    wick_a,
    wick_btilde,
    wick2,
    wick3,
    tree30_step,
    make_trees,
    q_stats,
)
from onsigma.stochastic import _c1, _c2
from onsigma.oracle import btilde_exact, ou_mode_law


# -- streams ------------------------------------------------------------------

def test_streams_are_reproducible():
    a = NoiseStreams(7, 3).normals(1, 5, (8,))
    b = NoiseStreams(7, 3).normals(1, 5, (8,))
    assert np.array_equal(a, b)


def test_streams_vary_with_component_step_and_lane():
    s = NoiseStreams(7, 3)
    base = s.normals(0, 5, (8,))
    assert not np.array_equal(base, s.normals(1, 5, (8,)))
    assert not np.array_equal(base, s.normals(0, 6, (8,)))
    assert not np.array_equal(base, s.normals(0, 5, (8,), lane=2))


def test_permuting_component_keys_permutes_streams():
    s = NoiseStreams(7, 3, component_keys=[0, 1, 2])
    p = NoiseStreams(7, 3, component_keys=[2, 0, 1])
    assert np.array_equal(p.normals(0, 4, (8,)), s.normals(2, 4, (8,)))
    assert np.array_equal(p.normals(1, 4, (8,)), s.normals(0, 4, (8,)))


def test_shared_keys_duplicate_streams():
    s = NoiseStreams(7, 2, component_keys=[5, 5])
    assert np.array_equal(s.normals(0, 3, (4,)), s.normals(1, 3, (4,)))


def test_streams_guards():
    with pytest.raises(ValueError):
        NoiseStreams(0, 0)
    with pytest.raises(ValueError):
        NoiseStreams(0, 2, component_keys=[1])
    s = NoiseStreams(0, 2)
    with pytest.raises(ValueError):
        s.normals(2, 0, (4,))
    with pytest.raises(ValueError):
        s.normals(0, -1, (4,))


def test_normals_all_stacks_per_component_draws():
    s = make_streams(3, 4)
    stacked = s.normals_all(2, (8,))
    for i in range(4):
        assert np.array_equal(stacked[i], s.normals(i, 2, (8,)))


# -- white noise and the OU field -----------------------------------------------

def test_white_increment_site_variance():
    grid = create_grid(1, 16)
    s = make_streams(0, 1)
    dt = 0.01
    vals = np.stack([ifft_values(white_increment(grid, dt, s, step=k).coeffs, grid)
                     for k in range(2000)])
    target = dt / grid.cell_volume
    assert np.var(vals) == pytest.approx(target, rel=0.1)
    with pytest.raises(ValueError):
        white_increment(grid, 0.0, s)


def test_mode_variance_table_matches_closed_form():
    grid = create_grid(1, 8)
    m = 1.3
    v = mode_variance_table(grid, m)
    for idx in range(8):
        var, _ = ou_mode_law(m, float(grid.k2[idx]), 0.0)
        assert v[idx] * grid.volume == pytest.approx(var, rel=1e-12)
    with pytest.raises(ValueError):
        mode_variance_table(grid, 0.0)


def test_ou_update_preserves_mode_variance_algebraically():
    grid = create_grid(2, 8)
    m, dt = 0.7, 0.13
    v = mode_variance_table(grid, m)
    decay, scale = ou_update_tables(grid, m, dt)
    # site normals have per-mode coefficient variance 1/n_sites
    np.testing.assert_allclose(decay ** 2 * v + scale ** 2 / grid.n_sites, v,
                               rtol=1e-12)


def test_ou_stationary_init_mode_variances():
    grid = create_grid(1, 8)
    m = 1.0
    s = make_streams(11, 1)
    coeffs = np.stack([fft_coeffs(ou_init_stationary(grid, m, s, step=k).values,
                                  grid) for k in range(4000)])
    est = np.mean(np.abs(coeffs) ** 2, axis=0)
    np.testing.assert_allclose(est, mode_variance_table(grid, m), rtol=0.15)


def test_ou_step_autocovariance_decay():
    grid = create_grid(1, 8)
    m, dt = 1.0, 0.05
    s = make_streams(5, 1)
    n_lag = 10
    z0 = []
    zt = []
    for rep in range(1500):
        z = ou_init_stationary(grid, m, s, step=rep)
        z0.append(fft_coeffs(z.values, grid))
        for k in range(n_lag):
            z = ou_step(z, dt, m, s, step=rep * n_lag + k)
        zt.append(fft_coeffs(z.values, grid))
    z0 = np.stack(z0)
    zt = np.stack(zt)
    est = np.mean(zt * np.conj(z0), axis=0).real
    for idx in (0, 1, 2):
        var, cov = ou_mode_law(m, float(grid.k2[idx]), n_lag * dt)
        assert est[idx] * grid.volume == pytest.approx(cov, abs=0.12 * var)


# -- Wick constants and powers ----------------------------------------------------

def test_wick_a_is_sum_of_mode_variances():
    grid = create_grid(2, 8)
    m = 0.9
    assert wick_a(grid, m) == pytest.approx(
        float(np.sum(mode_variance_table(grid, m))), rel=1e-12)
    with pytest.raises(ValueError):
        wick_a(grid, -1.0)


def test_wick_powers_closed_forms():
    grid = create_grid(1, 8)
    rng = np.random.default_rng(0)
    zi = RealField(grid, rng.standard_normal(grid.shape))
    zj = RealField(grid, rng.standard_normal(grid.shape))
    a = 0.37
    np.testing.assert_allclose(wick2(zi, zi, a, True).values,
                               zi.values ** 2 - a)
    np.testing.assert_allclose(wick2(zi, zj, a, False).values,
                               zi.values * zj.values)
    np.testing.assert_allclose(wick3(zi, zi, a).values,
                               zi.values ** 3 - 3.0 * a * zi.values)
    np.testing.assert_allclose(wick3(zi, zj, a, diagonal=False).values,
                               zi.values * zj.values ** 2 - a * zi.values)
    other = RealField(create_grid(1, 16), np.zeros(16))
    with pytest.raises(ValueError):
        wick2(zi, other, a, False)


def test_wick2_of_stationary_field_is_centered():
    grid = create_grid(1, 8)
    m = 1.0
    a = wick_a(grid, m)
    s = make_streams(2, 1)
    means = [np.mean(ou_init_stationary(grid, m, s, step=k).values ** 2 - a)
             for k in range(3000)]
    se = np.std(means, ddof=1) / math.sqrt(len(means))
    assert abs(np.mean(means)) < 4.0 * se


def test_wick_btilde_agrees_with_exact_value():
    grid = create_grid(1, 8)
    m = 1.0
    est, se = wick_btilde(grid, m, samples=256, seed=3)
    assert abs(est - btilde_exact(grid, m)) < 4.0 * se
    with pytest.raises(ValueError):
        wick_btilde(grid, 0.0)
    with pytest.raises(ValueError):
        wick_btilde(grid, m, samples=0)


# -- trees -------------------------------------------------------------------------

def test_tree30_step_constant_source_fixed_point():
    grid = create_grid(1, 8)
    m, dt = 1.5, 0.05
    rng = np.random.default_rng(1)
    src = fft_coeffs(rng.standard_normal(grid.shape), grid)
    state = np.zeros(grid.shape, dtype=np.complex128)
    for _ in range(400):
        state = tree30_step(state, src, dt, m, grid)
    np.testing.assert_allclose(state, src / (m + grid.k2), rtol=1e-8, atol=1e-12)


def test_coefficient_tables():
    assert _c1(0, 0, 0, 0) == 1.0
    assert _c1(0, 1, 0, 1) == 0.5
    assert _c1(0, 1, 1, 0) == 0.5
    assert _c1(0, 0, 1, 1) == 0.0
    assert _c1(0, 1, 2, 3) == 0.0
    assert _c2(0, 0, 0) == 3.0
    assert _c2(0, 1, 1) == 1.0
    assert _c2(0, 0, 1) == 0.0
    assert _c2(0, 1, 2) == 0.0


def test_aggregate_is_sum_of_tracked_pairs():
    grid = create_grid(1, 8)
    N = 3
    trees = make_trees(grid, 1.0, N, seed=4, dt=0.05, btilde=0.1)
    for i in range(N):
        for j in range(N):
            trees.track_pair(i, j)
    trees.burn_in(50)
    b = trees.b_values()
    for i in range(N):
        acc = sum(trees.tree30_pair(i, j) for j in range(N))
        np.testing.assert_allclose(b[i], acc, rtol=1e-10, atol=1e-12)


def test_untracked_pair_raises():
    grid = create_grid(1, 8)
    trees = make_trees(grid, 1.0, 2, seed=0, dt=0.05, btilde=0.1)
    with pytest.raises(KeyError):
        trees.tree30_pair(0, 1)
    with pytest.raises(IndexError):
        trees.z2(0, 2)


def test_z3_source_variance_matches_gaussian_moments():
    # pointwise Var(Z_i sum_j Z_j^2 - (N+2) a Z_i) = (2 (N-1) + 6) a^3
    grid = create_grid(1, 8)
    m, N = 1.0, 3
    a = wick_a(grid, m)
    trees = make_trees(grid, m, N, seed=9, dt=0.05, btilde=0.0)
    s = make_streams(21, N)
    acc = []
    for k in range(1500):
        for i in range(N):
            z = ou_init_stationary(grid, m, s, component=i, step=k)
            trees.z_coeffs[i] = fft_coeffs(z.values, grid)
        acc.append(np.mean(trees.z3_source_all() ** 2))
    target = (2.0 * (N - 1) + 6.0) * a ** 3
    assert np.mean(acc) == pytest.approx(target, rel=0.15)


def test_advance_reuses_supplied_noise():
    grid = create_grid(1, 8)
    t1 = make_trees(grid, 1.0, 2, seed=8, dt=0.05, btilde=0.1)
    t2 = make_trees(grid, 1.0, 2, seed=8, dt=0.05, btilde=0.1)
    eta = t1.advance()
    t2.advance(eta)
    np.testing.assert_array_equal(t1.z_coeffs, t2.z_coeffs)
    np.testing.assert_array_equal(t1.b_coeffs, t2.b_coeffs)


def test_q_stats_runs_and_is_deterministic():
    grid = create_grid(1, 8)

    def run():
        trees = make_trees(grid, 1.0, 2, seed=12, dt=0.05, btilde=0.1)
        trees.burn_in(40)
        return q_stats(trees, 10, kappa=0.1)

    qa = run()
    qb = run()
    assert qa == qb
    assert all(np.isfinite(q) and q > 0 for q in qa)


def test_q_stats_single_component_and_guard():
    grid = create_grid(1, 8)
    trees = make_trees(grid, 1.0, 1, seed=1, dt=0.05, btilde=0.1)
    trees.burn_in(20)
    q0, q1, q2 = q_stats(trees, 5)
    assert all(np.isfinite(q) and q >= 0 for q in (q0, q1, q2))
    with pytest.raises(ValueError):
        q_stats(trees, 0)


def test_treeset_guards():
    grid = create_grid(1, 8)
    with pytest.raises(ValueError):
        make_trees(grid, 1.0, 0, seed=0, dt=0.05)
    streams = make_streams(0, 1)
    from onsigma.stochastic import TreeSet
    with pytest.raises(ValueError):
        TreeSet(grid, 1.0, 2, streams, 0.05, btilde=0.1)
