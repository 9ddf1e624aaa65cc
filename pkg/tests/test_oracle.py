"""Independent validators: closed forms, brute force, and the MCMC sampler."""

import math

import numpy as np
import pytest

from onsigma.torus import create_grid, ifft_values
from onsigma.besov import make_partition
from onsigma.stochastic import (
    make_streams,
    mode_variance_table,
    ou_init_stationary,
    wick_a,
)
from onsigma.oracle import (
    ou_mode_law,
    bruteforce_paraproduct,
    wick_moment_oracle,
    btilde_exact,
    MetropolisSampler,
    mcmc_invariant_sampler,
    variance_scaling_oracle,
    picard_solve_x,
)
from onsigma.torus import RealField, fft_coeffs


def test_ou_mode_law_values_and_guard():
    var, cov = ou_mode_law(2.0, 3.0, 0.4)
    assert var == pytest.approx(0.1)
    assert cov == pytest.approx(0.1 * math.exp(-2.0))
    assert ou_mode_law(2.0, 3.0, -0.4)[1] == cov
    with pytest.raises(ValueError):
        ou_mode_law(0.0, 1.0, 0.0)


def test_bruteforce_paraproduct_guard_and_reconstruction():
    grid = create_grid(1, 8)
    part = make_partition(grid)
    rng = np.random.default_rng(0)
    f = RealField(grid, rng.standard_normal(grid.shape))
    g = RealField(grid, rng.standard_normal(grid.shape))
    lo, res, hi = bruteforce_paraproduct(f, g, part)
    np.testing.assert_allclose(lo.values + res.values + hi.values,
                               f.values * g.values, rtol=1e-10, atol=1e-12)
    big = create_grid(1, 32)
    with pytest.raises(ValueError):
        bruteforce_paraproduct(RealField(big, np.zeros(32)),
                               RealField(big, np.zeros(32)),
                               make_partition(big))


def test_wick_moment_oracle_patterns_and_guards():
    C = lambda r: np.exp(-np.abs(np.asarray(r, dtype=float)))
    assert wick_moment_oracle(C, "mean2")(0.7) == 0.0
    assert wick_moment_oracle(C, "square_square")(0.5) == pytest.approx(
        2.0 * math.exp(-1.0))
    f = wick_moment_oracle(C, "cubic_linear", a=0.4)
    assert f(0.3) == pytest.approx(3.0 * math.exp(-0.3) * (1.0 - 0.4))
    with pytest.raises(ValueError):
        wick_moment_oracle(C, "cubic_linear")
    with pytest.raises(ValueError):
        wick_moment_oracle(C, "nope")


def test_square_square_moment_against_monte_carlo():
    grid = create_grid(1, 8)
    m = 1.0
    a = wick_a(grid, m)
    v = mode_variance_table(grid, m)
    cov_kernel = ifft_values(v.astype(np.complex128), grid)  # C(r) on the sites

    def C(r):
        return cov_kernel[int(r)]

    oracle = wick_moment_oracle(C, "square_square")
    s = make_streams(17, 1)
    n = 6000
    acc = np.zeros(grid.M)
    for k in range(n):
        z = ou_init_stationary(grid, m, s, step=k).values
        w2 = z * z - a
        acc += np.array([np.mean(w2 * np.roll(w2, -r)) for r in range(grid.M)])
    acc /= n
    for r in range(grid.M):
        assert acc[r] == pytest.approx(oracle(r), abs=0.05 * oracle(0))


def test_btilde_exact_guard_and_positivity():
    grid = create_grid(1, 8)
    assert btilde_exact(grid, 1.0) > 0.0
    with pytest.raises(ValueError):
        btilde_exact(grid, 0.0)
    # decreases with mass: every spectral factor does
    assert btilde_exact(grid, 4.0) < btilde_exact(grid, 1.0)


# -- Metropolis sampler --------------------------------------------------------------

def test_metropolis_guard():
    with pytest.raises(ValueError):
        MetropolisSampler(create_grid(2, 8), 1, 1.0, 0.0)
    with pytest.raises(ValueError):
        MetropolisSampler(create_grid(1, 16), 1, 1.0, 0.0)
    with pytest.raises(ValueError):
        MetropolisSampler(create_grid(1, 8), 5, 1.0, 0.0)


def test_metropolis_tunes_acceptance():
    sampler = MetropolisSampler(create_grid(1, 8), 2, 2.0, 1.0, seed=0)
    sampler.tune()
    for _ in range(50):
        sampler.sweep()
    assert 0.1 < sampler.acceptance_rate < 0.6


def test_metropolis_free_case_matches_gff_moments():
    grid = create_grid(1, 8)
    m = 2.0
    samples = mcmc_invariant_sampler(grid, 1, m, 0.0, 3000, seed=1,
                                     thin=4, burn_sweeps=500)
    a = wick_a(grid, m)
    est = float(np.mean(samples ** 2))
    assert est == pytest.approx(a, rel=0.1)
    # fourth moment of a Gaussian: 3 a^2
    est4 = float(np.mean(samples ** 4))
    assert est4 == pytest.approx(3.0 * a ** 2, rel=0.2)


# -- variance scaling law --------------------------------------------------------------

def test_variance_scaling_patterns():
    assert variance_scaling_oracle(1, 64, "iid", samples=4000) == pytest.approx(
        1.0, abs=0.15)
    assert variance_scaling_oracle(2, 64, "overlap", samples=4000) == pytest.approx(
        4.0, abs=0.5)
    dep8 = variance_scaling_oracle(1, 8, "dependent", samples=4000)
    dep32 = variance_scaling_oracle(1, 32, "dependent", samples=4000)
    assert dep8 == pytest.approx(8.0, rel=0.15)
    assert dep32 / dep8 == pytest.approx(4.0, rel=1e-9)
    with pytest.raises(ValueError):
        variance_scaling_oracle(2, 8, "iid")
    with pytest.raises(ValueError):
        variance_scaling_oracle(1, 8, "overlap")
    with pytest.raises(ValueError):
        variance_scaling_oracle(1, 8, "nope")


# -- Picard fixed point ------------------------------------------------------------------

def test_picard_reproduces_explicit_recursion():
    grid = create_grid(1, 8)
    m, dt, T = 1.5, 0.05, 12
    rng = np.random.default_rng(2)
    x0 = rng.standard_normal((2, 8))
    forcing = rng.standard_normal((T, 2, 8))

    def coeff(n, x):
        return 0.3 * x

    path = picard_solve_x(x0, forcing, coeff, dt, m, grid)
    # explicit mild recursion with the same left-endpoint convention
    lam_tab = m + grid.k2
    decay = np.exp(-dt * lam_tab)
    gain = -np.expm1(-dt * lam_tab) / lam_tab
    ref = np.empty((T + 1, 2, 8))
    ref[0] = x0
    c = fft_coeffs(x0, grid)
    for n in range(T):
        c = decay * c + gain * fft_coeffs(0.3 * ref[n] + forcing[n], grid)
        ref[n + 1] = ifft_values(c, grid)
    np.testing.assert_allclose(path, ref, rtol=1e-9, atol=1e-11)


def test_picard_reports_nonconvergence():
    grid = create_grid(1, 8)
    forcing = np.ones((10, 1, 8))
    with pytest.raises(RuntimeError):
        picard_solve_x(np.zeros((1, 8)), forcing, lambda n, x: 50.0 * x,
                       0.05, 1.0, grid, max_iter=2)
