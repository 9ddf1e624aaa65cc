"""Coupled time integration, cutoff selection, and the energy audit."""

import dataclasses
import math

import numpy as np
import pytest

from onsigma.torus import ifft_values
from onsigma.dynamics import (
    SimConfig,
    CoupledSimulator,
    effective_mass,
    simulate_coupled,
    make_refined_noise,
    choose_L,
    solve_X,
    compute_P_phi,
    energy_audit,
    diag_RN1,
)
from onsigma.oracle import picard_solve_x


def small_cfg(**kw):
    base = dict(d=1, M=8, N=2, m=1.0, lam=0.0, dt=0.05, t_burn=0.5,
                t_sample=0.5, seed=3, btilde_samples=16)
    base.update(kw)
    return SimConfig(**base)


# -- configuration ----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(m=0.0)
    with pytest.raises(ValueError):
        SimConfig(lam=-1.0)
    with pytest.raises(ValueError):
        SimConfig(N=0)
    with pytest.raises(ValueError):
        SimConfig(sample_stride=0)


def test_config_burn_in_default_scales_with_mass():
    assert SimConfig(m=2.0).t_burn == pytest.approx(5.0)
    assert SimConfig(m=2.0, t_burn=1.0).t_burn == 1.0


def test_effective_mass_formula():
    cfg = small_cfg(N=4, m=2.0, lam=0.5)
    a, bt = 0.3, 0.1
    expected = 2.0 - (6 / 4) * 0.5 * a + 3.0 * (6 / 16) * 0.25 * bt
    assert effective_mass(cfg, a, bt) == pytest.approx(expected, rel=1e-12)


# -- coupling and noise sharing ------------------------------------------------------

def test_zero_coupling_reproduces_linear_field_bitwise():
    sim = CoupledSimulator(small_cfg())
    for _ in range(20):
        sim.step()
    np.testing.assert_array_equal(sim.phi_coeffs, sim.trees.z_coeffs)


def test_blow_up_raises_with_location_info():
    cfg = small_cfg(lam=1.0)
    sim = CoupledSimulator(cfg)
    sim.phi_coeffs[:] = 1e200  # cubic force overflows on the next step
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(FloatingPointError, match="blow-up"):
            for _ in range(5):
                sim.step()


def test_refined_noise_reproduces_coarse_path():
    ratio = 4
    fine = small_cfg(dt=0.01)
    coarse = dataclasses.replace(fine, dt=0.01 * ratio)
    sim_f = CoupledSimulator(fine, burn_in=False)
    sim_c = CoupledSimulator(coarse, noise_fn=make_refined_noise(fine, ratio),
                             burn_in=False)
    for _ in range(5):
        sim_c.step()
        for _ in range(ratio):
            sim_f.step()
    np.testing.assert_allclose(sim_c.trees.z_coeffs, sim_f.trees.z_coeffs,
                               rtol=1e-12, atol=1e-14)


def test_simulate_coupled_shapes_and_rows():
    cfg = small_cfg(lam=0.4, N=3)
    samples, rows = simulate_coupled(cfg, n_samples=6)
    assert samples.shape == (6, 3, 8)
    ts = [r["t"] for r in rows]
    assert ts == sorted(ts)
    assert all(r["coupling_l2sq"] >= 0 for r in rows)
    # coupling distance vanishes identically at lam = 0
    _, rows0 = simulate_coupled(small_cfg(), n_samples=3)
    assert all(r["coupling_l2sq"] == 0.0 for r in rows0)


# -- cutoff level and the rough component ----------------------------------------------

def test_choose_l_zero_coupling_and_monotonicity():
    trees = CoupledSimulator(small_cfg(lam=0.5)).trees
    assert choose_L(trees, 0.0, 2) == 0
    l_small = choose_L(trees, 0.5, 2)
    l_big = choose_L(trees, 8.0, 2)
    assert -1 <= l_small <= l_big <= trees.part.j_max


def test_solve_x_matches_picard_fixed_point():
    cfg = small_cfg(lam=0.5, t_burn=0.5)
    n_steps = 8
    path, z_path, sim = solve_X(cfg, L=2, n_steps=n_steps)
    assert path.shape == (n_steps + 1, cfg.N, cfg.M)
    a = sim.trees.a_lat
    forcing = np.empty_like(z_path)
    for n in range(n_steps):
        z = z_path[n]
        s2 = np.sum(z ** 2, axis=0)
        forcing[n] = -(cfg.lam / cfg.N) * (z * s2 - (cfg.N + 2) * a * z)

    def coeff(n, x):
        return sim._x_linear(x, z_path[n])

    ref = picard_solve_x(path[0], forcing, coeff, cfg.dt, cfg.m, sim.grid)
    np.testing.assert_allclose(path, ref, rtol=1e-9, atol=1e-11)


def test_solve_x_contraction_guard_fires_for_tiny_cutoff():
    cfg = small_cfg(M=32, lam=600.0, N=2, t_burn=0.5)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(RuntimeError, match="contraction"):
            solve_X(cfg, L=-1, n_steps=6)


def test_compute_p_phi_zero_coupling_identity():
    sim = CoupledSimulator(small_cfg())
    y = np.random.default_rng(0).standard_normal((2, 8))
    p, phi = compute_P_phi(y, sim.trees, 0.0, 2)
    assert not np.any(p)
    np.testing.assert_array_equal(phi, y)


def test_diag_rn1_lower_bound():
    sim = CoupledSimulator(small_cfg(lam=0.5))
    assert diag_RN1(sim.trees) > 1.0


# -- energy audit --------------------------------------------------------------------

def test_energy_audit_requires_evolved_x():
    sim = CoupledSimulator(small_cfg(lam=0.5))
    with pytest.raises(ValueError, match="evolve_x"):
        energy_audit(sim, 2)


def test_energy_audit_rearranged_residual_is_algebraic():
    cfg = small_cfg(lam=0.5, N=2, evolve_x=True, t_burn=0.5)
    sim = CoupledSimulator(cfg)
    rows = energy_audit(sim, 5)
    for r in rows:
        scale = max(abs(r["m_phi_sq"]), abs(r["theta"]), abs(r["xi"]), 1.0)
        assert abs(r["residual_rearranged"] - r["residual_raw"]) < 1e-10 * scale
        assert r["energy"] >= 0.0
        assert r["quartic"] >= 0.0


def test_energy_audit_raw_residual_shrinks_with_dt():
    def raw_mag(dt):
        cfg = small_cfg(lam=0.5, N=2, evolve_x=True, dt=dt, t_burn=0.4, seed=5)
        sim = CoupledSimulator(cfg)
        rows = energy_audit(sim, max(2, int(round(0.2 / dt))))
        return float(np.mean([abs(r["residual_raw"]) for r in rows]))

    assert raw_mag(0.02) < raw_mag(0.08)
