"""Gaussian free field reference law, distance estimators, and the rate study.

The single-component marginal of the interacting system is compared against
the free field N(0, (1/2)(m - Lap)^{-1}) through its per-mode spectral
variances.  The primary distance is the exact Wasserstein-2 distance between
the diagonal Gaussian proxies in a weighted spectral geometry; a nonparametric
sliced estimator cross-checks it on Gaussian pairs.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .torus import Grid, RealField, fft_coeffs
from .besov import make_partition, besov_norm_batch
from .stochastic import NoiseStreams, ou_init_stationary, wick_a
from .dynamics import SimConfig, simulate_coupled, diag_RN1
from ._parallel import thread_map

__all__ = [
    "SpectralCovariance",
    "ObservableSample",
    "sample_gff",
    "gff_mode_variance",
    "estimate_marginal_covariance",
    "w2_sobolev_gaussian",
    "sliced_w2",
    "observable_O",
    "observable_besov",
    "convergence_study",
    "diag_RN1",
]


@dataclasses.dataclass
class SpectralCovariance:
    """Per-mode variance estimates of a translation-invariant field law."""
    grid: Grid
    var: np.ndarray       # v_k, shape grid.shape
    stderr: np.ndarray    # standard error of each v_k
    n_samples: int

    def __post_init__(self):
        if np.min(self.var) < -1e-12:
            raise ValueError("negative per-mode variance estimate")
        self.var = np.maximum(self.var, 0.0)


@dataclasses.dataclass
class ObservableSample:
    field: RealField
    N: int
    kappa: float
    besov: float


def gff_mode_variance(grid: Grid, m: float) -> np.ndarray:
    """Plain-coefficient variance of the free field: 1/(2 (m + |k|^2) vol)."""
    if m <= 0:
        raise ValueError(f"mass must be positive, got {m}")
    return 1.0 / (2.0 * (m + grid.k2) * grid.volume)


def sample_gff(grid: Grid, m: float, streams: NoiseStreams,
               component: int = 0, step: int = 0) -> RealField:
    """One draw from N(0, (1/2)(m - Lap)^{-1}); equals the stationary OU marginal."""
    return ou_init_stationary(grid, m, streams, component, step)


def estimate_marginal_covariance(samples: np.ndarray, grid: Grid,
                                 shell_average: bool = True) -> SpectralCovariance:
    """Unbiased per-mode variances from stacked field samples (n, M, ..., M).

    Translation invariance makes the coefficients uncorrelated across k; by
    symmetry of the law, modes with equal |k|^2 share a variance and are
    averaged together (shell averaging), which also enforces v_k = v_{-k}.
    """
    n = samples.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    c = fft_coeffs(samples, grid)
    sq = np.abs(c) ** 2
    var = np.mean(sq, axis=0)
    se = np.std(sq, axis=0, ddof=1) / math.sqrt(n)
    if shell_average:
        var = _shell_average(var, grid)
        se = _shell_average(se, grid) / np.sqrt(_shell_counts(grid))
    return SpectralCovariance(grid=grid, var=var, stderr=se, n_samples=n)


def _shell_average(table: np.ndarray, grid: Grid) -> np.ndarray:
    out = np.empty_like(table)
    flat_k2 = np.round(grid.k2 / (2.0 * math.pi / grid.side) ** 2).astype(np.int64)
    for shell in np.unique(flat_k2):
        mask = flat_k2 == shell
        out[mask] = np.mean(table[mask])
    return out


def _shell_counts(grid: Grid) -> np.ndarray:
    out = np.empty(grid.shape)
    flat_k2 = np.round(grid.k2 / (2.0 * math.pi / grid.side) ** 2).astype(np.int64)
    for shell in np.unique(flat_k2):
        mask = flat_k2 == shell
        out[mask] = np.sum(mask)
    return out


def w2_sobolev_gaussian(cov: SpectralCovariance, m: float,
                        kappa: float = 0.1) -> float:
    """Exact W2 between diagonal Gaussian laws in the weighted spectral geometry.

    D^2 = sum_k w_k (sqrt(v_k) - sqrt(g_k))^2 with the free-field variances g_k
    and weights w_k = (1 + |k|^2)^{-1/2 - kappa}; per mode this is the 1-D W2
    of centered Gaussians, |sigma_1 - sigma_2|.
    """
    grid = cov.grid
    g = gff_mode_variance(grid, m)
    w = (1.0 + grid.k2) ** (-0.5 - kappa)
    return float(np.sqrt(np.sum(w * (np.sqrt(cov.var) - np.sqrt(g)) ** 2)))


def sliced_w2(samples_a: np.ndarray, samples_b: np.ndarray, grid: Grid,
              n_directions: int = 32, kappa: float = 0.1, seed: int = 0) -> float:
    """Mean 1-D empirical W2 over random unit test directions.

    Directions are random fields normalized in H^{1/2 + kappa} (the dual pairing
    is then bounded on H^{-1/2 - kappa}); each pushforward pair is coupled by
    quantiles.
    """
    na, nb = samples_a.shape[0], samples_b.shape[0]
    if min(na, nb) < 50:
        raise ValueError("need at least 50 samples per side")
    rng = np.random.default_rng(seed)
    weight = (1.0 + grid.k2) ** (0.5 + kappa)
    total = 0.0
    q = np.linspace(0.0, 1.0, 201)[1:-1]  # common quantile mesh
    for _ in range(n_directions):
        f = rng.standard_normal(grid.shape)
        norm = math.sqrt(float(grid.volume
                               * np.sum(weight * np.abs(fft_coeffs(f, grid)) ** 2)))
        f /= norm
        axes = tuple(range(-grid.d, 0))
        pa = grid.cell_volume * np.sum(samples_a * f, axis=axes)
        pb = grid.cell_volume * np.sum(samples_b * f, axis=axes)
        qa = np.quantile(pa, q)
        qb = np.quantile(pb, q)
        total += math.sqrt(float(np.mean((qa - qb) ** 2)))
    return total / n_directions


# -- the O(N)-invariant observable ---------------------------------------------------

def observable_O(phi: np.ndarray, a_lat: float, grid: Grid,
                 kappa: float = 0.1, decomposition=None) -> ObservableSample:
    """O = (1/sqrt N) sum_i (Phi_i^2 - a) as a field, with its Besov norm.

    decomposition, when given, is the triple (x, y, z) of site-value stacks
    with Phi = Z + X + Y; the expanded form
      sum_i (X_i^2 + Y_i^2 + (Z_i^2 - a) + 2 X_i Y_i + 2 X_i Z_i + 2 Y_i Z_i)
    is then asserted equal to the direct one.
    """
    N = phi.shape[0]
    vals = np.sum(phi ** 2 - a_lat, axis=0) / math.sqrt(N)
    if decomposition is not None:
        x, y, z = decomposition
        expanded = np.sum(x ** 2 + y ** 2 + (z ** 2 - a_lat)
                          + 2.0 * x * y + 2.0 * x * z + 2.0 * y * z,
                          axis=0) / math.sqrt(N)
        if np.max(np.abs(expanded - vals)) > 1e-10 * max(1.0, np.max(np.abs(vals))):
            raise AssertionError("observable decomposition identity violated")
    field = RealField(grid, vals)
    return ObservableSample(field=field, N=N, kappa=kappa,
                            besov=observable_besov(field, kappa))


def observable_besov(o: RealField, kappa: float) -> float:
    """Besov norm with smoothness -1-kappa and both integrability indices 1."""
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    part = make_partition(o.grid)
    return float(besov_norm_batch(o.values, part, -1.0 - kappa, p=1.0, q=1.0))


# -- convergence-rate study -----------------------------------------------------------

def convergence_study(cfg_template: SimConfig, n_list, n_samples: int = 2000,
                      n_replicas: int = 4):
    """Distance to the free field vs component count, with a fitted rate.

    For each N, runs n_replicas independent stationary simulations, estimates
    the single-component spectral covariance by pooling all N exchangeable
    components (the law is invariant under rotations of the component index,
    so every component shares the same marginal), and evaluates the
    Gaussian-proxy W2 distance; the replica spread gives the error bar.
    Returns (rows, fit) with fit = dict(slope, stderr, intercept), or
    fit = None when the study is degenerate (lam = 0, exact coincidence).
    """
    if len(n_list) < 4 or max(n_list) < 8 * min(n_list):
        raise ValueError("need >= 4 component counts spanning at least 8x")
    rows = []
    for n in n_list:

        def one_replica(rep, n=n):
            cfg = dataclasses.replace(cfg_template, N=n,
                                      seed=cfg_template.seed + 1000 * rep + n)
            samples, _ = simulate_coupled(cfg, n_samples=n_samples // n_replicas)
            grid = cfg.make_grid()
            pooled = samples.reshape((-1,) + grid.shape)
            cov = estimate_marginal_covariance(pooled, grid)
            dist = w2_sobolev_gaussian(cov, cfg.m, cfg.kappa)
            a = wick_a(grid, cfg.m)
            bs = [observable_O(s, a, grid, cfg.kappa).besov for s in
                  samples[:: max(1, len(samples) // 50)]]
            return dist, float(np.mean(bs))

        results = thread_map(one_replica, range(n_replicas))
        dists = [r[0] for r in results]
        besovs = [r[1] for r in results]
        d = float(np.mean(dists))
        d_se = float(np.std(dists, ddof=1) / math.sqrt(n_replicas))
        rows.append({"N": n, "distance": d, "stderr": d_se,
                     "besov_obs_mean": float(np.mean(besovs)),
                     "besov_obs_stderr": float(np.std(besovs, ddof=1)
                                               / math.sqrt(n_replicas)),
                     "samples": n_samples})
    if cfg_template.lam == 0.0:
        return rows, None
    logn = np.log([r["N"] for r in rows])
    logd = np.log([r["distance"] for r in rows])
    wts = np.array([(r["distance"] / max(r["stderr"], 1e-12)) ** 2 for r in rows])
    slope, intercept, se = _weighted_line_fit(logn, logd, wts)
    return rows, {"slope": slope, "stderr": se, "intercept": intercept}


def _weighted_line_fit(x: np.ndarray, y: np.ndarray, w: np.ndarray):
    """Weighted least squares y ~ a x + b; returns (a, b, stderr of a)."""
    sw = np.sum(w)
    xm = np.sum(w * x) / sw
    ym = np.sum(w * y) / sw
    sxx = np.sum(w * (x - xm) ** 2)
    slope = np.sum(w * (x - xm) * (y - ym)) / sxx
    intercept = ym - slope * xm
    resid = y - slope * x - intercept
    dof = max(len(x) - 2, 1)
    se = math.sqrt(float(np.sum(w * resid ** 2) / dof / sxx))
    return float(slope), float(intercept), se
