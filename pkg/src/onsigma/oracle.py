"""Slow, independent validators: closed forms, brute-force sums, and MCMC.

Everything here is deliberately naive (explicit loops, direct definitions) so
the main engine can be tested against implementation-independent references.
Only the Fourier transform is shared with the engine.
"""

from __future__ import annotations

import math

import numpy as np

from .torus import Grid, RealField, fft_coeffs, ifft_values
from .besov import DyadicPartition, lp_block

__all__ = [
    "ou_mode_law",
    "bruteforce_paraproduct",
    "wick_moment_oracle",
    "btilde_exact",
    "mcmc_invariant_sampler",
    "MetropolisSampler",
    "variance_scaling_oracle",
    "picard_solve_x",
]


def ou_mode_law(m: float, k2: float, t: float):
    """Stationary law of one OU mode: (variance, autocovariance at lag t)."""
    if m <= 0:
        raise ValueError(f"mass must be positive, got {m}")
    var = 1.0 / (2.0 * (m + k2))
    return var, var * math.exp(-(m + k2) * abs(t))


def bruteforce_paraproduct(f: RealField, g: RealField, part: DyadicPartition):
    """(low-high, resonant, high-low) by an explicit double loop over blocks."""
    if part.grid.M > 16:
        raise ValueError("brute-force paraproduct is guarded to M <= 16")
    grid = part.grid
    js = list(range(-1, part.j_max + 1))
    bf = {j: lp_block(f, j, part).values for j in js}
    bg = {j: lp_block(g, j, part).values for j in js}
    lo = np.zeros(grid.shape)
    res = np.zeros(grid.shape)
    hi = np.zeros(grid.shape)
    for i in js:
        for j in js:
            term = bf[i] * bg[j]
            if i <= j - 2:
                lo += term
            elif i >= j + 2:
                hi += term
            else:
                res += term
    return RealField(grid, lo), RealField(grid, res), RealField(grid, hi)


def wick_moment_oracle(C, pattern: str, a: float = None):
    """Gaussian moments of Wick powers by pairing enumeration.

    C is the stationary covariance as a function of the displacement (any
    argument accepted by the caller's convention).  Supported patterns:
      'mean2'          E[:Z^2:(x)]                       -> 0
      'square_square'  E[:Z^2:(x) :Z^2:(y)]              -> 2 C(r)^2
      'cubic_linear'   E[(Z^3 - 3 a Z)(x) Z(y)]          -> 3 C(r) (C(0) - a)
    where r = x - y.  'cubic_linear' requires the constant a.
    """
    if pattern == "mean2":
        return lambda r: 0.0
    if pattern == "square_square":
        return lambda r: 2.0 * C(r) ** 2
    if pattern == "cubic_linear":
        if a is None:
            raise ValueError("pattern 'cubic_linear' needs the constant a")
        return lambda r: 3.0 * C(r) * (C(np.zeros_like(np.asarray(r))) - a)
    raise ValueError(f"unsupported Wick moment pattern: {pattern!r}")


def btilde_exact(grid: Grid, m: float) -> float:
    """Exact lattice value of the second-order constant.

    With per-mode variance v_k, the spectral density of :Z^2: is the cyclic
    convolution 2 (v * v)(k), and the stationary pairing is its Green-weighted
    sum.  The resonant product agrees with the plain product in expectation
    here because off-diagonal block pairs have disjoint spectral support.
    """
    if m <= 0:
        raise ValueError(f"mass must be positive, got {m}")
    v = 1.0 / (2.0 * (m + grid.k2) * grid.volume)
    conv = np.fft.ifftn(np.fft.fftn(v) ** 2).real  # cyclic (v * v)(k)
    return float(np.sum(2.0 * conv / (m + grid.k2)))


# -- Metropolis sampler of the lattice Gibbs measure ------------------------------

class MetropolisSampler:
    """Single-site random-walk Metropolis for the N-component lattice measure.

    Density exp(-H) with
      H = dx^d [ sum_i <Phi_i, (m_eff - Lap) Phi_i>_sites
                 + (lambda / 2N) sum_x (sum_j Phi_j(x)^2)^2 ],
    the spectral Laplacian entering through its real-space convolution kernel.
    This is the invariant measure of the renormalized Langevin dynamics with
    site-noise variance 1/dx^d.
    """

    def __init__(self, grid: Grid, N: int, m_eff: float, lam: float, seed: int = 0):
        if grid.d != 1 or grid.M > 8 or N > 4:
            raise ValueError("oracle sampler is guarded to d=1, M <= 8, N <= 4")
        self.grid = grid
        self.N = N
        self.lam = float(lam)
        self.dx_d = grid.cell_volume
        # real-space kernel of (m_eff - Lap): row 0 of the circulant matrix
        mult = m_eff + grid.k2
        self.kernel = ifft_values(mult * fft_coeffs(_unit_site(grid), grid), grid)
        self.phi = np.zeros((N,) + grid.shape)
        self.a_phi = np.zeros_like(self.phi)  # running (m_eff - Lap) Phi_i
        self.rng = np.random.default_rng(seed)
        self.scale = 1.0
        self.accepted = 0
        self.proposed = 0

    def _delta_h(self, i: int, x: int, delta: float) -> float:
        lin = 2.0 * delta * self.a_phi[i, x] + delta ** 2 * self.kernel[0]
        s = np.sum(self.phi[:, x] ** 2)
        s_new = s + 2.0 * self.phi[i, x] * delta + delta ** 2
        quart = (self.lam / (2.0 * self.N)) * (s_new ** 2 - s ** 2)
        return self.dx_d * (lin + quart)

    def sweep(self) -> None:
        M = self.grid.M
        deltas = self.rng.normal(0.0, self.scale, size=(self.N, M))
        us = self.rng.random(size=(self.N, M))
        for i in range(self.N):
            for x in range(M):
                d = deltas[i, x]
                dh = self._delta_h(i, x, d)
                self.proposed += 1
                if dh <= 0 or us[i, x] < math.exp(-dh):
                    self.phi[i, x] += d
                    self.a_phi[i] += d * np.roll(self.kernel, x)
                    self.accepted += 1

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / max(self.proposed, 1)

    def tune(self, sweeps_per_round: int = 50, rounds: int = 20) -> None:
        """Adjust the proposal scale toward 20-50% acceptance."""
        for _ in range(rounds):
            self.accepted = self.proposed = 0
            for _ in range(sweeps_per_round):
                self.sweep()
            r = self.acceptance_rate
            if r < 0.2:
                self.scale *= 0.7
            elif r > 0.5:
                self.scale *= 1.4
            else:
                break
        self.accepted = self.proposed = 0

    def run(self, n_samples: int, thin: int = 2, burn_sweeps: int = 2000) -> np.ndarray:
        """Tune, burn in, and return site-value samples (n_samples, N, M)."""
        self.tune()
        for _ in range(burn_sweeps):
            self.sweep()
        out = np.empty((n_samples,) + self.phi.shape)
        for s in range(n_samples):
            for _ in range(thin):
                self.sweep()
            out[s] = self.phi
        return out


def _unit_site(grid: Grid) -> np.ndarray:
    e = np.zeros(grid.shape)
    e[(0,) * grid.d] = 1.0
    return e


def mcmc_invariant_sampler(grid: Grid, N: int, m_eff: float, lam: float,
                           n_samples: int, seed: int = 0, thin: int = 2,
                           burn_sweeps: int = 2000) -> np.ndarray:
    return MetropolisSampler(grid, N, m_eff, lam, seed).run(
        n_samples, thin=thin, burn_sweeps=burn_sweeps)


# -- variance scaling law ----------------------------------------------------------

def variance_scaling_oracle(l: int, N: int, pattern: str,
                            samples: int = 2000, seed: int = 0) -> float:
    """Empirical E[(N^{-l} sum M)^2] * N for synthetic mean-zero arrays M.

    Patterns:
      'iid'       l=1, M_i i.i.d. standard normal (statistic = 1 in expectation)
      'overlap'   l=2, M_{ij} = u_i + u_j: entries with all indices distinct
                  are independent, shared-index pairs correlate (statistic -> 4)
      'dependent' all entries equal one normal (negative control, grows like N)
    """
    rng = np.random.default_rng(seed)
    if pattern == "iid":
        if l != 1:
            raise ValueError("pattern 'iid' is the l=1 case")
        g = rng.standard_normal((samples, N))
        s = np.mean(g, axis=1)
    elif pattern == "overlap":
        if l != 2:
            raise ValueError("pattern 'overlap' is the l=2 case")
        u = rng.standard_normal((samples, N))
        # sum_{ij} (u_i + u_j) = 2 N sum_i u_i
        s = 2.0 * N * np.sum(u, axis=1) / N ** 2
    elif pattern == "dependent":
        g = rng.standard_normal(samples)
        s = g  # every entry equal: N^{-l} sum = g
    else:
        raise ValueError(f"unknown dependency pattern: {pattern!r}")
    return float(np.mean(s ** 2) * N)


# -- Picard fixed point for the explicit rough component ---------------------------

def picard_solve_x(x0: np.ndarray, forcing_paths, coeff_paths, dt: float, m: float,
                   grid: Grid, tol: float = 1e-12, max_iter: int = 200) -> np.ndarray:
    """Mesh fixed point of X(t) = P_t X(0) + I[ A(t) X + f(t) ](t) by iteration.

    forcing_paths: array (T, n, M...) of inhomogeneous terms f_i(t_n);
    coeff_paths: callable(step, x_slice) -> A(t_n) x for the linear-in-X part
    (evaluated with the left-endpoint convention).  Returns the path
    (T+1, n, M...).  Used as an independent check of the evolved solution.
    """
    T = forcing_paths.shape[0]
    lam_tab = m + grid.k2
    decay = np.exp(-dt * lam_tab)
    gain = -np.expm1(-dt * lam_tab) / lam_tab
    x = np.zeros((T + 1,) + x0.shape)
    x[:] = x0
    for it in range(max_iter):
        prev = x.copy()
        c = fft_coeffs(x0, grid)
        for n in range(T):
            rhs = coeff_paths(n, prev[n]) + forcing_paths[n]
            c = decay * c + gain * fft_coeffs(rhs, grid)
            x[n + 1] = ifft_values(c, grid)
        if np.max(np.abs(x - prev)) < tol:
            return x
    raise RuntimeError("Picard iteration did not converge; increase the cutoff level")
