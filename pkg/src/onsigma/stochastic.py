"""Noise streams, the stationary linear field, Wick renormalization, and trees.

Conventions
-----------
The linear field Z solves (d/dt + m - Lap) Z = xi with space-time white noise
xi.  Per plain Fourier coefficient (values = sum_k c_k e^{ikx}) the stationary
variance is

    v_k = 1 / (2 (m + |k|^2) vol),   vol = side^d,

which in the orthonormal spectral convention is the usual 1/(2(m+|k|^2)).
All samplers draw i.i.d. standard normals at sites and color them spectrally,
so Hermitian symmetry is automatic.

Noise is counter-based (Philox): a draw is a pure function of
(master_seed, component key, lane, step), which gives reproducibility,
component independence, and bit-identical checkpoint resume for free.
"""

from __future__ import annotations

import math

import numpy as np

from .torus import Grid, RealField, Spectrum, fft_coeffs, ifft_values
from .besov import (
    DyadicPartition,
    make_partition,
    block_decompose_batch,
    _para_from_blocks,
    sobolev_weight_table,
    sobolev_norm_batch,
    time_integrator_weights,
)

__all__ = [
    "NoiseStreams",
    "make_streams",
    "white_increment",
    "ou_init_stationary",
    "ou_step",
    "wick_a",
    "wick_btilde",
    "wick2",
    "wick3",
    "tree30_step",
    "TreeSet",
    "make_trees",
    "tree22",
    "tree31",
    "tree32",
    "q_stats",
]

# lanes separate independent draw purposes within one (component, step) cell
LANE_INIT = 0
LANE_OU = 1
LANE_AUX = 2


class NoiseStreams:
    """Independent reproducible Gaussian streams, one per field component.

    Draws are indexed, not sequential: normals(i, step, shape) depends only on
    (master_seed, key of component i, lane, step).  Distinct components use
    distinct Philox keys and are therefore independent; permuting the component
    keys permutes the streams exactly.
    """

    def __init__(self, master_seed: int, N: int, component_keys=None):
        if N < 1:
            raise ValueError(f"component count must be >= 1, got {N}")
        self.master_seed = int(master_seed) & (2 ** 64 - 1)
        self.N = int(N)
        if component_keys is None:
            component_keys = list(range(N))
        if len(component_keys) != N:
            raise ValueError("component_keys must have one entry per component")
        self.component_keys = [int(k) for k in component_keys]

    def _gen(self, component: int, step: int, lane: int) -> np.random.Generator:
        if not 0 <= component < self.N:
            raise ValueError(f"component {component} outside [0, {self.N})")
        if step < 0:
            raise ValueError(f"step index must be >= 0, got {step}")
        key = np.array([self.master_seed, self.component_keys[component]],
                       dtype=np.uint64)
        counter = np.array([0, 0, lane, step], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(counter=counter, key=key))

    def normals(self, component: int, step: int, shape, lane: int = LANE_OU) -> np.ndarray:
        """Standard normals for one component at one step index."""
        return self._gen(component, step, lane).standard_normal(shape)

    def normals_all(self, step: int, shape, lane: int = LANE_OU) -> np.ndarray:
        """Stacked per-component draws, shape (N,) + shape."""
        out = np.empty((self.N,) + tuple(shape))
        for i in range(self.N):
            out[i] = self.normals(i, step, shape, lane)
        return out


def make_streams(seed: int, N: int, component_keys=None) -> NoiseStreams:
    return NoiseStreams(seed, N, component_keys)


# -- white noise and the OU field ----------------------------------------------

def white_increment(grid: Grid, dt: float, streams: NoiseStreams,
                    component: int = 0, step: int = 0) -> Spectrum:
    """Time-integrated space-time white noise over one step.

    The induced site field has variance dt/dx^d per site, sites independent.
    """
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    w = streams.normals(component, step, grid.shape, lane=LANE_AUX)
    vals = w * math.sqrt(dt / grid.cell_volume)
    return Spectrum(grid, fft_coeffs(vals, grid))


def mode_variance_table(grid: Grid, m: float) -> np.ndarray:
    """Stationary variance v_k of each plain Fourier coefficient of Z."""
    if m <= 0:
        raise ValueError(f"mass must be positive, got {m}")
    return 1.0 / (2.0 * (m + grid.k2) * grid.volume)


def color_normals(w: np.ndarray, var_table: np.ndarray, grid: Grid) -> np.ndarray:
    """Spectral coefficients of a centered Gaussian field from site normals.

    E|c_k|^2 = var_table[k]; Hermitian symmetry is inherited from the real w.
    """
    return np.sqrt(var_table * grid.n_sites) * fft_coeffs(w, grid)


def ou_stationary_coeffs(grid: Grid, m: float, w: np.ndarray) -> np.ndarray:
    return color_normals(w, mode_variance_table(grid, m), grid)


def ou_update_tables(grid: Grid, m: float, dt: float):
    """(decay, noise scale) for the exact per-mode OU update.

    z_k <- decay_k z_k + eta_k with Var(eta_k) = v_k (1 - decay_k^2); the
    update preserves the stationary law exactly for every dt.
    """
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    v = mode_variance_table(grid, m)
    decay = np.exp(-dt * (m + grid.k2))
    return decay, np.sqrt(-np.expm1(-2.0 * dt * (m + grid.k2)) * v * grid.n_sites)


def ou_init_stationary(grid: Grid, m: float, streams: NoiseStreams,
                       component: int = 0, step: int = 0) -> RealField:
    w = streams.normals(component, step, grid.shape, lane=LANE_INIT)
    return RealField(grid, ifft_values(ou_stationary_coeffs(grid, m, w), grid))


def ou_step(z: RealField, dt: float, m: float, streams: NoiseStreams,
            component: int = 0, step: int = 0) -> RealField:
    decay, scale = ou_update_tables(z.grid, m, dt)
    w = streams.normals(component, step, z.grid.shape, lane=LANE_OU)
    c = decay * fft_coeffs(z.values, z.grid) + scale * fft_coeffs(w, z.grid)
    return RealField(z.grid, ifft_values(c, z.grid))


# -- Wick constants and powers --------------------------------------------------

def wick_a(grid: Grid, m: float) -> float:
    """First renormalization constant a = E[Z(x)^2] on the lattice."""
    if m <= 0:
        raise ValueError(f"mass must be positive, got {m}")
    return float(np.sum(1.0 / (2.0 * (m + grid.k2))) / grid.volume)


def wick2_values(zi: np.ndarray, zj: np.ndarray, a: float, diagonal: bool) -> np.ndarray:
    return zi * zj - a if diagonal else zi * zj


def wick2(z_i: RealField, z_j: RealField, a: float, diagonal: bool) -> RealField:
    if z_i.grid != z_j.grid:
        raise ValueError("fields live on different grids")
    return RealField(z_i.grid, wick2_values(z_i.values, z_j.values, a, diagonal))


def wick3_values(zi: np.ndarray, zj: np.ndarray, a: float, diagonal: bool) -> np.ndarray:
    c = 3.0 if diagonal else 1.0
    return zi * zj ** 2 - c * a * zi


def wick3(z_i: RealField, z_j: RealField, a: float, diagonal: bool = None) -> RealField:
    """Renormalized cubic Z_i Z_j^2 - c a Z_i, c = 3 when i = j, else 1."""
    if z_i.grid != z_j.grid:
        raise ValueError("fields live on different grids")
    if diagonal is None:
        diagonal = z_i is z_j
    return RealField(z_i.grid, wick3_values(z_i.values, z_j.values, a, diagonal))


def wick_btilde(grid: Grid, m: float, samples: int = 512, seed: int = 0):
    """Second-order constant E[(m-Lap)^{-1}(:Z^2:) resonant :Z^2:] by Monte Carlo.

    Returns (estimate, standard error).  Deterministic under a fixed seed.
    """
    if m <= 0:
        raise ValueError(f"mass must be positive, got {m}")
    if samples < 1:
        raise ValueError(f"sample count must be >= 1, got {samples}")
    streams = NoiseStreams(seed, 1)
    part = make_partition(grid)
    a = wick_a(grid, m)
    gm = 1.0 / (m + grid.k2)
    vals = np.empty(samples)
    for s in range(samples):
        w = streams.normals(0, s, grid.shape, lane=LANE_AUX)
        z = ifft_values(ou_stationary_coeffs(grid, m, w), grid)
        f = z * z - a
        g = ifft_values(gm * fft_coeffs(f, grid), grid)
        bf = block_decompose_batch(g, part)
        bg = block_decompose_batch(f, part)
        _, res, _ = _para_from_blocks(bf, bg, part)
        vals[s] = np.mean(res)  # space average: the pairing is stationary
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(samples)) if samples > 1 else math.inf
    return est, se


# -- trees ----------------------------------------------------------------------

def tree30_step(state: np.ndarray, source: np.ndarray, dt: float, m: float,
                grid: Grid) -> np.ndarray:
    """One exponential-filter step of the stationary mild integral.

    state and source are spectral coefficient arrays (leading batch axes ok);
    a time-constant source s has fixed point (m - Lap)^{-1} s exactly.
    """
    decay, gain = time_integrator_weights(grid, dt, m)
    return decay * state + gain * source


def burn_in_steps(m: float, dt: float) -> int:
    """Steps needed for the mild-integral response to reach stationarity.

    The transient decays like exp(-m t); 10/m time units make it < 5e-5.
    """
    return max(1, math.ceil(10.0 / (m * dt)))


def _c1(i: int, j: int, k: int, l: int) -> float:
    if i == j == k == l:
        return 1.0
    if (i == k != j == l) or (i == l != j == k):
        return 0.5
    return 0.0


def _c2(i: int, j: int, k: int) -> float:
    if i == j == k:
        return 3.0
    if j == k != i:
        return 1.0
    return 0.0


class TreeSet:
    """The linear field and its renormalized polynomial/integrated functionals.

    Holds spectral state for the N-component stationary field Z and the
    aggregated integrated cubics B_i = sum_j tree30_{ijj}; pairwise tree30
    fields are tracked on demand (register before burn-in).  All N^2 objects
    built from Z alone (wick pairs, tree22/31/32) are computed on the fly.
    """

    def __init__(self, grid: Grid, m: float, N: int, streams: NoiseStreams,
                 dt: float, btilde: float = None, btilde_samples: int = 512):
        if N < 1:
            raise ValueError(f"component count must be >= 1, got {N}")
        if streams.N < N:
            raise ValueError("noise streams provide fewer components than requested")
        self.grid = grid
        self.m = float(m)
        self.N = int(N)
        self.dt = float(dt)
        self.streams = streams
        self.part = make_partition(grid)
        self.a_lat = wick_a(grid, m)
        if btilde is None:
            btilde, btilde_se = wick_btilde(grid, m, btilde_samples,
                                            seed=streams.master_seed ^ 0x5EED)
        else:
            btilde_se = 0.0
        self.btilde = float(btilde)
        self.btilde_se = float(btilde_se)
        self.step_index = 0
        # stationary initial data
        self.z_coeffs = np.empty((N,) + grid.shape, dtype=np.complex128)
        for i in range(N):
            w = streams.normals(i, 0, grid.shape, lane=LANE_INIT)
            self.z_coeffs[i] = ou_stationary_coeffs(grid, m, w)
        self.b_coeffs = np.zeros((N,) + grid.shape, dtype=np.complex128)
        self._pairs: dict[tuple[int, int], np.ndarray] = {}
        self._decay, self._noise_scale = ou_update_tables(grid, m, dt)
        self._i_decay, self._i_gain = time_integrator_weights(grid, dt, m)

    # -- field access ----------------------------------------------------------

    def z_values(self) -> np.ndarray:
        """Current Z fields, shape (N, M, ..., M)."""
        return ifft_values(self.z_coeffs, self.grid)

    def b_values(self) -> np.ndarray:
        """Aggregates B_i = sum_j tree30_{ijj}, shape (N, M, ..., M)."""
        return ifft_values(self.b_coeffs, self.grid)

    def z2(self, i: int, j: int) -> np.ndarray:
        self._check_index(i), self._check_index(j)
        z = self.z_values()
        return wick2_values(z[i], z[j], self.a_lat, i == j)

    def z3(self, i: int, j: int) -> np.ndarray:
        self._check_index(i), self._check_index(j)
        z = self.z_values()
        return wick3_values(z[i], z[j], self.a_lat, i == j)

    def track_pair(self, i: int, j: int) -> None:
        """Register the single tree30_{ijj} recursion state (before burn-in)."""
        self._check_index(i), self._check_index(j)
        self._pairs.setdefault((i, j), np.zeros(self.grid.shape, dtype=np.complex128))

    def tree30_pair(self, i: int, j: int) -> np.ndarray:
        if (i, j) not in self._pairs:
            raise KeyError(f"pair ({i}, {j}) was not tracked; call track_pair first")
        return ifft_values(self._pairs[(i, j)], self.grid)

    def _check_index(self, i: int) -> None:
        if not 0 <= i < self.N:
            raise IndexError(f"component index {i} outside [0, {self.N})")

    # -- evolution ---------------------------------------------------------------

    def z3_source_all(self) -> np.ndarray:
        """sum_j tree3 sources: Z_i * sum_j Z_j^2 - (N+2) a Z_i, shape (N, ...)."""
        z = self.z_values()
        s2 = np.sum(z ** 2, axis=0)
        return z * s2 - (self.N + 2) * self.a_lat * z

    def advance(self, eta_coeffs: np.ndarray = None) -> np.ndarray:
        """One exact OU step of Z and one mild-integral step of every tree state.

        Tree sources are evaluated at the pre-step Z (left endpoint).  If
        eta_coeffs is given it is used as the noise (dynamics shares noise
        between the interacting field and Z); otherwise it is drawn here.
        Returns the noise coefficients used.
        """
        src = fft_coeffs(self.z3_source_all(), self.grid)
        self.b_coeffs = self._i_decay * self.b_coeffs + self._i_gain * src
        if self._pairs:
            z = self.z_values()
            for (i, j), state in self._pairs.items():
                sv = wick3_values(z[i], z[j], self.a_lat, i == j)
                self._pairs[(i, j)] = (self._i_decay * state
                                       + self._i_gain * fft_coeffs(sv, self.grid))
        if eta_coeffs is None:
            w = self.streams.normals_all(self.step_index + 1, self.grid.shape,
                                         lane=LANE_OU)
            eta_coeffs = self._noise_scale * fft_coeffs(w, self.grid)
        self.z_coeffs = self._decay * self.z_coeffs + eta_coeffs
        self.step_index += 1
        return eta_coeffs

    def burn_in(self, n_steps: int = None) -> None:
        if n_steps is None:
            n_steps = burn_in_steps(self.m, self.dt)
        for _ in range(n_steps):
            self.advance()

    # -- composite trees ---------------------------------------------------------

    def _resonant(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        bf = block_decompose_batch(f, self.part)
        bg = block_decompose_batch(g, self.part)
        _, res, _ = _para_from_blocks(bf, bg, self.part)
        return res

    def tree22(self, i: int, j: int, k: int, l: int) -> np.ndarray:
        """(m-Lap)^{-1}(wick2_{ij}) resonant wick2_{kl} - c1 btilde."""
        for idx in (i, j, k, l):
            self._check_index(idx)
        gm = 1.0 / (self.m + self.grid.k2)
        f = ifft_values(gm * fft_coeffs(self.z2(i, j), self.grid), self.grid)
        return self._resonant(f, self.z2(k, l)) - _c1(i, j, k, l) * self.btilde

    def tree31(self, i: int, j: int, k: int) -> np.ndarray:
        """tree30_{ijj} resonant Z_k (pair (i,j) must be tracked)."""
        self._check_index(k)
        return self._resonant(self.tree30_pair(i, j), self.z_values()[k])

    def tree32(self, i: int, j: int, k: int) -> np.ndarray:
        """tree30_{ijj} resonant wick2_{ik} - c2 btilde Z_j."""
        self._check_index(k)
        t30 = self.tree30_pair(i, j)
        return (self._resonant(t30, self.z2(i, k))
                - _c2(i, j, k) * self.btilde * self.z_values()[j])

    def tree32_aggregate(self, i: int, j: int) -> np.ndarray:
        """sum_l tree32_{ljj, lj -> ...}: B_j resonant wick2_{ij} - c2 btilde Z_i.

        The aggregate entering the third cancellation statistic; the constant
        is c2 = 3 when i = j (the all-equal term contributes) and 1 otherwise.
        """
        self._check_index(i), self._check_index(j)
        c2 = 3.0 if i == j else 1.0
        return (self._resonant(self.b_values()[j], self.z2(i, j))
                - c2 * self.btilde * self.z_values()[i])


def make_trees(grid: Grid, m: float, N: int, seed: int, dt: float,
               component_keys=None, **kw) -> TreeSet:
    streams = make_streams(seed, N, component_keys)
    return TreeSet(grid, m, N, streams, dt, **kw)


def tree22(i: int, j: int, k: int, l: int, trees: TreeSet) -> RealField:
    return RealField(trees.grid, trees.tree22(i, j, k, l))


def tree31(i: int, j: int, k: int, trees: TreeSet) -> RealField:
    return RealField(trees.grid, trees.tree31(i, j, k))


def tree32(i: int, j: int, k: int, trees: TreeSet) -> RealField:
    return RealField(trees.grid, trees.tree32(i, j, k))


# -- cancellation statistics -----------------------------------------------------

def _time_sobolev_sq(l2_path: np.ndarray, diff_sq, dt: float, alpha: float) -> float:
    """Squared fractional time-Sobolev norm on a uniform mesh.

    l2_path: spatial norms ||f(t_n)||, diff_sq(n, p) -> ||f(t_n) - f(t_p)||^2.
    """
    T = l2_path.shape[0]
    total = float(np.sum(l2_path ** 2) * dt)
    for n in range(T):
        for p in range(n):
            w = dt * dt / ((n - p) * dt) ** (1.0 + 2.0 * alpha)
            total += 2.0 * w * diff_sq(n, p)
    return total


def q_stats(trees: TreeSet, n_steps: int, kappa: float = 0.1):
    """Advance the trees over a window and return (Q0, Q1, Q2).

    Q0: (1/N^2) sum_i squared L^2-in-time H^{1/2-2k} norm of B_i.
    Q1: same with the fractional (1/4-2k)-in-time, L^2-in-space norm.
    Q2: (1/N^2) sum_i ( sum_j (1/N) || B_j res wick2_{ij} - c2 btilde Z_i ||
        in L^2-in-time H^{-1/2-2k} )^2, streaming over j.
    """
    if n_steps < 1:
        raise ValueError(f"window must contain at least one step, got {n_steps}")
    grid, N, dt = trees.grid, trees.N, trees.dt
    w_hi = sobolev_weight_table(trees.part, 0.5 - 2.0 * kappa)
    w_lo = sobolev_weight_table(trees.part, -0.5 - 2.0 * kappa)
    b_path = np.empty((n_steps, N) + grid.shape)
    q2_sq_acc = np.zeros((N, N))  # squared space norms integrated over time
    for t in range(n_steps):
        trees.advance()
        b = trees.b_values()
        b_path[t] = b
        z = trees.z_values()
        bb = block_decompose_batch(b, trees.part)
        for i in range(N):
            z2_row = z[i] * z  # (N, ...) products Z_i Z_j
            z2_row[i] -= trees.a_lat
            bz = block_decompose_batch(z2_row, trees.part)
            _, res, _ = _para_from_blocks(bb, bz, trees.part)
            c2 = np.where(np.arange(N) == i, 3.0, 1.0).reshape((-1,) + (1,) * grid.d)
            fields = res - c2 * trees.btilde * z[i]
            q2_sq_acc[i] += sobolev_norm_batch(fields, grid, w_lo) ** 2 * dt
    b_coeff_path = fft_coeffs(b_path, grid)
    # Q0: H^{1/2-2k} norms along the path
    hi = np.sqrt(np.sum(w_hi * np.abs(b_coeff_path) ** 2,
                        axis=tuple(range(-grid.d, 0))))  # (T, N)
    q0 = float(np.sum(hi ** 2) * dt / N ** 2)
    # Q1: fractional time regularity of t -> B_i(t) in L^2
    alpha = 0.25 - 2.0 * kappa
    l2 = np.sqrt(grid.volume * np.sum(np.abs(b_coeff_path) ** 2,
                                      axis=tuple(range(-grid.d, 0))))  # (T, N)
    q1 = 0.0
    for i in range(N):
        ci = b_coeff_path[:, i]

        def diff_sq(n, p, ci=ci):
            return float(grid.volume * np.sum(np.abs(ci[n] - ci[p]) ** 2))

        q1 += _time_sobolev_sq(l2[:, i], diff_sq, dt, alpha)
    q1 = float(q1 / N ** 2)
    q2 = float(np.sum(np.sum(np.sqrt(q2_sq_acc), axis=1) ** 2) / (N ** 4))
    return q0, q1, q2
