"""Littlewood-Paley blocks, Besov norms, Bony paraproducts, and commutators.

The dyadic partition of unity is built from smooth compactly supported radial
bumps evaluated on the integer frequency lattice and renormalized so that the
blocks sum to one exactly; reconstruction identities (sum of blocks, paraproduct
decomposition) then hold to machine precision and are used as test targets.

Block index j runs from -1 (low-frequency ball) to j_max = ceil(log2(M/2));
block j >= 0 is supported in the annulus 2^j < |k| < (8/3) 2^j.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .torus import (
    Grid,
    RealField,
    fft_coeffs,
    ifft_values,
    green_multiplier,
    inner,
    norm_lp_batch,
)

__all__ = [
    "DyadicPartition",
    "BesovParams",
    "make_partition",
    "lp_block",
    "block_decompose",
    "besov_norm",
    "para_lt",
    "resonant",
    "para_gt",
    "localize_high",
    "localize_low",
    "comm_D",
    "comm_Ctilde",
    "comm_C",
    "comm_Cbar",
    "holder_norm",
    "sobolev_weight_table",
    "sobolev_norm",
    "colored_field",
    "operator_constants",
]


def _glue(t: np.ndarray) -> np.ndarray:
    """Smooth transition: 0 for t<=0, 1 for t>=1."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        a = np.where(t > 0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
        b = np.where(t < 1, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
    return a / (a + b)


def _chi(r: np.ndarray) -> np.ndarray:
    """Low-frequency bump: 1 for r <= 1, 0 for r >= 4/3."""
    return 1.0 - _glue(3.0 * (np.asarray(r, dtype=np.float64) - 1.0))


def _phi(r: np.ndarray) -> np.ndarray:
    """Annular bump supported in 1 < r < 8/3."""
    return _chi(np.asarray(r) / 2.0) - _chi(r)


@dataclasses.dataclass(frozen=True)
class BesovParams:
    alpha: float
    p: float = math.inf
    q: float = math.inf

    def __post_init__(self):
        if self.p < 1 or self.q < 1:
            raise ValueError("Besov integrability indices must satisfy p, q >= 1")


@dataclasses.dataclass(frozen=True)
class DyadicPartition:
    """Per-block real multiplier tables rho_j(k), j = -1 .. j_max, summing to 1."""

    grid: Grid
    j_max: int
    tables: np.ndarray  # shape (j_max + 2, M, ..., M)

    @property
    def j_min(self) -> int:
        return -1

    @property
    def n_blocks(self) -> int:
        return self.j_max + 2

    def block_index(self, j: int) -> int:
        if j < -1 or j > self.j_max:
            raise ValueError(f"block index {j} outside [-1, {self.j_max}]")
        return j + 1

    def js(self) -> np.ndarray:
        return np.arange(-1, self.j_max + 1)


def make_partition(grid: Grid) -> DyadicPartition:
    j_max = max(0, math.ceil(math.log2(grid.M / 2)))
    scale = 2.0 * math.pi / grid.side
    knorm = np.sqrt(grid.k2) / scale  # integer frequency magnitude
    tables = np.empty((j_max + 2,) + grid.shape)
    tables[0] = _chi(knorm)
    for j in range(0, j_max + 1):
        tables[j + 1] = _phi(knorm / 2.0 ** j)
    total = tables.sum(axis=0)
    if np.min(total) < 0.5:
        raise RuntimeError("dyadic partition failed to cover the frequency grid")
    tables /= total
    return DyadicPartition(grid=grid, j_max=j_max, tables=tables)


# -- blocks -------------------------------------------------------------------

def block_decompose_batch(values: np.ndarray, part: DyadicPartition) -> np.ndarray:
    """All Littlewood-Paley blocks of stacked fields.

    Input shape (..., M^d grid axes); output has the block axis inserted before
    the grid axes: (..., n_blocks, M, ..., M).
    """
    grid = part.grid
    c = fft_coeffs(values, grid)
    c = np.expand_dims(c, axis=-grid.d - 1)
    return ifft_values(c * part.tables, grid)


def lp_block(f: RealField, j: int, part: DyadicPartition) -> RealField:
    """Single block Delta_j f."""
    idx = part.block_index(j)
    c = fft_coeffs(f.values, part.grid)
    return RealField(f.grid, ifft_values(part.tables[idx] * c, part.grid))


def block_decompose(f: RealField, part: DyadicPartition) -> np.ndarray:
    return block_decompose_batch(f.values, part)


# -- norms --------------------------------------------------------------------

def besov_norm_batch(values: np.ndarray, part: DyadicPartition,
                     alpha: float, p: float = math.inf, q: float = math.inf) -> np.ndarray:
    """Truncated-grid Besov norm of stacked fields (batch axes lead)."""
    grid = part.grid
    blocks = block_decompose_batch(values, part)
    lp = norm_lp_batch(blocks, grid, p)  # (..., n_blocks)
    w = 2.0 ** (alpha * part.js())
    if q == math.inf:
        return np.max(w * lp, axis=-1)
    return np.sum((w * lp) ** q, axis=-1) ** (1.0 / q)


def besov_norm(f: RealField, bp: BesovParams, part: DyadicPartition) -> float:
    return float(besov_norm_batch(f.values, part, bp.alpha, bp.p, bp.q))


def holder_norm(f: RealField, alpha: float, part: DyadicPartition) -> float:
    """Holder-Besov norm, i.e. Besov with p = q = infinity."""
    return float(besov_norm_batch(f.values, part, alpha))


def sobolev_weight_table(part: DyadicPartition, s: float) -> np.ndarray:
    """Spectral weight table W_s(k) with ||f||_{H^s}^2 = sum_k W_s(k) |c_k|^2.

    Matches the blockwise definition (Besov with p = q = 2) exactly.
    """
    js = part.js().reshape((-1,) + (1,) * part.grid.d)
    return part.grid.volume * np.sum(4.0 ** (s * js) * part.tables ** 2, axis=0)


def sobolev_norm_batch(values: np.ndarray, grid: Grid, weight: np.ndarray) -> np.ndarray:
    c = fft_coeffs(values, grid)
    axes = tuple(range(-grid.d, 0))
    return np.sqrt(np.sum(weight * np.abs(c) ** 2, axis=axes))


def sobolev_norm(f: RealField, s: float, part: DyadicPartition) -> float:
    return float(sobolev_norm_batch(f.values, part.grid, sobolev_weight_table(part, s)))


# -- paraproducts -------------------------------------------------------------

def _check_pair(f: RealField, g: RealField, part: DyadicPartition) -> None:
    if f.grid != g.grid or f.grid != part.grid:
        raise ValueError("fields and partition live on different grids")


def para_decompose_batch(fv: np.ndarray, gv: np.ndarray, part: DyadicPartition):
    """Return (f<g, f o g, f>g) for stacked fields, exact index decomposition."""
    bf = block_decompose_batch(fv, part)
    bg = block_decompose_batch(gv, part)
    return _para_from_blocks(bf, bg, part)


def _para_from_blocks(bf: np.ndarray, bg: np.ndarray, part: DyadicPartition):
    nb = part.n_blocks
    ax = -part.grid.d - 1  # block axis
    bf = np.moveaxis(bf, ax, 0)
    bg = np.moveaxis(bg, ax, 0)
    cum_f = np.cumsum(bf, axis=0)
    cum_g = np.cumsum(bg, axis=0)
    lo = np.zeros(np.broadcast_shapes(bf.shape[1:], bg.shape[1:]))
    hi = np.zeros_like(lo)
    res = np.zeros_like(lo)
    for b in range(nb):
        if b >= 2:
            lo += cum_f[b - 2] * bg[b]   # f < g : blocks i <= b-2 of f
            hi += bf[b] * cum_g[b - 2]   # f > g
        j0, j1 = max(0, b - 1), min(nb - 1, b + 1)
        res += bf[b] * (cum_g[j1] - (cum_g[j0 - 1] if j0 > 0 else 0.0))
    return lo, res, hi


def para_lt(f: RealField, g: RealField, part: DyadicPartition) -> RealField:
    """Low-high paraproduct f < g."""
    _check_pair(f, g, part)
    lo, _, _ = para_decompose_batch(f.values, g.values, part)
    return RealField(f.grid, lo)


def resonant(f: RealField, g: RealField, part: DyadicPartition) -> RealField:
    """Resonant product f o g."""
    _check_pair(f, g, part)
    _, res, _ = para_decompose_batch(f.values, g.values, part)
    return RealField(f.grid, res)


def para_gt(f: RealField, g: RealField, part: DyadicPartition) -> RealField:
    """High-low paraproduct f > g = g < f."""
    _check_pair(f, g, part)
    _, _, hi = para_decompose_batch(f.values, g.values, part)
    return RealField(f.grid, hi)


# -- frequency localizers -----------------------------------------------------

def low_multiplier(part: DyadicPartition, L: int) -> np.ndarray:
    """Multiplier table of U_<= = sum_{j <= L} Delta_j (saturating in L)."""
    hi_b = min(max(L + 1, -1), part.n_blocks - 1)  # block index of largest kept j
    if hi_b < 0:
        return np.zeros(part.grid.shape)
    return part.tables[: hi_b + 1].sum(axis=0)


def localize_low(f: RealField, L: int, part: DyadicPartition) -> RealField:
    c = fft_coeffs(f.values, part.grid)
    return RealField(f.grid, ifft_values(low_multiplier(part, L) * c, part.grid))


def localize_high(f: RealField, L: int, part: DyadicPartition) -> RealField:
    c = fft_coeffs(f.values, part.grid)
    tab = 1.0 - low_multiplier(part, L)
    return RealField(f.grid, ifft_values(tab * c, part.grid))


# -- commutators --------------------------------------------------------------

def comm_D(f: RealField, g: RealField, h: RealField, part: DyadicPartition) -> float:
    """Scalar commutator D(f,g,h) = <f, g o h> - <f < g, h>."""
    _check_pair(f, g, part)
    _check_pair(f, h, part)
    return inner(f, resonant(g, h, part)) - inner(para_lt(f, g, part), h)


def comm_Ctilde(f: RealField, g: RealField, h: RealField,
                part: DyadicPartition) -> RealField:
    """Field commutator (f < g) o h - f * (g o h)."""
    _check_pair(f, g, part)
    _check_pair(f, h, part)
    first = resonant(para_lt(f, g, part), h, part)
    second = f.values * resonant(g, h, part).values
    return RealField(f.grid, first.values - second)


def comm_C(f: RealField, g: RealField, h: RealField, m: float,
           part: DyadicPartition) -> RealField:
    """Field commutator ((m-Lap)^{-1}(f < g)) o h - f * (h o (m-Lap)^{-1} g)."""
    if m <= 0:
        raise ValueError(f"comm_C requires m > 0, got {m}")
    _check_pair(f, g, part)
    _check_pair(f, h, part)
    gm = green_multiplier(part.grid, m)
    lo = para_lt(f, g, part)
    first = resonant(
        RealField(f.grid, ifft_values(gm * fft_coeffs(lo.values, part.grid), part.grid)),
        h, part)
    green_g = RealField(f.grid, ifft_values(gm * fft_coeffs(g.values, part.grid), part.grid))
    second = f.values * resonant(h, green_g, part).values
    return RealField(f.grid, first.values - second)


def time_integrator_weights(grid: Grid, dt: float, m: float):
    """Exponential-Euler kernel for the mild integral I f = L^{-1} f.

    One step: u <- decay * u + gain * f(t_n)  (left-endpoint quadrature),
    with decay = exp(-dt (m + |k|^2)) and gain = (1 - decay)/(m + |k|^2).
    """
    if dt <= 0:
        raise ValueError(f"time step must be positive, got {dt}")
    lam = m + grid.k2
    decay = np.exp(-dt * lam)
    gain = -np.expm1(-dt * lam) / lam
    return decay, gain


def discrete_I(path: np.ndarray, dt: float, m: float, grid: Grid) -> np.ndarray:
    """Discrete mild integral (I f)(t_n) along a uniform mesh, (I f)(t_0) = 0."""
    decay, gain = time_integrator_weights(grid, dt, m)
    out = np.zeros_like(path)
    c = np.zeros(grid.shape, dtype=np.complex128)
    for n in range(1, path.shape[0]):
        c = decay * c + gain * fft_coeffs(path[n - 1], grid)
        out[n] = ifft_values(c, grid)
    return out


def comm_Cbar(f_path: np.ndarray, g_path: np.ndarray, h_path: np.ndarray,
              dt: float, m: float, part: DyadicPartition) -> np.ndarray:
    """Pathwise commutator I(f < g) o h - f * (I(g) o h) on a uniform mesh.

    Paths are arrays of shape (n_steps, M, ..., M) on a common mesh; the same
    discrete integrator I as the dynamics module is used, so the definitional
    identity holds exactly relative to it.
    """
    if m <= 0:
        raise ValueError(f"comm_Cbar requires m > 0, got {m}")
    if not (f_path.shape == g_path.shape == h_path.shape):
        raise ValueError("paths must share one time mesh and grid")
    grid = part.grid
    n = f_path.shape[0]
    fg = np.empty_like(f_path)
    for t in range(n):
        lo, _, _ = para_decompose_batch(f_path[t], g_path[t], part)
        fg[t] = lo
    I_fg = discrete_I(fg, dt, m, grid)
    I_g = discrete_I(g_path, dt, m, grid)
    out = np.empty_like(f_path)
    for t in range(n):
        _, r1, _ = para_decompose_batch(I_fg[t], h_path[t], part)
        _, r2, _ = para_decompose_batch(I_g[t], h_path[t], part)
        out[t] = r1 - f_path[t] * r2
    return out


# -- measured operator constants ------------------------------------------------

def colored_field(grid: Grid, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian field with Holder-Besov regularity alpha (grid-uniform norms).

    Per-mode variance (1 + |k|_int^2)^{-(alpha + d/2)} in integer frequency
    units, so block sup norms scale like 2^{-j alpha} independently of M.
    """
    scale = 2.0 * math.pi / grid.side
    kint2 = grid.k2 / scale ** 2
    var = (1.0 + kint2) ** (-(alpha + grid.d / 2.0))
    w = rng.standard_normal(grid.shape)
    c = np.sqrt(var * grid.n_sites) * fft_coeffs(w, grid)
    return ifft_values(c, grid)


def operator_constants(M: int, d: int = 1, n_fields: int = 100, seed: int = 0,
                       kappa: float = 0.1) -> dict:
    """Worst-case measured constants of the standard inequalities.

    Each entry is the maximum, over random colored Gaussian fields, of the
    ratio (left side)/(right side) of one inequality:

      para           ||f < g||_{C^b}      vs ||f||_inf ||g||_{C^b}
      resonant       ||f o g||_{C^{a+b}}  vs ||f||_{C^a} ||g||_{C^b}, a+b > 0
      heat           t^{1/2} ||P_t f||_{C^{a+1}} vs ||f||_{C^a}
      embedding      ||f||_{C^{a-d}}      vs Besov(a, 1, 1) norm
      interpolation  ||f||_{L^2}          vs sqrt(||f||_{H^-1} ||f||_{H^1})
      comm_lh        ||Ctilde(f,g,h)||_{C^{a+b+c}} vs product of norms
      comm_green     ||C(f,g,h)||_{C^{a+b+c+2}}   vs product of norms
      comm_pairing   |D(f,g,h)|           vs ||f||_{H^a} ||g||_{C^b} ||h||_{H^c}

    Stability of these numbers across M is the lattice-uniformity check.
    """
    from .torus import create_grid  # local import avoids a cycle at module load
    grid = create_grid(d, M)
    part = make_partition(grid)
    rng = np.random.default_rng(seed)
    out = {k: 0.0 for k in ["para", "resonant", "heat", "embedding",
                            "interpolation", "comm_lh", "comm_green",
                            "comm_pairing"]}
    b_rough = -1.0 - kappa
    for _ in range(n_fields):
        f_smooth = colored_field(grid, 1.0 - kappa, rng)
        g_rough = colored_field(grid, b_rough, rng)
        h_mid = colored_field(grid, 0.9, rng)
        bs = lambda v, a: float(besov_norm_batch(v, part, a))
        # paraproduct: low-high keeps the rough regularity
        lo, _, _ = para_decompose_batch(f_smooth, g_rough, part)
        out["para"] = max(out["para"], bs(lo, b_rough)
                          / (np.max(np.abs(f_smooth)) * bs(g_rough, b_rough)))
        # resonant with positive total regularity: (1-k) + (-0.8)
        g8 = colored_field(grid, -0.8, rng)
        _, res8, _ = para_decompose_batch(f_smooth, g8, part)
        out["resonant"] = max(out["resonant"], bs(res8, 0.2 - kappa)
                              / (bs(f_smooth, 1.0 - kappa) * bs(g8, -0.8)))
        # heat smoothing by one order costs t^{-1/2}
        for t in (0.05, 0.2, 0.8):
            pt = ifft_values(np.exp(-t * (1.0 + grid.k2))
                             * fft_coeffs(g_rough, grid), grid)
            out["heat"] = max(out["heat"], math.sqrt(t) * bs(pt, b_rough + 1.0)
                              / bs(g_rough, b_rough))
        # embedding B^a_{1,1} into C^{a-d}
        out["embedding"] = max(out["embedding"], bs(h_mid, 0.9 - d)
                               / float(besov_norm_batch(h_mid, part, 0.9,
                                                        p=1.0, q=1.0)))
        # interpolation at theta = 1/2
        w0 = sobolev_weight_table(part, 0.0)
        wm = sobolev_weight_table(part, -1.0)
        wp = sobolev_weight_table(part, 1.0)
        n0 = float(sobolev_norm_batch(h_mid, grid, w0))
        nm = float(sobolev_norm_batch(h_mid, grid, wm))
        npp = float(sobolev_norm_batch(h_mid, grid, wp))
        out["interpolation"] = max(out["interpolation"],
                                   n0 / math.sqrt(nm * npp))
        # commutators; exponents chosen so every target regularity is positive
        a_c, b_c, c_c = 0.6, -0.8, 0.9
        fc = colored_field(grid, a_c, rng)
        gc = colored_field(grid, b_c, rng)
        hc = colored_field(grid, c_c, rng)
        F, G, H = RealField(grid, fc), RealField(grid, gc), RealField(grid, hc)
        ct = comm_Ctilde(F, G, H, part)
        out["comm_lh"] = max(out["comm_lh"], bs(ct.values, a_c + b_c + c_c)
                             / (bs(fc, a_c) * bs(gc, b_c) * bs(hc, c_c)))
        g2 = colored_field(grid, -0.9, rng)
        h2 = colored_field(grid, -0.8, rng)
        cg = comm_C(F, RealField(grid, g2), RealField(grid, h2), 1.0, part)
        out["comm_green"] = max(out["comm_green"],
                                bs(cg.values, a_c - 0.9 - 0.8 + 2.0)
                                / (bs(fc, a_c) * bs(g2, -0.9) * bs(h2, -0.8)))
        wsa = sobolev_weight_table(part, 0.7)
        dval = abs(comm_D(F, G, RealField(grid, h_mid), part))
        den = (float(sobolev_norm_batch(fc, grid, wsa)) * bs(gc, b_c)
               * float(sobolev_norm_batch(h_mid, grid, wsa)))
        out["comm_pairing"] = max(out["comm_pairing"], dval / den)
    return out
