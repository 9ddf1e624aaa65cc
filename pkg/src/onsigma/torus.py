"""Discrete torus geometry, spectral transforms, and Fourier-multiplier operators.

Conventions
-----------
The torus has period ``side`` (default 2*pi) in each of ``d`` dimensions and
``M`` sites per dimension.  A real field ``f`` is expanded in plain
exponentials,

    f(x) = sum_k  c_k  exp(i kappa_k . x),      kappa_k = (2*pi/side) * k,

with integer frequencies ``k`` in ``{-M/2, ..., M/2-1}^d``.  With this
normalization the site mean of ``f**2`` equals ``sum_k |c_k|**2`` (discrete
Parseval) and the L2 norm satisfies ``||f||_2^2 = side^d * sum_k |c_k|**2``.

The negative Laplacian acts as the multiplier ``|kappa_k|**2``, so with the
default period 2*pi the eigenvalues are the integer values ``|k|**2``.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

__all__ = [
    "Grid",
    "RealField",
    "Spectrum",
    "create_grid",
    "to_spectrum",
    "from_spectrum",
    "apply_multiplier",
    "apply_multiplier_batch",
    "heat_flow",
    "green",
    "bessel",
    "inner",
    "norm_lp",
    "norm_l2",
    "norm_grad_l2",
]

TWO_PI = 2.0 * math.pi


@dataclasses.dataclass(frozen=True)
class Grid:
    """Immutable discrete torus: geometry plus precomputed multiplier tables."""

    d: int
    M: int
    side: float
    m_default: float
    k_index: tuple[np.ndarray, ...]  # 1-d integer index per axis, FFT layout
    k2: np.ndarray                   # |kappa|^2 table, shape (M,)*d

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.M,) * self.d

    @property
    def n_sites(self) -> int:
        return self.M ** self.d

    @property
    def dx(self) -> float:
        return self.side / self.M

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.d

    @property
    def volume(self) -> float:
        return self.side ** self.d

    def axis_points(self) -> np.ndarray:
        return np.arange(self.M) * self.dx

    def __eq__(self, other) -> bool:
        if not isinstance(other, Grid):
            return NotImplemented
        return (self.d, self.M, self.side) == (other.d, other.M, other.side)

    def __hash__(self) -> int:
        return hash((self.d, self.M, self.side))


def create_grid(d: int, M: int, side: float = TWO_PI, m_default: float = 1.0) -> Grid:
    """Build a Grid with the |kappa|^2 eigenvalue table of -Laplacian precomputed."""
    if d not in (1, 2, 3):
        raise ValueError(f"spatial dimension d must be 1, 2 or 3, got {d}")
    if M < 4 or (M & (M - 1)) != 0:
        raise ValueError(f"M must be a power of two >= 4, got {M}")
    if side <= 0:
        raise ValueError(f"side must be positive, got {side}")
    k1 = np.fft.fftfreq(M, d=1.0 / M).astype(np.int64)  # 0..M/2-1, -M/2..-1
    scale = TWO_PI / side
    axes = [(scale * k1.astype(np.float64)) ** 2] * d
    k2 = axes[0]
    for a in axes[1:]:
        k2 = k2[..., None] + a
    k2 = np.ascontiguousarray(np.reshape(k2, (M,) * d))
    return Grid(d=d, M=M, side=float(side), m_default=float(m_default),
                k_index=tuple([k1] * d), k2=k2)


@dataclasses.dataclass
class RealField:
    """A real scalar field sampled on the grid sites (C-order lexicographic)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.size != self.grid.n_sites:
            raise ValueError(
                f"field has {v.size} entries, grid has {self.grid.n_sites} sites")
        self.values = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")

    def copy(self) -> "RealField":
        return RealField(self.grid, self.values.copy())


@dataclasses.dataclass
class Spectrum:
    """Fourier coefficients of a field, in numpy FFT layout."""

    grid: Grid
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.size != self.grid.n_sites:
            raise ValueError(
                f"spectrum has {c.size} entries, grid has {self.grid.n_sites} modes")
        self.coeffs = c.reshape(self.grid.shape)


def _check_same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


# -- transforms ---------------------------------------------------------------

def fft_coeffs(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Raw transform: site values (..., M^d) -> coefficients c_k."""
    axes = tuple(range(-grid.d, 0))
    return np.fft.fftn(values, axes=axes) / grid.n_sites


def ifft_values(coeffs: np.ndarray, grid: Grid) -> np.ndarray:
    """Raw inverse transform, real part (fields here are real-valued)."""
    axes = tuple(range(-grid.d, 0))
    return np.fft.ifftn(coeffs * grid.n_sites, axes=axes).real


def to_spectrum(f: RealField) -> Spectrum:
    return Spectrum(f.grid, fft_coeffs(f.values, f.grid))


def from_spectrum(s: Spectrum) -> RealField:
    return RealField(s.grid, ifft_values(s.coeffs, s.grid))


# -- multiplier operators -----------------------------------------------------

def apply_multiplier(f: RealField, sigma: np.ndarray) -> RealField:
    """Apply a real Fourier multiplier table sigma(k) to a field."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if not np.all(np.isfinite(sigma)):
        raise ValueError("multiplier table contains non-finite entries")
    if sigma.shape != f.grid.shape:
        raise ValueError("multiplier table shape does not match grid")
    return RealField(f.grid, ifft_values(sigma * fft_coeffs(f.values, f.grid), f.grid))


def apply_multiplier_batch(values: np.ndarray, sigma: np.ndarray, grid: Grid) -> np.ndarray:
    """Same as apply_multiplier on a stacked array of fields (batch leading axes)."""
    return ifft_values(sigma * fft_coeffs(values, grid), grid)


def heat_multiplier(grid: Grid, t: float, m: float) -> np.ndarray:
    return np.exp(-t * (m + grid.k2))


def heat_flow(f: RealField, t: float, m: float) -> RealField:
    """Heat semigroup P_t = exp(t*(Laplacian - m))."""
    if t < 0:
        raise ValueError(f"heat_flow requires t >= 0, got {t}")
    if m < 0:
        raise ValueError(f"heat_flow requires m >= 0, got {m}")
    return apply_multiplier(f, heat_multiplier(f.grid, t, m))


def green_multiplier(grid: Grid, m: float) -> np.ndarray:
    return 1.0 / (m + grid.k2)


def green(f: RealField, m: float) -> RealField:
    """Green operator (m - Laplacian)^{-1}."""
    if m <= 0:
        raise ValueError(f"green requires m > 0, got {m}")
    return apply_multiplier(f, green_multiplier(f.grid, m))


def bessel_multiplier(grid: Grid, s: float) -> np.ndarray:
    return (1.0 + grid.k2) ** (s / 2.0)


def bessel(f: RealField, s: float) -> RealField:
    """Bessel potential (1 - Laplacian)^{s/2}."""
    return apply_multiplier(f, bessel_multiplier(f.grid, s))


# -- inner products and norms -------------------------------------------------

def inner(f: RealField, g: RealField) -> float:
    """Riemann-sum L2 pairing (side/M)^d * sum_x f(x) g(x)."""
    _check_same_grid(f, g)
    return float(f.grid.cell_volume * np.vdot(f.values, g.values).real)


def norm_lp(f: RealField, p: float) -> float:
    """Riemann-sum L^p norm; p=inf gives the max norm."""
    if p == math.inf:
        return float(np.max(np.abs(f.values)))
    if p < 1:
        raise ValueError(f"norm_lp requires p >= 1, got {p}")
    return float((f.grid.cell_volume * np.sum(np.abs(f.values) ** p)) ** (1.0 / p))


def norm_l2(f: RealField) -> float:
    return math.sqrt(max(inner(f, f), 0.0))


def norm_grad_l2(f: RealField) -> float:
    """L2 norm of the gradient, via the spectral |kappa|^2 table."""
    c = fft_coeffs(f.values, f.grid)
    return math.sqrt(float(f.grid.volume * np.sum(f.grid.k2 * np.abs(c) ** 2)))


def norm_lp_batch(values: np.ndarray, grid: Grid, p: float) -> np.ndarray:
    """L^p norms of stacked fields; reduces over the trailing d axes."""
    axes = tuple(range(-grid.d, 0))
    if p == math.inf:
        return np.max(np.abs(values), axis=axes)
    return (grid.cell_volume * np.sum(np.abs(values) ** p, axis=axes)) ** (1.0 / p)
