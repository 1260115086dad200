"""Uniform time-space grid on [0,T]x[0,1] with Dirichlet sine spectral machinery.

Interior nodes are x_j = j/nx, j = 1..nx-1; boundary values are implicitly zero.
The eigensystem of the second-derivative operator with Dirichlet conditions is

    phi_k(x) = sqrt(2) sin(k pi x),   lambda_k = k^2 pi^2,   k = 1..nx-1,

and the discrete sine transform on the interior nodes is exactly orthonormal
with respect to the trapezoid quadrature weight dx, so Parseval holds to
machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

__all__ = [
    "GridSpec",
    "Field",
    "SpectralBasis",
    "make_grid",
    "make_field",
    "field_from_function",
    "eigenfunction",
    "make_basis",
    "sine_transform",
    "inverse_sine_transform",
    "lp_norm",
]


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid: nx spatial intervals, nt time steps, horizon T."""

    nx: int
    nt: int
    T: float

    def __post_init__(self):
        if self.nx < 2:
            raise ValueError(f"dimension too small: nx={self.nx} must be >= 2")
        if self.nt < 1:
            raise ValueError(f"dimension too small: nt={self.nt} must be >= 1")
        if not self.T > 0:
            raise ValueError(f"non-positive horizon: T={self.T}")

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def n_interior(self) -> int:
        return self.nx - 1

    @property
    def x(self) -> np.ndarray:
        """Interior nodes x_j = j/nx, j = 1..nx-1."""
        return np.arange(1, self.nx) / self.nx

    @property
    def t(self) -> np.ndarray:
        """Time levels t_m = m*dt, m = 0..nt."""
        return np.arange(self.nt + 1) * self.dt


def make_grid(nx: int, nt: int, T: float) -> GridSpec:
    return GridSpec(int(nx), int(nt), float(T))


@dataclass
class Field:
    """Spatial profile on the interior nodes of a grid (zero at the boundary)."""

    values: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.n_interior,):
            raise ValueError(
                f"field length {self.values.shape} does not match grid "
                f"interior size {self.grid.n_interior}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite entries")

    def copy(self) -> "Field":
        return Field(self.values.copy(), self.grid)


def make_field(grid: GridSpec, values) -> Field:
    return Field(np.asarray(values, dtype=float), grid)


def field_from_function(grid: GridSpec, fn) -> Field:
    """Sample a callable x -> value at the interior nodes."""
    return Field(np.asarray(fn(grid.x), dtype=float), grid)


def eigen_values(k: np.ndarray | int) -> np.ndarray | float:
    """lambda_k = (k pi)^2."""
    return (np.asarray(k) * np.pi) ** 2


def eigenfunction(grid: GridSpec, k: int, amplitude: float = 1.0) -> Field:
    """phi_k sampled on the interior nodes, optionally scaled."""
    if not 1 <= k <= grid.n_interior:
        raise ValueError(f"mode {k} outside 1..{grid.n_interior}")
    return Field(amplitude * np.sqrt(2.0) * np.sin(k * np.pi * grid.x), grid)


@dataclass(frozen=True)
class SpectralBasis:
    """Sine eigensystem plus the antiderivative basis used by the noise expansion.

    eigenfunctions[k-1, j] = phi_k(x_j); antiderivatives[k-1, j] = h_k(x_j)
    where h_k(x) = int_0^x sqrt(2) sin(k pi r) dr = sqrt(2)(1 - cos(k pi x))/(k pi).
    """

    k_modes: int
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    antiderivatives: np.ndarray


def make_basis(grid: GridSpec, k_modes: int | None = None) -> SpectralBasis:
    k_modes = grid.n_interior if k_modes is None else int(k_modes)
    if not 1 <= k_modes <= grid.n_interior:
        raise ValueError(f"k_modes={k_modes} outside 1..{grid.n_interior}")
    k = np.arange(1, k_modes + 1)
    kx = np.outer(k * np.pi, grid.x)
    lam = (k * np.pi) ** 2
    phi = np.sqrt(2.0) * np.sin(kx)
    h = np.sqrt(2.0) * (1.0 - np.cos(kx)) / (k * np.pi)[:, None]
    for arr in (lam, phi, h):
        arr.flags.writeable = False
    return SpectralBasis(k_modes, lam, phi, h)


# ---------------------------------------------------------------------------
# Transforms. The forward transform is trapezoid quadrature against phi_k,
# u_hat_k = dx * sum_j phi_k(x_j) u_j, which is exactly orthonormal on the
# uniform grid; DST-I supplies the fast path.
# ---------------------------------------------------------------------------

_SQRT2 = np.sqrt(2.0)


def to_modes(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Forward sine coefficients of values along the last axis."""
    if values.shape[-1] != grid.n_interior:
        raise ValueError(
            f"length mismatch: got {values.shape[-1]}, grid has {grid.n_interior}"
        )
    return sfft.dst(values, type=1, axis=-1) * (grid.dx / _SQRT2)


def from_modes(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Synthesis u_j = sum_k u_hat_k phi_k(x_j) along the last axis."""
    if coeffs.shape[-1] != grid.n_interior:
        raise ValueError(
            f"length mismatch: got {coeffs.shape[-1]}, grid has {grid.n_interior}"
        )
    return sfft.dst(coeffs, type=1, axis=-1) / _SQRT2


def cos_analysis(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Pairings <phi_k', w> by cosine-weighted trapezoid quadrature, k = 1..nx-1.

    The endpoint values of w are taken by constant extension of the nearest
    interior node, which makes the quadrature annihilate constants exactly
    for every mode (the continuous integral of phi_k' over [0,1] vanishes)
    without changing the convergence order.
    """
    nxm = grid.n_interior
    if values.shape[-1] != nxm:
        raise ValueError(f"length mismatch: got {values.shape[-1]}, grid has {nxm}")
    padded = np.empty(values.shape[:-1] + (grid.nx + 1,), dtype=float)
    padded[..., 1:-1] = values
    padded[..., 0] = values[..., 0]
    padded[..., -1] = values[..., -1]
    d = sfft.dct(padded, type=1, axis=-1)
    k = np.arange(1, nxm + 1)
    return d[..., 1 : grid.nx] * (k * np.pi * grid.dx / _SQRT2)


def cos_synthesis(coeffs: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Exact transpose (up to the dx weight) of cos_analysis, for adjoint sweeps."""
    nxm = grid.n_interior
    if coeffs.shape[-1] != nxm:
        raise ValueError(f"length mismatch: got {coeffs.shape[-1]}, grid has {nxm}")
    k = np.arange(1, nxm + 1)
    r = coeffs * (_SQRT2 * k * np.pi)
    padded = np.zeros(coeffs.shape[:-1] + (grid.nx + 1,), dtype=float)
    padded[..., 1:-1] = r
    d = sfft.dct(padded, type=1, axis=-1)
    out = d[..., 1 : grid.nx] / 2.0
    # Endpoint-extension weights of the analysis map land on the first and
    # last interior nodes in the transpose.
    out[..., 0] += 0.5 * np.sum(r, axis=-1)
    out[..., -1] += 0.5 * np.sum(r * np.where(k % 2 == 0, 1.0, -1.0), axis=-1)
    return out


def sine_transform(field: Field) -> np.ndarray:
    """Orthonormal sine coefficients of a field (Parseval holds with lp_norm p=2)."""
    return to_modes(field.values, field.grid)


def inverse_sine_transform(coeffs: np.ndarray, grid: GridSpec) -> Field:
    """Reconstruct a field from its sine coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    return Field(from_modes(coeffs, grid), grid)


# ---------------------------------------------------------------------------
# Norms: composite trapezoid with zero boundary values, so the quadrature is
# dx * sum over interior nodes.
# ---------------------------------------------------------------------------


def lp_norm_values(values: np.ndarray, dx: float, p: float) -> np.ndarray:
    """L^p quadrature norm along the last axis; p = inf gives max |value|."""
    if p < 1:
        raise ValueError(f"p={p} must be >= 1")
    if np.isinf(p):
        return np.max(np.abs(values), axis=-1)
    return (dx * np.sum(np.abs(values) ** p, axis=-1)) ** (1.0 / p)


def lp_norm(field: Field, p: float) -> float:
    return float(lp_norm_values(field.values, field.grid.dx, p))
