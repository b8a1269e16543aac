"""Real Fourier basis and periodic trapezoid quadrature on the reference circle.

The basis is orthonormal in L2(d theta) and ordered as

    e_0 = 1/sqrt(2 pi),
    e_{2k-1} = cos(k theta)/sqrt(pi),
    e_{2k}   = sin(k theta)/sqrt(pi),      k = 1..K,

so a truncation with K frequencies has dimension 2K + 1. Mode m carries the
Laplace eigenvalue lam[m] in (0, 1, 1, 4, 4, 9, 9, ...). The uniform grid
carries equal trapezoid weights 2 pi / G, which integrate trigonometric
polynomials of frequency < G exactly; G >= 4K + 1 keeps quartic products of
basis functions alias-free.
"""

from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * np.pi


class FourierBasis:
    """Truncated real Fourier basis with its quadrature grid."""

    def __init__(self, mode_count: int, grid_size: int):
        if mode_count < 1:
            raise ValueError("mode_count must be >= 1")
        if grid_size < 4 * mode_count + 1:
            raise ValueError(
                f"grid_size {grid_size} too small: need >= 4*K+1 = {4 * mode_count + 1} "
                "for alias-free quartic products"
            )
        self.mode_count = mode_count
        self.grid_size = grid_size
        self.dim = 2 * mode_count + 1
        self.theta = np.arange(grid_size) * (TWO_PI / grid_size)
        self.weights = np.full(grid_size, TWO_PI / grid_size)

        freqs = np.zeros(self.dim, dtype=int)
        freqs[1::2] = np.arange(1, mode_count + 1)
        freqs[2::2] = np.arange(1, mode_count + 1)
        self.frequencies = freqs
        self.eigenvalues = freqs.astype(float) ** 2

        # value and derivative tables, columns follow the basis ordering
        values = np.empty((grid_size, self.dim))
        derivs = np.empty((grid_size, self.dim))
        values[:, 0] = 1.0 / np.sqrt(TWO_PI)
        derivs[:, 0] = 0.0
        for k in range(1, mode_count + 1):
            c = np.cos(k * self.theta) / np.sqrt(np.pi)
            s = np.sin(k * self.theta) / np.sqrt(np.pi)
            values[:, 2 * k - 1] = c
            values[:, 2 * k] = s
            derivs[:, 2 * k - 1] = -k * s
            derivs[:, 2 * k] = k * c
        self.values = values
        self.derivs = derivs

    def to_grid(self, coeffs: np.ndarray) -> np.ndarray:
        """Evaluate the function with the given coefficients on the grid."""
        return self.values @ coeffs

    def to_coeffs(self, grid_values: np.ndarray) -> np.ndarray:
        """Project grid values onto the basis by quadrature."""
        return self.values.T @ (self.weights * grid_values)

    def deriv_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        """Coefficients of the angular derivative (exact, spectral)."""
        out = np.zeros_like(coeffs)
        k = np.arange(1, self.mode_count + 1, dtype=float)
        out[1::2] = k * coeffs[2::2]
        out[2::2] = -k * coeffs[1::2]
        return out

    def grid_deriv(self, coeffs: np.ndarray) -> np.ndarray:
        """Angular derivative evaluated on the grid."""
        return self.derivs @ coeffs

    def quad(self, grid_values: np.ndarray) -> float:
        """Trapezoid quadrature of grid values over the circle."""
        return float(self.weights @ grid_values)

    def h0_norm_sq(self, coeffs: np.ndarray) -> float:
        """Squared L2(d theta) norm; the basis is orthonormal."""
        return float(coeffs @ coeffs)

    def v_norm_sq(self, coeffs: np.ndarray) -> float:
        """Squared H1 norm, sum (1 + lam_m) c_m^2."""
        return float(((1.0 + self.eigenvalues) * coeffs) @ coeffs)


@lru_cache(maxsize=32)
def get_basis(mode_count: int, grid_size: int) -> FourierBasis:
    return FourierBasis(mode_count, grid_size)
