"""Quasifree-state utilities: the permanent/determinant moment formula and
thermal equilibrium distributions.

A translation-invariant quasifree state is fixed by its two-point function;
every 2m-point moment <a*(k_1)..a*(k_m) a(k'_m)..a(k'_1)> equals the
permanent (bosons) or determinant (fermions) of the m x m matrix of pair
contractions.
"""

import numpy as np
from scipy.special import expit

from .dispersion import DispersionModel, omega
from .grids import Distribution, MomentumGrid

PERMANENT_MAX_SIZE = 12  # Ryser costs 2^m; keep desk-scale runtimes

_HERM_TOL = 1e-10


class CorrelationMatrix:
    """Two-point matrix C_ij = <a(k_i)* a(k_j)> of a quasifree state.

    Hermitian and positive semidefinite; fermions additionally have all
    eigenvalues <= 1.
    """

    def __init__(self, matrix, theta):
        matrix = np.asarray(matrix, dtype=complex)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("correlation matrix must be square")
        if theta not in (-1, 1):
            raise ValueError("theta must be +1 (bosons) or -1 (fermions)")
        scale = max(1.0, float(np.max(np.abs(matrix))))
        if np.max(np.abs(matrix - matrix.conj().T)) > _HERM_TOL * scale:
            raise ValueError("correlation matrix must be Hermitian")
        eig = np.linalg.eigvalsh(matrix)
        if eig.size and eig[0] < -_HERM_TOL * scale:
            raise ValueError("correlation matrix must be positive semidefinite")
        if theta == -1 and eig.size and eig[-1] > 1.0 + _HERM_TOL * scale:
            raise ValueError("fermion correlation matrix has an eigenvalue above 1")
        self.matrix = matrix
        self.theta = int(theta)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def ryser_permanent(matrix: np.ndarray) -> complex:
    """Permanent by Ryser's inclusion-exclusion with Gray-code updates.

    Cost m * 2^m; refuses m > PERMANENT_MAX_SIZE.
    """
    A = np.asarray(matrix)
    m = A.shape[0]
    if A.ndim != 2 or A.shape[1] != m:
        raise ValueError("matrix must be square")
    if m == 0:
        return complex(1.0)
    if m > PERMANENT_MAX_SIZE:
        raise ValueError(
            f"permanent of size {m} refused (cap {PERMANENT_MAX_SIZE}; cost grows as 2^m)"
        )
    total = 0.0 + 0.0j
    row_sums = np.zeros(m, dtype=complex)
    prev_gray = 0
    for s in range(1, 1 << m):
        gray = s ^ (s >> 1)
        changed = gray ^ prev_gray
        col = changed.bit_length() - 1
        if gray & changed:
            row_sums += A[:, col]
        else:
            row_sums -= A[:, col]
        prev_gray = gray
        sign = -1.0 if (m - bin(gray).count("1")) % 2 else 1.0
        total += sign * np.prod(row_sums)
    return complex(total)


def quasifree_moment(C: CorrelationMatrix) -> complex:
    """The 2m-point moment of the quasifree state: per(C) bosons, det(C) fermions."""
    if C.theta == 1:
        return ryser_permanent(C.matrix)
    return complex(np.linalg.det(C.matrix))


def thermal_values(om, T, mu, theta):
    """Equilibrium occupation 1/(exp((omega-mu)/T) - theta) on given energies."""
    if T <= 0:
        raise ValueError("temperature must be positive")
    x = (np.asarray(om, dtype=float) - mu) / T
    if theta == -1:
        return expit(-x)
    if theta == 1:
        if np.any(x <= 0):
            raise ValueError(
                "bosonic chemical potential must lie below the band minimum (condensation)"
            )
        e = np.exp(-x)
        return e / (1.0 - e)
    return np.exp(-np.clip(x, -700.0, None))


def thermal_distribution(
    model: DispersionModel, grid: MomentumGrid, T, mu, theta
) -> Distribution:
    """Thermal equilibrium momentum distribution for the free band."""
    om = omega(model, grid.nodes)
    return Distribution(grid, thermal_values(om, T, mu, theta), theta)
