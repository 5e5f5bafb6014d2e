"""Noll-indexed Zernike basis on the reference circle and phase synthesis."""

from dataclasses import dataclass
from math import factorial

import numpy as np

from .grid import GridSpec


class ZernikeError(ValueError):
    pass


def noll_to_nm(j: int):
    """Map a Noll index j >= 1 to radial degree n and signed azimuthal order m.

    Noll's convention: even j carries the cosine (m > 0) term, odd j the
    sine (m < 0) term; within a radial degree |m| increases outward.
    """
    if j < 1:
        raise ZernikeError(f"Noll index must be >= 1, got {j}")
    n = 0
    remaining = j
    while remaining > n + 1:
        n += 1
        remaining -= n
    # remaining-th mode (1-based) inside radial degree n
    abs_ms = list(range(n % 2, n + 1, 2))
    k = 1
    for am in abs_ms:
        if am == 0:
            if k == remaining:
                return n, 0
            k += 1
        else:
            j_first = j - remaining + k
            # the even Noll index of the pair is cosine (+|m|)
            first_m = am if j_first % 2 == 0 else -am
            if k == remaining:
                return n, first_m
            k += 1
            if k == remaining:
                return n, -first_m
            k += 1
    raise AssertionError("unreachable")


def _radial_poly(n: int, m: int, rho: np.ndarray) -> np.ndarray:
    out = np.zeros_like(rho)
    for k in range((n - m) // 2 + 1):
        coeff = (
            (-1) ** k
            * factorial(n - k)
            / (factorial(k) * factorial((n + m) // 2 - k) * factorial((n - m) // 2 - k))
        )
        out += coeff * rho ** (n - 2 * k)
    return out


def zernike_map(j: int, grid: GridSpec) -> np.ndarray:
    """Noll-normalized Zernike mode j sampled on the unit disk of the grid.

    Normalization is sqrt(n+1) for m = 0 and sqrt(2(n+1)) otherwise, so each
    mode has unit variance over the disk; outside the disk the map is zero.
    """
    n, m = noll_to_nm(j)
    u, v = grid.unit_coords()
    rho = np.hypot(u, v)
    theta = np.arctan2(v, u)
    inside = grid.disk_mask()
    r = _radial_poly(n, abs(m), rho)
    if m == 0:
        z = np.sqrt(n + 1.0) * r
    elif m > 0:
        z = np.sqrt(2.0 * (n + 1.0)) * r * np.cos(m * theta)
    else:
        z = np.sqrt(2.0 * (n + 1.0)) * r * np.sin(-m * theta)
    return np.where(inside, z, 0.0)


@dataclass(frozen=True)
class ZernikeBasis:
    """Stack of Noll-indexed mode maps evaluated on one grid."""

    modes: tuple
    maps: np.ndarray  # (len(modes), n, n)
    grid: GridSpec

    def __len__(self):
        return len(self.modes)


def build_zernike_basis(grid: GridSpec, modes) -> ZernikeBasis:
    modes = tuple(int(m) for m in modes)
    if not modes:
        raise ZernikeError("mode list must be nonempty")
    maps = np.stack([zernike_map(j, grid) for j in modes])
    return ZernikeBasis(modes=modes, maps=maps, grid=grid)


def synthesize_phase(coeffs, basis: ZernikeBasis) -> np.ndarray:
    """Phase map sum_m a_m z_m in radians; zero outside the reference circle."""
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.shape != (len(basis),):
        raise ZernikeError(
            f"expected {len(basis)} coefficients, got shape {coeffs.shape}"
        )
    return np.tensordot(coeffs, basis.maps, axes=1)
