"""Discretization of the pupil plane.

Everything in this package lives on a square n x n grid whose flip center
is the pixel (n//2, n//2).  With that choice the index map
i -> (n - i) mod n is an exact symmetry of any centered shape, which makes
the conjugate-flip identities of the forward model hold to FFT round-off
instead of half-a-pixel error.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Square pixel grid holding the reference circular pupil.

    n : side length in pixels (even; powers of two keep the FFTs fast).
    circle_diameter_px : diameter of the reference circle C in pixels.
    """

    n: int = 128
    circle_diameter_px: int = 64

    def __post_init__(self):
        if self.n <= 0 or self.n % 2 != 0:
            raise ValueError(f"grid side must be a positive even integer, got {self.n}")
        if not (0 < self.circle_diameter_px <= self.n):
            raise ValueError(
                f"circle diameter must be in (0, {self.n}], got {self.circle_diameter_px}"
            )

    @property
    def radius_px(self) -> float:
        return self.circle_diameter_px / 2.0

    def pixel_coords(self):
        """Pixel-center coordinates (x, y) in pixels relative to the flip center."""
        c = np.arange(self.n, dtype=float) - self.n // 2
        return np.meshgrid(c, c, indexing="xy")

    def unit_coords(self):
        """Pixel-center coordinates normalized so the reference circle is the unit disk."""
        x, y = self.pixel_coords()
        return x / self.radius_px, y / self.radius_px

    def disk_mask(self) -> np.ndarray:
        """Boolean mask of the reference circle C (closed disk)."""
        u, v = self.unit_coords()
        return u * u + v * v <= 1.0 + 1e-12

    def circle_mask(self) -> np.ndarray:
        """Reference circle C as a float 0/1 array."""
        return self.disk_mask().astype(float)

    def circle_area(self) -> float:
        return float(self.disk_mask().sum())


def checkerboard(grid: GridSpec, pitch: int = 1, amplitude: float = np.pi) -> np.ndarray:
    """Alternating {0, amplitude} phase pattern at the given pixel pitch.

    The default single-pixel pi checkerboard pushes light to the edge of the
    DFT band, which is how an SLM emulates zero amplitude outside a pupil.
    """
    if pitch < 1:
        raise ValueError(f"pitch must be >= 1, got {pitch}")
    idx = np.arange(grid.n) // pitch
    cells = (idx[:, None] + idx[None, :]) % 2
    return amplitude * cells.astype(float)
