"""FFT forward model: pupil field -> point spread function.

The DFT is centered (fftshift on both sides) so a pupil sitting at the grid
center maps to a PSF whose diffraction peak sits at the grid center, and so
the discrete conjugate flip of `pupils.flip_origin` is the exact counterpart
of continuous conjugate inversion.  No scaling is applied, hence Parseval
reads sum(y) = n^2 * sum(P^2) for unit-magnitude fields.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import checkerboard
from .pupils import PupilMask, flip_origin


class OpticsError(ValueError):
    pass


@dataclass(frozen=True)
class Psf:
    """Intensity image; clean raw PSFs are nonnegative, noisy ones may dip below 0."""

    values: np.ndarray
    normalization_tag: str = "raw"  # raw | circle_normalized
    sigma: float = 0.0


def centered_fft2(field: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(field)))


def centered_ifft2(spectrum: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(spectrum)))


def conjugate_flip_field(field: np.ndarray) -> np.ndarray:
    """x -> x_*: flip about the origin, then conjugate."""
    return np.conj(flip_origin(field))


def conjugate_flip_phase(phase: np.ndarray) -> np.ndarray:
    """Phase of x_* is the flipped phase negated."""
    return -flip_origin(phase)


def even_symmetrize(phase: np.ndarray) -> np.ndarray:
    """Flip-even part of a phase map, (phi + flip(phi)) / 2.

    A flip-even phase over a flip-even support has a purely real spectrum,
    which the closed-form separation prediction requires.
    """
    return 0.5 * (phase + flip_origin(phase))


def pupil_field(pupil: PupilMask, phase: np.ndarray) -> np.ndarray:
    if phase.shape != pupil.values.shape:
        raise OpticsError(
            f"phase shape {phase.shape} does not match pupil {pupil.values.shape}"
        )
    return pupil.values * np.exp(1j * phase)


def forward_psf(pupil: PupilMask, phase: Optional[np.ndarray] = None) -> Psf:
    """Clean unnormalized PSF y = |F P exp(j phi)|^2."""
    if phase is None:
        phase = np.zeros_like(pupil.values)
    field = pupil_field(pupil, phase)
    spectrum = centered_fft2(field)
    return Psf(values=np.abs(spectrum) ** 2)


def simulate_slm_psf(
    pupil: PupilMask,
    phase: np.ndarray,
    carrier: Optional[np.ndarray] = None,
    beam: Optional[PupilMask] = None,
    carrier_pitch: int = 1,
):
    """Realized PSF of an SLM that paints a carrier outside the pupil region.

    The SLM cannot switch amplitude off, so the beam support C carries
    z = P exp(j phi) + (C - P) exp(j carrier) and the measurement is
    y~ = |F C z|^2.  Returns the Psf plus the three expansion terms
    (intended PSF, carrier PSF, interference) whose sum reproduces it.
    """
    grid = pupil.grid
    if beam is None:
        beam = PupilMask(values=grid.circle_mask(), grid=grid)
    if np.any(pupil.values * (1.0 - beam.values) != 0):
        raise OpticsError("pupil must lie inside the beam support")
    if carrier is None:
        carrier = checkerboard(grid, pitch=carrier_pitch)
    exterior = beam.values - pupil.values * beam.values
    f_pupil = centered_fft2(pupil.values * np.exp(1j * phase))
    f_carrier = centered_fft2(exterior * np.exp(1j * carrier))
    realized = np.abs(f_pupil + f_carrier) ** 2
    terms = (
        np.abs(f_pupil) ** 2,
        np.abs(f_carrier) ** 2,
        2.0 * np.real(f_pupil * np.conj(f_carrier)),
    )
    return Psf(values=realized), terms
