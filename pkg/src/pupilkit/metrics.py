"""Strehl ratios, ambiguity separation, phase error, and the throughput-
normalized noise model."""

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .grid import GridSpec
from .optics import Psf, centered_fft2, conjugate_flip_phase, forward_psf, pupil_field
from .pupils import PupilMask


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    """Additive white Gaussian noise applied after circle-peak normalization."""

    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise MetricError(f"sigma must be >= 0, got {self.sigma}")


def circle_peak(grid: GridSpec) -> float:
    """max |F C 1|^2 of the reference circle.

    For a nonnegative mask the spectrum peaks at the DC bin, whose value is
    the plain pixel sum, so the peak is exactly area(C)^2 with no FFT needed.
    """
    return grid.circle_area() ** 2


def noisy_normalized_psf(
    pupil: PupilMask,
    phase: np.ndarray,
    noise: NoiseModel,
    rng: Optional[np.random.Generator] = None,
) -> Psf:
    """y = |F P x|^2 / max|F C 1|^2 + n.

    Dividing every pupil by the same circle peak means smaller pupils keep
    their lower throughput, so fixed-sigma noise costs them more SNR.
    """
    y = forward_psf(pupil, phase).values / circle_peak(pupil.grid)
    if noise.sigma > 0:
        if rng is None:
            rng = np.random.default_rng()
        y = y + rng.normal(0.0, noise.sigma, size=y.shape)
    return Psf(values=y, normalization_tag="circle_normalized", sigma=noise.sigma)


def strehl(
    pupil: PupilMask,
    phase: np.ndarray,
    estimate: np.ndarray,
    ref: str = "self_pupil",
) -> float:
    """Peak of the corrected PSF |F P exp(j(phi - phi_hat))|^2 over a reference peak.

    ref="self_pupil" divides by the pupil's own diffraction-limited peak
    (rho_P); ref="reference_circle" divides by the full circle's peak (rho_C),
    which also charges the throughput lost to shrinking the pupil.
    """
    num = float(np.max(forward_psf(pupil, phase - estimate).values))
    if ref == "self_pupil":
        den = float(np.max(forward_psf(pupil).values))
    elif ref == "reference_circle":
        den = circle_peak(pupil.grid)
    else:
        raise MetricError(f"unknown Strehl reference {ref!r}")
    if den == 0:
        raise MetricError("Strehl reference peak is zero (empty pupil)")
    return num / den


def psf_separation(pupil: PupilMask, phase: np.ndarray, normalized: bool = True) -> float:
    """||y - y_*||^2 between the PSF and its conjugate-flip candidate.

    Symmetric pupils give exactly ambiguous pairs, so this is 0 for them; the
    default normalization by ||y||^2 makes values comparable across pupil
    areas.
    """
    y = forward_psf(pupil, phase).values
    y_flip = forward_psf(pupil, conjugate_flip_phase(phase)).values
    sep = float(np.sum((y - y_flip) ** 2))
    if not normalized:
        return sep
    energy = float(np.sum(y**2))
    if energy == 0:
        raise MetricError("cannot normalize separation of an all-zero PSF")
    return sep / energy


def phase_error(
    estimate: np.ndarray,
    truth: np.ndarray,
    pupil: PupilMask,
    mode: str = "mod_piston",
) -> float:
    """Mean squared phase difference (rad^2) over the pupil support.

    mod_piston removes the support-mean difference first; intensity
    measurements carry no global phase, so that constant is unrecoverable.
    """
    support = pupil.values > 0
    if not np.any(support):
        raise MetricError("phase error is undefined on an empty pupil support")
    diff = (estimate - truth)[support]
    if mode == "mod_piston":
        diff = diff - diff.mean()
    elif mode != "raw":
        raise MetricError(f"unknown phase error mode {mode!r}")
    return float(np.mean(diff**2))


def field_error(estimate: np.ndarray, truth: np.ndarray, pupil: PupilMask) -> float:
    """Mean squared complex-field difference ||P e^{j phi_hat} - P e^{j phi}||^2 / |support|."""
    support = pupil.values > 0
    if not np.any(support):
        raise MetricError("field error is undefined on an empty pupil support")
    d = pupil_field(pupil, estimate) - pupil_field(pupil, truth)
    return float(np.mean(np.abs(d[support]) ** 2))


def psnr_vs_reference(sigma: float) -> float:
    """PSNR (dB) of the circle-normalized diffraction-limited PSF: -20 log10 sigma."""
    if sigma <= 0:
        raise MetricError("PSNR is infinite for sigma = 0")
    return -20.0 * np.log10(sigma)


def psf_psnr(clean_normalized: Psf, sigma: float) -> float:
    """Per-pupil PSNR: the clean circle-normalized peak against the noise floor."""
    if sigma <= 0:
        raise MetricError("PSNR is infinite for sigma = 0")
    if clean_normalized.normalization_tag != "circle_normalized":
        raise MetricError("psf_psnr expects a circle-normalized PSF")
    peak = float(np.max(clean_normalized.values))
    return 10.0 * np.log10(peak**2 / sigma**2)


METRIC_COLUMNS = (
    "pupil_id",
    "alpha",
    "sigma",
    "scale",
    "mse",
    "strehl_self",
    "strehl_circle",
    "separation",
    "psnr",
)


def write_metrics_csv(rows, path) -> None:
    """Rows are dicts keyed by METRIC_COLUMNS; missing entries render empty."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, restval="")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row.get(k, "") for k in METRIC_COLUMNS})
