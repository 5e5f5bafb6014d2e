"""Classical single-shot wavefront estimator.

Support-constrained alternating projections (Gerchberg-Saxton, with an
optional hybrid input-output relaxation) between the measured Fourier
magnitude and the unit-modulus pupil constraint, plus conjugate-flip
disambiguation and Zernike coefficient fitting.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .metrics import circle_peak
from .optics import Psf, centered_fft2, centered_ifft2, conjugate_flip_phase, forward_psf
from .pupils import PupilMask
from .zernike import ZernikeBasis


class EstimationError(ValueError):
    pass


@dataclass(frozen=True)
class RetrievalConfig:
    max_iters: int = 500
    beta: float = 0.9  # 1.0 selects pure alternating projections (error reduction)
    restarts: int = 10
    init: str = "flat"  # flat | random | given

    def __post_init__(self):
        if self.max_iters < 1:
            raise EstimationError("max_iters must be >= 1")
        if self.restarts < 1:
            raise EstimationError("restarts must be >= 1")
        if not (0.0 < self.beta <= 1.0):
            raise EstimationError("beta must be in (0, 1]")
        if self.init not in ("flat", "random", "given"):
            raise EstimationError(f"unknown init {self.init!r}")


@dataclass(frozen=True)
class Estimate:
    phase: np.ndarray
    residual: float  # final ||sqrt(y) - |F P x_hat|||^2 at model scale
    flip_choice: str  # identity | flipped
    residual_history: Optional[np.ndarray] = None


def _measured_magnitude(psf: Psf, pupil: PupilMask) -> np.ndarray:
    """sqrt of the measurement, rescaled to the energy of a unit-modulus field.

    Negative noisy pixels are clipped; the Parseval energy n^2 * area(P) of
    the clean model fixes the overall scale regardless of how the PSF was
    normalized on disk or sensor.
    """
    m = np.sqrt(np.clip(psf.values, 0.0, None))
    energy = float(np.sum(m**2))
    if energy == 0:
        raise EstimationError("measurement is identically zero")
    target = pupil.grid.n**2 * float(np.sum(pupil.values**2))
    return m * np.sqrt(target / energy)


def _run_projections(m, pupil, phase0, max_iters, beta):
    support = pupil.values > 0
    g = pupil.values * np.exp(1j * phase0)
    # with beta < 1 run HIO, then settle with a short error-reduction tail
    er_tail = max_iters if beta == 1.0 else max(10, max_iters // 10)
    residuals = np.empty(max_iters)
    for k in range(max_iters):
        spectrum = centered_fft2(g)
        mag = np.abs(spectrum)
        residuals[k] = float(np.sum((m - mag) ** 2))
        projected = centered_ifft2(m * spectrum / np.where(mag > 0, mag, 1.0))
        g_new = np.where(support, pupil.values * np.exp(1j * np.angle(projected)), 0.0)
        if beta < 1.0 and k < max_iters - er_tail:
            g_new = np.where(support, g_new, g - beta * projected)
        g = g_new
    spectrum = centered_fft2(g)
    final = float(np.sum((m - np.abs(spectrum)) ** 2))
    return g, final, residuals


def retrieve_wavefront(
    psf: Psf,
    pupil: PupilMask,
    cfg: RetrievalConfig = RetrievalConfig(),
    init_phase: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
) -> Estimate:
    """Best-of-restarts phase estimate on the pupil support, piston removed.

    Non-convergence is not an error; the residual says how well the estimate
    explains the measurement.  The first restart uses cfg.init, further
    restarts use random phase initializations.
    """
    if pupil.area == 0:
        raise EstimationError("cannot retrieve a wavefront through a zero pupil")
    if cfg.init == "given" and init_phase is None:
        raise EstimationError("init='given' requires init_phase")
    if rng is None:
        rng = np.random.default_rng(0)
    m = _measured_magnitude(psf, pupil)
    support = pupil.values > 0
    best = None
    for r in range(cfg.restarts):
        if r == 0 and cfg.init == "flat":
            phase0 = np.zeros_like(pupil.values)
        elif r == 0 and cfg.init == "given":
            phase0 = init_phase
        else:
            phase0 = rng.uniform(-np.pi, np.pi, size=pupil.values.shape)
        g, residual, history = _run_projections(m, pupil, phase0, cfg.max_iters, cfg.beta)
        if best is None or residual < best[1]:
            best = (g, residual, history)
    g, residual, history = best
    phase = np.where(support, np.angle(g), 0.0)
    phase = np.where(support, phase - phase[support].mean(), 0.0)
    choice, _ = disambiguate_flip(psf, pupil, phase)
    if choice == "flipped":
        flipped = conjugate_flip_phase(phase)
        phase = np.where(support, flipped - flipped[support].mean(), 0.0)
    return Estimate(phase=phase, residual=residual, flip_choice=choice, residual_history=history)


def disambiguate_flip(psf: Psf, pupil: PupilMask, candidate: np.ndarray):
    """Pick the flip orientation whose PSF best explains the measurement.

    Returns ("identity" or "flipped", margin) with margin = |e_id - e_fl| /
    ||y||^2.  On symmetric pupils both candidates produce the same PSF and
    the margin collapses to round-off: the non-uniqueness made measurable.
    """
    y = psf.values
    scale = circle_peak(pupil.grid) if psf.normalization_tag == "circle_normalized" else 1.0
    y_id = forward_psf(pupil, candidate).values / scale
    y_fl = forward_psf(pupil, conjugate_flip_phase(candidate)).values / scale
    e_id = float(np.sum((y - y_id) ** 2))
    e_fl = float(np.sum((y - y_fl) ** 2))
    energy = float(np.sum(y**2))
    margin = abs(e_id - e_fl) / energy if energy > 0 else 0.0
    return ("identity" if e_id <= e_fl else "flipped"), margin


def fit_zernike(phase: np.ndarray, pupil: PupilMask, basis: ZernikeBasis) -> np.ndarray:
    """Least-squares Zernike coefficients of a phase map over the pupil support.

    The masked basis loses orthogonality on sub-supports, so this solves the
    normal equations rather than projecting mode by mode.
    """
    support = pupil.values > 0
    a = basis.maps[:, support].T  # (npix, nmodes)
    b = phase[support]
    if a.shape[0] < a.shape[1]:
        raise EstimationError("pupil support has fewer pixels than basis modes")
    coeffs, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < len(basis):
        cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
        raise EstimationError(
            f"masked basis is rank-deficient on this pupil (rank {rank} of "
            f"{len(basis)}, condition number {cond:.3g})"
        )
    return coeffs


def ambiguous_average_mismatch(
    pupil: PupilMask, phase: np.ndarray, pi1: float, pi2: float
) -> float:
    """Mismatch of the bimodal-average field pi1 x + pi2 x_* against the true PSF.

    Even when y == y_* (symmetric pupil), the averaged field's PSF differs
    from y because the forward model is nonlinear; this is the penalty that
    pushes an MMSE estimator away from hedging between the two modes.
    """
    if pi1 < 0 or pi2 < 0 or abs(pi1 + pi2 - 1.0) > 1e-12:
        raise EstimationError("weights must be nonnegative and sum to 1")
    y = forward_psf(pupil, phase).values
    x_avg = pi1 * np.exp(1j * phase) + pi2 * np.exp(1j * conjugate_flip_phase(phase))
    y_avg = np.abs(centered_fft2(pupil.values * x_avg)) ** 2
    energy = float(np.sum(y**2))
    if energy == 0:
        raise EstimationError("zero PSF")
    return float(np.sum((y - y_avg) ** 2)) / energy
