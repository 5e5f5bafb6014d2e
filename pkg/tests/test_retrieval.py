import numpy as np
import pytest

from pupilkit import (
    NoiseModel,
    RetrievalConfig,
    ambiguous_average_mismatch,
    build_zernike_basis,
    disambiguate_flip,
    fit_zernike,
    noisy_normalized_psf,
    phase_error,
    retrieve_wavefront,
    synthesize_phase,
)
from pupilkit.retrieval import EstimationError


def test_config_validation():
    with pytest.raises(EstimationError):
        RetrievalConfig(max_iters=0)
    with pytest.raises(EstimationError):
        RetrievalConfig(beta=0.0)
    with pytest.raises(EstimationError):
        RetrievalConfig(beta=1.5)
    with pytest.raises(EstimationError):
        RetrievalConfig(restarts=0)
    with pytest.raises(EstimationError):
        RetrievalConfig(init="bogus")


def test_flat_init_recovers_zero_phase(circle64):
    n = circle64.grid.n
    psf = noisy_normalized_psf(circle64, np.zeros((n, n)), NoiseModel(0.0))
    cfg = RetrievalConfig(max_iters=20, beta=1.0, restarts=1)
    est = retrieve_wavefront(psf, circle64, cfg)
    assert est.residual < 1e-12
    assert phase_error(est.phase, np.zeros((n, n)), circle64) < 1e-12


def test_small_aberration_recovery_on_triangle(triangle64, basis64):
    rng = np.random.default_rng(0)
    phase = synthesize_phase(rng.uniform(-0.25, 0.25, 14), basis64)
    psf = noisy_normalized_psf(triangle64, phase, NoiseModel(0.0))
    cfg = RetrievalConfig(max_iters=150, beta=0.9, restarts=2)
    est = retrieve_wavefront(psf, triangle64, cfg, rng=np.random.default_rng(1))
    assert phase_error(est.phase, phase, triangle64) < 1e-3


def test_error_reduction_residual_is_monotone(triangle64, basis64):
    phase = synthesize_phase(np.random.default_rng(2).uniform(-0.3, 0.3, 14), basis64)
    psf = noisy_normalized_psf(triangle64, phase, NoiseModel(0.0))
    cfg = RetrievalConfig(max_iters=60, beta=1.0, restarts=1)
    est = retrieve_wavefront(psf, triangle64, cfg)
    hist = est.residual_history
    assert np.all(hist[1:] <= hist[:-1] + 1e-9 * hist[0])


def test_estimate_has_zero_piston(triangle64, basis64):
    phase = synthesize_phase(np.random.default_rng(3).uniform(-0.3, 0.3, 14), basis64)
    psf = noisy_normalized_psf(triangle64, phase, NoiseModel(0.0))
    cfg = RetrievalConfig(max_iters=40, beta=0.9, restarts=1)
    est = retrieve_wavefront(psf, triangle64, cfg)
    support = triangle64.values > 0
    assert abs(est.phase[support].mean()) < 1e-10
    assert np.all(est.phase[~support] == 0.0)


def test_disambiguation_picks_correct_orientation(triangle64, basis64):
    from pupilkit.optics import conjugate_flip_phase

    phase = synthesize_phase(np.random.default_rng(4).uniform(-1, 1, 14), basis64)
    psf = noisy_normalized_psf(triangle64, phase, NoiseModel(0.0))
    choice, margin = disambiguate_flip(psf, triangle64, phase)
    assert choice == "identity" and margin > 1e-6
    choice_fl, _ = disambiguate_flip(psf, triangle64, conjugate_flip_phase(phase))
    assert choice_fl == "flipped"


def test_fit_zernike_roundtrip(triangle64, basis64):
    coeffs = np.random.default_rng(5).uniform(-1, 1, 14)
    phase = synthesize_phase(coeffs, basis64)
    fitted = fit_zernike(phase, triangle64, basis64)
    assert np.allclose(fitted, coeffs, atol=1e-8)


def test_fit_zernike_needs_enough_pixels(grid64):
    from pupilkit.pupils import PupilMask

    tiny = np.zeros((grid64.n, grid64.n))
    tiny[grid64.n // 2, grid64.n // 2 : grid64.n // 2 + 3] = 1.0
    pupil = PupilMask(values=tiny, grid=grid64)
    basis = build_zernike_basis(grid64, range(2, 16))
    with pytest.raises(EstimationError):
        fit_zernike(np.zeros((grid64.n, grid64.n)), pupil, basis)


def test_ambiguous_average_is_penalized(triangle64, basis64):
    phase = synthesize_phase(np.random.default_rng(6).uniform(-1, 1, 14), basis64)
    assert ambiguous_average_mismatch(triangle64, phase, 1.0, 0.0) < 1e-12
    assert ambiguous_average_mismatch(triangle64, phase, 0.5, 0.5) > 1e-4
    with pytest.raises(EstimationError):
        ambiguous_average_mismatch(triangle64, phase, 0.7, 0.7)


def test_hedging_penalized_even_on_symmetric_pupil(circle64, basis64):
    # y == y_* for the circle, yet averaging the two fields still mismatches:
    # the forward model is nonlinear in the field
    phase = synthesize_phase(np.random.default_rng(7).uniform(-1, 1, 14), basis64)
    assert ambiguous_average_mismatch(circle64, phase, 0.5, 0.5) > 1e-4
