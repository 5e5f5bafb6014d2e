"""Experiment drivers: the epsilon-sweep behind the separability property,
asymmetry-vs-recovery trend studies, aberration-scale studies, combinatorial
pupil search, single-system Strehl analysis, and image correction rendering.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.stats import spearmanr

from .grid import GridSpec
from .metrics import (
    NoiseModel,
    noisy_normalized_psf,
    phase_error,
    psf_psnr,
    psf_separation,
    strehl,
)
from .optics import Psf, centered_fft2, conjugate_flip_phase, forward_psf
from .pupils import PupilMask, PupilSet, build_pupil_set, flip_origin
from .retrieval import RetrievalConfig, retrieve_wavefront
from .zernike import ZernikeBasis, build_zernike_basis, synthesize_phase


class ExperimentError(ValueError):
    pass


DEFAULT_MODES = tuple(range(2, 16))  # piston excluded: invisible to intensity


@dataclass(frozen=True)
class PhaseSampler:
    """Per-mode uniform coefficients on [-coeff_scale, +coeff_scale]."""

    modes: tuple = DEFAULT_MODES
    coeff_scale: float = 1.0

    def __post_init__(self):
        if 1 in self.modes:
            raise ExperimentError("piston (Noll 1) is excluded from phase sampling")
        if self.coeff_scale <= 0:
            raise ExperimentError("coeff_scale must be positive")

    def sample_coeffs(self, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
        s = self.coeff_scale * scale
        return rng.uniform(-s, s, size=len(self.modes))


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec = GridSpec()
    bins: int = 30
    pupils_per_bin: int = 10
    phases_per_pupil: int = 50
    sigmas: tuple = (0.0,)
    scales: tuple = (1.0,)
    seed: int = 0
    modes: tuple = DEFAULT_MODES
    coeff_scale: float = 1.0
    min_area_fraction: float = 0.2
    estimator: Optional[RetrievalConfig] = None

    def __post_init__(self):
        if not self.sigmas or not self.scales:
            raise ExperimentError("sigma and scale lists must be nonempty")


@dataclass
class TrendReport:
    """Flat per-record rows plus per-asymmetry-bin aggregates."""

    rows: list
    bin_edges: np.ndarray
    sigmas: tuple
    scale: float

    def bin_means(self, metric: str, sigma: Optional[float] = None):
        """(bin index, mean alpha, mean metric) over bins that have data."""
        groups = {}
        for row in self.rows:
            if sigma is not None and row["sigma"] != sigma:
                continue
            if row.get(metric) is None:
                continue
            groups.setdefault(row["bin"], []).append((row["alpha"], row[metric]))
        bins = sorted(groups)
        alphas = np.array([np.mean([a for a, _ in groups[b]]) for b in bins])
        means = np.array([np.mean([v for _, v in groups[b]]) for b in bins])
        return np.array(bins), alphas, means

    def spearman_alpha(self, metric: str, sigma: Optional[float] = None) -> float:
        """Rank correlation between bin asymmetry and the binned mean metric."""
        _, alphas, means = self.bin_means(metric, sigma=sigma)
        if len(alphas) < 2:
            return float("nan")
        rho, _ = spearmanr(alphas, means)
        return float(rho)

    def gap_statistic(self, metric: str, sigma: Optional[float] = None, frac: float = 0.2):
        """Low-asymmetry-bins mean minus high-asymmetry-bins mean.

        Reported as a recoverability gap: error-like metrics (mse) use
        low - high directly, benefit-like metrics (separation, Strehl) use
        high - low, so a growing gap always means asymmetry helps more.
        """
        _, alphas, means = self.bin_means(metric, sigma=sigma)
        if len(means) < 2:
            return float("nan")
        k = max(1, int(round(frac * len(means))))
        order = np.argsort(alphas)
        low = float(np.mean(means[order[:k]]))
        high = float(np.mean(means[order[-k:]]))
        return (high - low) if metric in ("separation", "strehl_self", "strehl_circle", "flip_correct") else (low - high)


@lru_cache(maxsize=8)
def _cached_basis(grid: GridSpec, modes: tuple) -> ZernikeBasis:
    return build_zernike_basis(grid, modes)


def _record_rng(seed, *tags) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed)] + [int(t) for t in tags]))


def _trend_rows_for_pupil(pupil, bin_idx, cfg: ExperimentConfig, scale: float):
    """All records for one pupil; seeded per (pupil, phase, sigma), so results
    do not depend on scheduling."""
    basis = _cached_basis(cfg.grid, cfg.modes)
    sampler = PhaseSampler(modes=cfg.modes, coeff_scale=cfg.coeff_scale)
    from .metrics import circle_peak

    peak = circle_peak(cfg.grid)
    rows = []
    for phase_idx in range(cfg.phases_per_pupil):
        # stream tag 1 = held-out evaluation phases (tag 0 reserved for training)
        rng = _record_rng(cfg.seed, 1, pupil.pupil_id, phase_idx)
        coeffs = sampler.sample_coeffs(rng, scale=scale)
        phase = synthesize_phase(coeffs, basis)
        # the same two forward PSFs feed the separation metric, the noise
        # model, and the flip classifier, so compute them once per phase
        y_id = forward_psf(pupil, phase).values / peak
        y_fl = forward_psf(pupil, conjugate_flip_phase(phase)).values / peak
        energy = float(np.sum(y_id**2))
        separation = float(np.sum((y_id - y_fl) ** 2)) / energy
        clean = Psf(values=y_id, normalization_tag="circle_normalized", sigma=0.0)
        for sigma_idx, sigma in enumerate(cfg.sigmas):
            noise_rng = _record_rng(cfg.seed, 2, pupil.pupil_id, phase_idx, sigma_idx)
            psf = (
                clean
                if sigma == 0
                else Psf(
                    values=clean.values + noise_rng.normal(0.0, sigma, clean.values.shape),
                    normalization_tag="circle_normalized",
                    sigma=sigma,
                )
            )
            e_id = float(np.sum((psf.values - y_id) ** 2))
            e_fl = float(np.sum((psf.values - y_fl) ** 2))
            psf_energy = float(np.sum(psf.values**2))
            choice = "identity" if e_id <= e_fl else "flipped"
            margin = abs(e_id - e_fl) / psf_energy if psf_energy > 0 else 0.0
            row = {
                "pupil_id": pupil.pupil_id,
                "alpha": pupil.alpha,
                "bin": bin_idx,
                "sigma": sigma,
                "scale": scale,
                "separation": separation,
                "flip_correct": 1.0 if choice == "identity" else 0.0,
                "flip_margin": margin,
                "psnr": psf_psnr(clean, sigma) if sigma > 0 else None,
                "mse": None,
                "strehl_self": None,
                "strehl_circle": None,
            }
            if cfg.estimator is not None:
                est_rng = _record_rng(cfg.seed, 3, pupil.pupil_id, phase_idx, sigma_idx)
                est = retrieve_wavefront(psf, pupil, cfg.estimator, rng=est_rng)
                row["mse"] = phase_error(est.phase, phase, pupil)
                row["strehl_self"] = strehl(pupil, phase, est.phase, ref="self_pupil")
                row["strehl_circle"] = strehl(pupil, phase, est.phase, ref="reference_circle")
            rows.append(row)
    return rows


def run_trend_study(
    cfg: ExperimentConfig,
    pupil_set: Optional[PupilSet] = None,
    scale: Optional[float] = None,
    jobs: int = 1,
) -> TrendReport:
    """Per-record metrics across the binned pupil set, aggregated by bin."""
    if pupil_set is None:
        pupil_set = build_pupil_set(
            cfg.pupils_per_bin,
            cfg.grid,
            bins=cfg.bins,
            seed=cfg.seed,
            min_area_fraction=cfg.min_area_fraction,
        )
    if scale is None:
        scale = cfg.scales[0]
    tasks = list(zip(pupil_set.pupils, pupil_set.bin_of))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(
                pool.map(
                    _trend_rows_for_pupil,
                    [p for p, _ in tasks],
                    [int(b) for _, b in tasks],
                    [cfg] * len(tasks),
                    [scale] * len(tasks),
                )
            )
    else:
        chunks = [_trend_rows_for_pupil(p, int(b), cfg, scale) for p, b in tasks]
    rows = [row for chunk in chunks for row in chunk]
    return TrendReport(rows=rows, bin_edges=pupil_set.bin_edges, sigmas=cfg.sigmas, scale=scale)


def run_scale_study(
    cfg: ExperimentConfig, pupil_set: Optional[PupilSet] = None, jobs: int = 1
):
    """One TrendReport per aberration scale, on a shared pupil set."""
    if pupil_set is None:
        pupil_set = build_pupil_set(
            cfg.pupils_per_bin,
            cfg.grid,
            bins=cfg.bins,
            seed=cfg.seed,
            min_area_fraction=cfg.min_area_fraction,
        )
    return {
        s: run_trend_study(cfg, pupil_set=pupil_set, scale=s, jobs=jobs) for s in cfg.scales
    }


@dataclass(frozen=True)
class Property1Result:
    epsilons: np.ndarray
    exact: np.ndarray  # ||y - y_*||^2 at each epsilon
    predicted: np.ndarray  # small-angle closed form 16 eps^2 ||Im(b c - a d)||^2
    slope: float  # log-log fit of exact vs epsilon

    @property
    def ratios(self) -> np.ndarray:
        return self.exact / self.predicted


def property1_sweep(
    p_symmetric: np.ndarray,
    p_asymmetric: np.ndarray,
    phase: np.ndarray,
    epsilons,
    grid: GridSpec,
) -> Property1Result:
    """Exact PSF separation of P_s + eps * P_a against its quadratic prediction.

    Requires a flip-invariant P_s and a small phase (max 0.1 rad) so the
    small-angle expansion behind the closed form applies; the spectra of
    P_s and P_s * phi must be real, which holds when both are even.
    """
    if not np.array_equal(p_symmetric, flip_origin(p_symmetric)):
        raise ExperimentError("p_symmetric is not invariant under the origin flip")
    if np.max(np.abs(phase)) > 0.1 + 1e-12:
        raise ExperimentError("sweep phase must stay within 0.1 rad (small-angle regime)")
    epsilons = np.asarray(list(epsilons), dtype=float)
    a = centered_fft2(p_symmetric)
    b = centered_fft2(p_symmetric * phase)
    c = centered_fft2(p_asymmetric)
    d = centered_fft2(p_asymmetric * phase)
    core = float(np.sum(np.imag(b.real * c - a.real * d) ** 2))
    predicted = 16.0 * epsilons**2 * core
    exact = np.empty_like(epsilons)
    flipped_phase = conjugate_flip_phase(phase)
    for i, eps in enumerate(epsilons):
        p = PupilMask(values=p_symmetric + eps * p_asymmetric, grid=grid)
        y = forward_psf(p, phase).values
        y_flip = forward_psf(p, flipped_phase).values
        exact[i] = float(np.sum((y - y_flip) ** 2))
    good = exact > 0
    if good.sum() >= 2:
        slope = float(np.polyfit(np.log(epsilons[good]), np.log(exact[good]), 1)[0])
    else:
        slope = float("nan")
    return Property1Result(epsilons=epsilons, exact=exact, predicted=predicted, slope=slope)


@dataclass(frozen=True)
class SearchResult:
    best_index: int
    scores: np.ndarray  # per-candidate expected score
    ranking: np.ndarray  # candidate indices, best first


def pupil_search(
    candidates,
    sampler: PhaseSampler,
    scoring: str = "separation_surrogate",
    sigma: float = 0.0,
    n_phases: int = 50,
    seed: int = 0,
    estimator_cfg: Optional[RetrievalConfig] = None,
    grid: Optional[GridSpec] = None,
) -> SearchResult:
    """Monte-Carlo search over a candidate pupil list.

    Shares one phase draw across all candidates (common random numbers) so
    the ranking variance comes from the pupils, not the sampling.  The
    separation surrogate is maximized; estimator MSE is minimized.

    Separation scores below FFT round-off (1e-12) are clamped to exactly
    zero: flip-symmetric pupils all have a true separation of zero, and
    ranking them on residual noise would make their relative order depend
    on the seed.
    """
    candidates = list(candidates)
    if not candidates:
        raise ExperimentError("candidate list is empty")
    if scoring not in ("separation_surrogate", "estimator_mse"):
        raise ExperimentError(f"unknown scoring {scoring!r}")
    if grid is None:
        grid = candidates[0].grid
    basis = _cached_basis(grid, sampler.modes)
    coeff_draws = [
        sampler.sample_coeffs(_record_rng(seed, 10, k)) for k in range(n_phases)
    ]
    phases = [synthesize_phase(c, basis) for c in coeff_draws]
    scores = np.empty(len(candidates))
    for i, pupil in enumerate(candidates):
        vals = []
        for k, phase in enumerate(phases):
            if scoring == "separation_surrogate":
                vals.append(psf_separation(pupil, phase))
            else:
                cfg = estimator_cfg or RetrievalConfig()
                noise_rng = _record_rng(seed, 11, k)
                psf = noisy_normalized_psf(pupil, phase, NoiseModel(sigma), rng=noise_rng)
                est = retrieve_wavefront(psf, pupil, cfg, rng=_record_rng(seed, 12, i, k))
                vals.append(phase_error(est.phase, phase, pupil))
        scores[i] = float(np.mean(vals))
    if scoring == "separation_surrogate":
        scores[scores < 1e-12] = 0.0
        ranking = np.argsort(-scores, kind="stable")
    else:
        ranking = np.argsort(scores, kind="stable")
    return SearchResult(best_index=int(ranking[0]), scores=scores, ranking=ranking)


def single_system_analysis(
    cfg: ExperimentConfig, pupil_set: Optional[PupilSet] = None, jobs: int = 1
) -> TrendReport:
    """Trend study scored against the full-circle diffraction limit (rho_C).

    The report's strehl_circle column folds the throughput penalty of a
    shrunken pupil into the correction quality, the most pessimistic reading
    of the design trade-off.
    """
    if cfg.estimator is None:
        cfg = ExperimentConfig(**{**asdict_config(cfg), "estimator": RetrievalConfig()})
    return run_trend_study(cfg, pupil_set=pupil_set, jobs=jobs)


def asdict_config(cfg: ExperimentConfig) -> dict:
    return {
        "grid": cfg.grid,
        "bins": cfg.bins,
        "pupils_per_bin": cfg.pupils_per_bin,
        "phases_per_pupil": cfg.phases_per_pupil,
        "sigmas": cfg.sigmas,
        "scales": cfg.scales,
        "seed": cfg.seed,
        "modes": cfg.modes,
        "coeff_scale": cfg.coeff_scale,
        "min_area_fraction": cfg.min_area_fraction,
        "estimator": cfg.estimator,
    }


def render_correction(
    image: np.ndarray,
    pupil: PupilMask,
    phase: np.ndarray,
    estimate: np.ndarray,
):
    """(aberrated, corrected) images under cyclic convolution with unit-sum PSFs.

    The aberration PSF comes from the true phase; the correction PSF from the
    residual phase after subtracting the estimate.
    """
    image = np.asarray(image, dtype=float)
    if image.ndim != 2 or image.size == 0 or image.shape[0] != image.shape[1]:
        raise ExperimentError(f"need a nonempty square grayscale image, got {image.shape}")
    aberrated = _convolve_with_psf(image, forward_psf(pupil, phase).values)
    corrected = _convolve_with_psf(image, forward_psf(pupil, phase - estimate).values)
    return aberrated, corrected


def _convolve_with_psf(image: np.ndarray, psf: np.ndarray) -> np.ndarray:
    kernel = _fit_to_shape(psf, image.shape)
    total = kernel.sum()
    if total <= 0:
        raise ExperimentError("PSF has no energy")
    kernel = kernel / total
    out = np.fft.ifft2(np.fft.fft2(image) * np.fft.fft2(np.fft.ifftshift(kernel)))
    return np.real(out)


def _fit_to_shape(psf: np.ndarray, shape) -> np.ndarray:
    """Center-crop or zero-pad a centered PSF to the target shape."""
    out = np.zeros(shape)
    src = psf
    for axis in (0, 1):
        n_src, n_dst = src.shape[axis], shape[axis]
        if n_src > n_dst:
            start = n_src // 2 - n_dst // 2
            src = np.take(src, range(start, start + n_dst), axis=axis)
    i0 = shape[0] // 2 - src.shape[0] // 2
    j0 = shape[1] // 2 - src.shape[1] // 2
    out[i0 : i0 + src.shape[0], j0 : j0 + src.shape[1]] = src
    return out


def write_run_manifest(path, cfg: ExperimentConfig, pupil_set: Optional[PupilSet] = None):
    """JSON provenance record: effective config, seed, and pupil content hash."""
    from .datasets import fnv1a64

    payload = {
        "config": {
            "grid": {"n": cfg.grid.n, "circle_diameter_px": cfg.grid.circle_diameter_px},
            "bins": cfg.bins,
            "pupils_per_bin": cfg.pupils_per_bin,
            "phases_per_pupil": cfg.phases_per_pupil,
            "sigmas": list(cfg.sigmas),
            "scales": list(cfg.scales),
            "modes": list(cfg.modes),
            "coeff_scale": cfg.coeff_scale,
            "min_area_fraction": cfg.min_area_fraction,
            "estimator": None
            if cfg.estimator is None
            else {
                "max_iters": cfg.estimator.max_iters,
                "beta": cfg.estimator.beta,
                "restarts": cfg.estimator.restarts,
                "init": cfg.estimator.init,
            },
        },
        "seed": cfg.seed,
    }
    if pupil_set is not None:
        h = 0xCBF29CE484222325
        for p in pupil_set.pupils:
            h = fnv1a64(p.values.astype(np.uint8).tobytes(), h)
        payload["pupil_set_hash"] = f"{h:016x}"
        payload["pupil_count"] = len(pupil_set.pupils)
        payload["warnings"] = pupil_set.warnings
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
