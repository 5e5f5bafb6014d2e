"""Acceptance gate: twelve pinned checks covering the asymmetry metric, the
forward-model identities, the recoverability trends, the estimator, the
dataset format, and the pupil search.  Each test prints one PASS/FAIL line.
"""

import sys
import time

import numpy as np
import pytest
from scipy.signal import convolve2d
from scipy.stats import spearmanr

import pupilkit as pk
from pupilkit.datasets import DatasetError, generate_triplet_psf
from pupilkit.experiments import ExperimentConfig, run_scale_study, run_trend_study
from pupilkit.metrics import circle_peak
from pupilkit.optics import even_symmetrize
from pupilkit.pupils import _max_overlap_fft, asymmetry_brute_force
from pupilkit.retrieval import disambiguate_flip

from .conftest import random_symmetric_hull

GRID = pk.GridSpec(n=128, circle_diameter_px=64)
SET_SEED = 42


def _report(num: int, label: str, ok: bool) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"criterion {num:2d} [{label}]: {status}", file=sys.__stdout__, flush=True)
    assert ok, f"criterion {num} ({label}) failed"


@pytest.fixture(scope="module")
def pupil_set():
    t0 = time.perf_counter()
    pset = pk.build_pupil_set(10, GRID, bins=30, seed=SET_SEED)
    pset.build_seconds = time.perf_counter() - t0
    return pset


@pytest.fixture(scope="module")
def trend_report(pupil_set):
    cfg = ExperimentConfig(
        grid=GRID, bins=30, pupils_per_bin=10, phases_per_pupil=50,
        sigmas=(0.0, 0.01), scales=(1.0,), seed=SET_SEED,
    )
    t0 = time.perf_counter()
    report = run_trend_study(cfg, pupil_set=pupil_set)
    report.elapsed_seconds = time.perf_counter() - t0
    return report


def test_criterion_1_asymmetry_anchors():
    t0 = time.perf_counter()
    a_circle = pk.asymmetry(pk.circle_pupil(GRID))
    t_circle = time.perf_counter() - t0

    t0 = time.perf_counter()
    a_triangle = pk.asymmetry(pk.rasterize_hull(pk.regular_polygon_spec(3), GRID))
    t_triangle = time.perf_counter() - t0

    rng = np.random.default_rng(0)
    sym_alphas, t0 = [], time.perf_counter()
    shapes = [pk.regular_polygon_spec(4, rotation=np.pi / 4), pk.regular_polygon_spec(6)]
    shapes += [random_symmetric_hull(rng) for _ in range(3)]
    for spec in shapes:
        mask = pk.rasterize_hull(spec, GRID)
        if mask.area > 100:
            sym_alphas.append(pk.asymmetry(mask))
    t_sym = (time.perf_counter() - t0) / max(len(sym_alphas), 1)

    ok = (
        a_circle <= 0.01
        and 0.30 <= a_triangle <= 0.36
        and all(a <= 0.01 for a in sym_alphas)
        and max(t_circle, t_triangle, t_sym) < 1.0
    )
    _report(1, "asymmetry anchors", ok)


def test_criterion_2_metric_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(100)
    ok = True
    for _ in range(50):
        p = (rng.uniform(size=(32, 32)) < rng.uniform(0.1, 0.6)).astype(float)
        if p.sum() == 0:
            p[16, 16] = 1.0
        fast = pk.asymmetry(p)
        slow = asymmetry_brute_force(p)
        peak, idx = _max_overlap_fft(p)
        conv = convolve2d(p, p, mode="full")  # direct-sum oracle
        ok = ok and abs(fast - slow) < 1e-9
        ok = ok and abs(peak - conv.max()) < 1e-9
        ok = ok and conv[idx] >= conv.max() - 1e-9  # argmax is a true maximizer
    elapsed = time.perf_counter() - t0
    _report(2, "FFT vs brute-force oracle", ok and elapsed < 10.0)


def test_criterion_3_separability_quadratic_law():
    t0 = time.perf_counter()
    parts = pk.decompose(pk.rasterize_hull(pk.regular_polygon_spec(3), GRID))
    basis = pk.build_zernike_basis(GRID, (4, 5, 6, 11))
    phi = even_symmetrize(
        pk.synthesize_phase(np.random.default_rng(7).uniform(-1, 1, 4), basis)
    )
    phi *= 0.05 / np.max(np.abs(phi))
    eps = np.logspace(-3, -1, 10)
    res = pk.property1_sweep(parts.symmetric, parts.asymmetric, phi, eps, GRID)
    elapsed = time.perf_counter() - t0
    ok = (
        abs(res.slope - 2.0) <= 0.05
        and abs(res.ratios[0] - 1.0) <= 0.05
        and abs(res.ratios[-1] - 1.0) <= 0.15
        and elapsed < 30.0
    )
    _report(3, "quadratic separation law", ok)


def test_criterion_4_symmetric_null():
    g = pk.GridSpec(n=64, circle_diameter_px=32)
    basis = pk.build_zernike_basis(g, range(2, 16))
    rng = np.random.default_rng(1)
    ok, tested = True, 0
    while tested < 100:
        mask = pk.rasterize_hull(random_symmetric_hull(rng), g)
        if mask.area < 50:
            continue
        tested += 1
        phi = pk.synthesize_phase(rng.uniform(-1, 1, 14), basis)
        ok = ok and pk.psf_separation(mask, phi) < 1e-10
        psf = pk.noisy_normalized_psf(mask, phi, pk.NoiseModel(0.0))
        _, margin = disambiguate_flip(psf, mask, phi)
        ok = ok and margin < 1e-10
    _report(4, "symmetric-pupil exact ambiguity", ok)


def test_criterion_5_separation_trend(pupil_set, trend_report):
    rho = trend_report.spearman_alpha("separation", sigma=0.0)
    budget = pupil_set.build_seconds + trend_report.elapsed_seconds
    _report(5, "separation rises with asymmetry", rho > 0.8 and budget < 300.0)


def test_criterion_6_disambiguation_trend(pupil_set, trend_report):
    bins, alphas, acc = trend_report.bin_means("flip_correct", sigma=0.01)
    low = acc[alphas < 0.02]
    high = acc[alphas > 0.30]
    rho = spearmanr(alphas, acc)[0]
    budget = pupil_set.build_seconds + trend_report.elapsed_seconds
    print(
        f"criterion  6 measured: low-alpha-bin accuracy max {low.max():.3f} "
        f"(need <= 0.60), high-alpha-bin accuracy min {high.min():.3f} "
        f"(need >= 0.95), spearman(alpha, accuracy) {rho:.3f} (need > 0.8)",
        file=sys.__stdout__, flush=True,
    )
    ok = (
        len(low) > 0 and np.all(low <= 0.60)
        and len(high) > 0 and np.all(high >= 0.95)
        and rho > 0.8
        and budget < 600.0
    )
    _report(6, "flip classification tracks asymmetry", ok)


def test_criterion_7_strehl_identities():
    basis = pk.build_zernike_basis(GRID, range(2, 16))
    rng = np.random.default_rng(2)
    ok = True
    for k in range(100):
        spec, mask = pk.sample_pupil(rng, GRID)
        phi = pk.synthesize_phase(rng.uniform(-1, 1, 14), basis)
        ok = ok and pk.strehl(mask, phi, phi) == 1.0
        rho_c = pk.strehl(mask, phi, phi, ref="reference_circle")
        expected = float(np.max(pk.forward_psf(mask).values)) / circle_peak(GRID)
        ok = ok and abs(rho_c - expected) <= 1e-10 * max(expected, 1e-30)
    # perfect correction through a half-area pupil: peak scales with area^2
    u, v = GRID.pixel_coords()
    half = ((u * u + v * v) <= (GRID.radius_px**2) / 2.0).astype(float)
    hp = pk.PupilMask(values=half, grid=GRID)
    zero = np.zeros((GRID.n, GRID.n))
    rho_half = pk.strehl(hp, zero, zero, ref="reference_circle")
    ratio = (hp.area / GRID.circle_area()) ** 2
    ok = ok and abs(rho_half - ratio) < 1e-10 and abs(rho_half - 0.25) < 0.02
    _report(7, "Strehl identities", ok)


def test_criterion_8_scale_gap(pupil_set):
    scales = (0.25, 0.5, 1.0, 2.0)
    cfg = ExperimentConfig(
        grid=GRID, bins=30, pupils_per_bin=10, phases_per_pupil=20,
        sigmas=(0.0,), scales=scales, seed=SET_SEED,
    )
    t0 = time.perf_counter()
    reports = run_scale_study(cfg, pupil_set=pupil_set)
    gaps = [reports[s].gap_statistic("separation", sigma=0.0) for s in scales]
    elapsed = time.perf_counter() - t0
    rho = spearmanr(scales, gaps)[0]
    _report(8, "asymmetry gap grows with aberration scale", rho > 0 and elapsed < 300.0)


def test_criterion_9_search_ranks_candidates():
    g = pk.GridSpec(n=64, circle_diameter_px=32)
    candidates = {
        "square": pk.rasterize_hull(pk.regular_polygon_spec(4, rotation=np.pi / 4), g),
        "circle": pk.circle_pupil(g),
        "triangle": pk.rasterize_hull(pk.regular_polygon_spec(3), g),
    }
    names = list(candidates)
    result = pk.pupil_search(list(candidates.values()), pk.PhaseSampler(), n_phases=50, seed=0)
    ranked = [names[i] for i in result.ranking]
    _report(9, "search: triangle first, circle last", ranked[0] == "triangle" and ranked[-1] == "circle")


def test_criterion_10_dataset_round_trip(tmp_path):
    g = pk.GridSpec(n=32, circle_diameter_px=16)
    pset = pk.build_pupil_set(1, g, bins=5, seed=3, max_samples=3000)
    modes = (2, 3, 4, 5)
    basis = pk.build_zernike_basis(g, modes)
    rng = np.random.default_rng(3)
    records = []
    while len(records) < 1000:
        pupil = pset.pupils[len(records) % len(pset.pupils)]
        rec = pk.TripletRecord(
            pupil_id=pupil.pupil_id,
            alpha=pupil.alpha,
            coeffs=rng.uniform(-1, 1, len(modes)).astype(np.float32),
            sigma=0.01 if len(records) % 2 else 0.0,
            seed=int(rng.integers(0, 2**32)),
        )
        records.append(
            pk.TripletRecord(
                pupil_id=rec.pupil_id, alpha=rec.alpha, coeffs=rec.coeffs,
                sigma=rec.sigma, seed=rec.seed, psf=generate_triplet_psf(rec, pupil, basis),
            )
        )
    manifest = pk.DatasetManifest(
        grid=g, bin_edges=list(pset.bin_edges),
        counts_per_bin=[1000], zernike_modes=list(modes),
        sigmas=[0.0, 0.01], seed=3,
    )
    path = tmp_path / "triplets"
    pk.write_dataset(records, manifest, path, pupils=pset.pupils, hull_specs=pset.specs)
    loaded, pupils, _, loaded_manifest = pk.read_dataset(path)

    by_id = {p.pupil_id: p for p in pupils}
    ok = len(loaded) == 1000
    expected = sorted(records, key=lambda r: r.pupil_id)
    for a, b in zip(expected, loaded):
        ok = ok and a.pupil_id == b.pupil_id and a.seed == b.seed
        ok = ok and np.array_equal(a.coeffs, b.coeffs) and np.array_equal(a.psf, b.psf)
        regen = pk.regenerate_psf(b, by_id[b.pupil_id], loaded_manifest)
        ok = ok and np.array_equal(regen.values, b.psf)
        if not ok:
            break

    target = next(path.glob("records-*.bin"))
    data = bytearray(target.read_bytes())
    data[100] ^= 0x01
    target.write_bytes(bytes(data))
    try:
        pk.read_dataset(path)
        tamper_caught = False
    except DatasetError:
        tamper_caught = True
    _report(10, "dataset bitwise round trip + tamper detection", ok and tamper_caught)


def test_criterion_11_noise_bookkeeping(trend_report):
    exact = pk.psnr_vs_reference(0.01) == 40.0
    rho = trend_report.spearman_alpha("psnr", sigma=0.01)
    _report(11, "PSNR accounting", exact and rho < 0.0)


def test_criterion_12_estimator_error_ordering():
    g = pk.GridSpec(n=64, circle_diameter_px=32)
    basis = pk.build_zernike_basis(g, range(2, 16))
    cfg = pk.RetrievalConfig(max_iters=150, beta=0.9, restarts=2)
    mean_mse = {}
    for name, spec in (("high_asymmetry", pk.regular_polygon_spec(3)),
                       ("near_symmetric", pk.regular_polygon_spec(6))):
        pupil = pk.rasterize_hull(spec, g)
        errs = []
        for k in range(200):
            rng = np.random.default_rng(np.random.SeedSequence([SET_SEED, 1, k]))
            phi = pk.synthesize_phase(rng.uniform(-0.5, 0.5, 14), basis)
            psf = pk.noisy_normalized_psf(pupil, phi, pk.NoiseModel(0.0))
            est = pk.retrieve_wavefront(
                psf, pupil, cfg, rng=np.random.default_rng(np.random.SeedSequence([SET_SEED, 3, k]))
            )
            errs.append(pk.phase_error(est.phase, phi, pupil))
        mean_mse[name] = float(np.mean(errs))
    _report(12, "estimator error drops with asymmetry",
            mean_mse["high_asymmetry"] < mean_mse["near_symmetric"])
