"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime error.  Flag values override
config-file values, which override built-in defaults; every run that writes
results also writes a JSON manifest echoing the effective configuration.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .datasets import (
    DatasetManifest,
    TripletRecord,
    generate_triplet_psf,
    write_dataset,
)
from .experiments import (
    ExperimentConfig,
    PhaseSampler,
    pupil_search,
    property1_sweep,
    render_correction,
    run_scale_study,
    run_trend_study,
    write_run_manifest,
)
from .grid import GridSpec
from .metrics import NoiseModel, noisy_normalized_psf, phase_error, write_metrics_csv
from .optics import even_symmetrize, forward_psf, simulate_slm_psf
from .pupils import (
    ConvexHullSpec,
    PupilMask,
    asymmetry,
    build_pupil_set,
    circle_pupil,
    decompose,
    rasterize_hull,
    regular_polygon_spec,
)
from .retrieval import RetrievalConfig, retrieve_wavefront
from .zernike import build_zernike_basis, synthesize_phase


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_config_file(path):
    """Flat key=value text config; '#' starts a comment."""
    values = {}
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"bad config line (expected key=value): {line!r}")
        key, val = line.split("=", 1)
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _iter_actions(parser):
    for action in parser._actions:
        yield action
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                yield from _iter_actions(sub)


def _merge_config(args, parser):
    if getattr(args, "config", None):
        file_values = _load_config_file(args.config)
        defaults = {a.dest: a.default for a in _iter_actions(parser)}
        for key, raw in file_values.items():
            if key not in vars(args):
                continue
            if vars(args)[key] == defaults.get(key):  # CLI flag wins over file
                default = defaults.get(key)
                if isinstance(default, bool):
                    setattr(args, key, raw.lower() in ("1", "true", "yes"))
                elif isinstance(default, int):
                    setattr(args, key, int(raw))
                elif isinstance(default, float):
                    setattr(args, key, float(raw))
                else:
                    setattr(args, key, raw)
    return args


def _grid(args) -> GridSpec:
    return GridSpec(n=args.n, circle_diameter_px=args.circle)


def _load_hull(path) -> ConvexHullSpec:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        x, y = line.split()
        rows.append((float(x), float(y)))
    return ConvexHullSpec(vertices=np.array(rows))


def _load_pupil(args, grid: GridSpec) -> PupilMask:
    if getattr(args, "hull", None):
        return rasterize_hull(_load_hull(args.hull), grid)
    if getattr(args, "mask", None):
        values = np.load(args.mask).astype(float)
        return PupilMask(values=values, grid=grid)
    raise UsageError("provide --hull or --mask")


def _parse_floats(text) -> tuple:
    return tuple(float(v) for v in str(text).split(",") if v != "")


def _parse_coeffs(args, grid):
    modes = tuple(int(m) for m in str(args.modes).split(","))
    basis = build_zernike_basis(grid, modes)
    if args.coeffs:
        coeffs = np.array(_parse_floats(args.coeffs))
        if coeffs.shape != (len(modes),):
            raise UsageError(f"expected {len(modes)} coefficients for modes {modes}")
    else:
        rng = np.random.default_rng(args.seed)
        coeffs = rng.uniform(-args.scale, args.scale, size=len(modes))
    return coeffs, basis


def _save_image(values: np.ndarray, path):
    from PIL import Image

    v = np.asarray(values, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    scaled = np.zeros_like(v) if hi == lo else (v - lo) / (hi - lo)
    Image.fromarray((255 * scaled).round().astype(np.uint8)).save(path)


def _load_image(path) -> np.ndarray:
    from PIL import Image

    return np.asarray(Image.open(path).convert("L"), dtype=float) / 255.0


def _add_grid_flags(p):
    p.add_argument("--n", type=int, default=128, help="grid side in pixels")
    p.add_argument("--circle", type=int, default=64, help="reference circle diameter (px)")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker count")
    p.add_argument("--config", default=None, help="key=value config file")


def build_parser() -> _Parser:
    parser = _Parser(prog="pupilkit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-pupils", help="build an asymmetry-binned pupil dataset")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--per-bin", type=int, default=10)
    p.add_argument("--alpha-max", type=float, default=0.36)
    p.add_argument("--min-area", type=float, default=0.2)

    p = sub.add_parser("gen-dataset", help="generate pupil/phase/PSF triplets")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--per-bin", type=int, default=2)
    p.add_argument("--phases-per-pupil", type=int, default=5)
    p.add_argument("--sigmas", default="0.0")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--modes", default=",".join(map(str, range(2, 16))))
    p.add_argument("--no-psf", action="store_true", help="store seeds only, regenerate PSFs on read")

    p = sub.add_parser("asymmetry", help="asymmetry value of a pupil")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--hull", help="vertex list file, one 'x y' per line")
    p.add_argument("--mask", help=".npy binary mask")

    p = sub.add_parser("psf", help="single forward PSF to an image/npy file")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--hull")
    p.add_argument("--mask")
    p.add_argument("--coeffs", default=None, help="comma-separated Zernike coefficients")
    p.add_argument("--modes", default=",".join(map(str, range(2, 16))))
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.0)

    p = sub.add_parser("retrieve", help="run the phase-retrieval estimator on a PSF file")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--psf", required=True, help=".npy PSF (circle-normalized)")
    p.add_argument("--hull")
    p.add_argument("--mask")
    p.add_argument("--iters", type=int, default=500)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--beta", type=float, default=0.9)
    p.add_argument("--truth", default=None, help=".npy phase for error reporting")

    p = sub.add_parser("trend", help="asymmetry-vs-recovery trend study")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--per-bin", type=int, default=5)
    p.add_argument("--phases-per-pupil", type=int, default=20)
    p.add_argument("--sigmas", default="0.0")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--estimator", action="store_true", help="run the retrieval estimator per record")

    p = sub.add_parser("scales", help="trend study across aberration scales")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--per-bin", type=int, default=3)
    p.add_argument("--phases-per-pupil", type=int, default=10)
    p.add_argument("--scales", default="0.25,0.5,1.0,2.0")
    p.add_argument("--sigmas", default="0.0")

    p = sub.add_parser("property1", help="epsilon sweep of PSF separation vs asymmetry weight")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--eps", default="1e-3:1e-1", help="log-spaced range lo:hi")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--phase-max", type=float, default=0.05, help="peak phase (rad)")

    p = sub.add_parser("search", help="rank candidate pupils by expected recoverability")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--candidates", default="circle,square,triangle",
                   help="builtin names and/or hull file paths, comma separated")
    p.add_argument("--scoring", choices=("separation_surrogate", "estimator_mse"),
                   default="separation_surrogate")
    p.add_argument("--phases", type=int, default=50)
    p.add_argument("--sigma", type=float, default=0.0)

    p = sub.add_parser("correct", help="render aberrated and corrected images")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--image", required=True)
    p.add_argument("--hull")
    p.add_argument("--mask")
    p.add_argument("--coeffs", default=None)
    p.add_argument("--modes", default=",".join(map(str, range(2, 16))))
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--estimate", default=None, help=".npy phase estimate (default: run estimator)")
    p.add_argument("--sigma", type=float, default=0.0)

    p = sub.add_parser("slm", help="realized PSF through a checkerboard SLM carrier")
    _add_common(p)
    _add_grid_flags(p)
    p.add_argument("--hull")
    p.add_argument("--mask")
    p.add_argument("--coeffs", default=None)
    p.add_argument("--modes", default=",".join(map(str, range(2, 16))))
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--pitch", type=int, default=1)

    return parser


_BUILTIN_CANDIDATES = {
    "circle": lambda grid: circle_pupil(grid),
    "square": lambda grid: rasterize_hull(regular_polygon_spec(4, rotation=np.pi / 4), grid),
    "triangle": lambda grid: rasterize_hull(regular_polygon_spec(3), grid),
}


def _cmd_gen_pupils(args):
    grid = _grid(args)
    pset = build_pupil_set(
        args.per_bin,
        grid,
        bins=args.bins,
        alpha_max=args.alpha_max,
        seed=args.seed,
        min_area_fraction=args.min_area,
    )
    out = Path(args.out)
    counts = np.bincount(pset.bin_of, minlength=args.bins)
    manifest = DatasetManifest(
        grid=grid,
        bin_edges=list(pset.bin_edges),
        counts_per_bin=list(counts),
        zernike_modes=[],
        sigmas=[],
        seed=args.seed,
    )
    write_dataset([], manifest, out, pupils=pset.pupils, hull_specs=pset.specs)
    print(f"wrote {len(pset.pupils)} pupils in {args.bins} bins to {out}")
    for w in pset.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _cmd_gen_dataset(args):
    grid = _grid(args)
    modes = tuple(int(m) for m in args.modes.split(","))
    sigmas = _parse_floats(args.sigmas)
    pset = build_pupil_set(
        args.per_bin, grid, bins=args.bins, seed=args.seed
    )
    basis = build_zernike_basis(grid, modes)
    sampler = PhaseSampler(modes=modes, coeff_scale=args.scale)
    records = []
    for pupil in pset.pupils:
        for k in range(args.phases_per_pupil):
            for si, sigma in enumerate(sigmas):
                rng = np.random.default_rng(
                    np.random.SeedSequence([args.seed, 1, pupil.pupil_id, k])
                )
                coeffs = sampler.sample_coeffs(rng)
                noise_seed = int(
                    np.random.SeedSequence(
                        [args.seed, 2, pupil.pupil_id, k, si]
                    ).generate_state(1)[0]
                )
                rec = TripletRecord(
                    pupil_id=pupil.pupil_id,
                    alpha=pupil.alpha,
                    coeffs=coeffs.astype(np.float32),
                    sigma=sigma,
                    seed=noise_seed,
                )
                if not args.no_psf:
                    rec = TripletRecord(
                        pupil_id=rec.pupil_id,
                        alpha=rec.alpha,
                        coeffs=rec.coeffs,
                        sigma=rec.sigma,
                        seed=rec.seed,
                        psf=generate_triplet_psf(rec, pupil, basis),
                    )
                records.append(rec)
    counts = np.bincount(pset.bin_of, minlength=args.bins)
    manifest = DatasetManifest(
        grid=grid,
        bin_edges=list(pset.bin_edges),
        counts_per_bin=list(counts),
        zernike_modes=list(modes),
        sigmas=list(sigmas),
        seed=args.seed,
        psf_stored=not args.no_psf,
    )
    write_dataset(records, manifest, args.out, pupils=pset.pupils, hull_specs=pset.specs)
    print(f"wrote {len(records)} records over {len(pset.pupils)} pupils to {args.out}")
    return 0


def _cmd_asymmetry(args):
    grid = _grid(args)
    pupil = _load_pupil(args, grid)
    print(f"{asymmetry(pupil):.6f}")
    return 0


def _cmd_psf(args):
    grid = _grid(args)
    pupil = _load_pupil(args, grid)
    coeffs, basis = _parse_coeffs(args, grid)
    phase = synthesize_phase(coeffs, basis)
    rng = np.random.default_rng(args.seed)
    psf = noisy_normalized_psf(pupil, phase, NoiseModel(args.sigma), rng=rng)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "psf.npy", psf.values)
    np.save(out / "phase.npy", phase)
    _save_image(psf.values, out / "psf.png")
    print(f"wrote psf.npy / psf.png / phase.npy to {out}")
    return 0


def _cmd_retrieve(args):
    grid = _grid(args)
    pupil = _load_pupil(args, grid)
    from .optics import Psf

    psf = Psf(values=np.load(args.psf), normalization_tag="circle_normalized")
    cfg = RetrievalConfig(max_iters=args.iters, beta=args.beta, restarts=args.restarts)
    est = retrieve_wavefront(psf, pupil, cfg, rng=np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "estimate.npy", est.phase)
    print(f"residual {est.residual:.6e} flip {est.flip_choice}")
    if args.truth:
        truth = np.load(args.truth)
        print(f"mod-piston MSE {phase_error(est.phase, truth, pupil):.6f} rad^2")
    return 0


def _experiment_config(args, sigmas, scales) -> ExperimentConfig:
    return ExperimentConfig(
        grid=_grid(args),
        bins=args.bins,
        pupils_per_bin=args.per_bin,
        phases_per_pupil=args.phases_per_pupil,
        sigmas=sigmas,
        scales=scales,
        seed=args.seed,
        estimator=RetrievalConfig() if getattr(args, "estimator", False) else None,
    )


def _dump_report(report, out: Path, name: str):
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(report.rows, out / name)


def _cmd_trend(args):
    cfg = _experiment_config(args, _parse_floats(args.sigmas), (args.scale,))
    pset = build_pupil_set(
        cfg.pupils_per_bin, cfg.grid, bins=cfg.bins, seed=cfg.seed,
        min_area_fraction=cfg.min_area_fraction,
    )
    report = run_trend_study(cfg, pupil_set=pset, jobs=args.jobs)
    out = Path(args.out)
    _dump_report(report, out, "trend.csv")
    write_run_manifest(out / "run_manifest.json", cfg, pupil_set=pset)
    for sigma in cfg.sigmas:
        rho = report.spearman_alpha("separation", sigma=sigma)
        acc = report.spearman_alpha("flip_correct", sigma=sigma)
        print(f"sigma={sigma}: spearman(alpha, separation)={rho:.3f} "
              f"spearman(alpha, flip accuracy)={acc:.3f}")
    return 0


def _cmd_scales(args):
    cfg = _experiment_config(args, _parse_floats(args.sigmas), _parse_floats(args.scales))
    pset = build_pupil_set(
        cfg.pupils_per_bin, cfg.grid, bins=cfg.bins, seed=cfg.seed,
        min_area_fraction=cfg.min_area_fraction,
    )
    reports = run_scale_study(cfg, pupil_set=pset, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s, report in reports.items():
        _dump_report(report, out, f"trend_scale_{s}.csv")
        gap = report.gap_statistic("separation", sigma=cfg.sigmas[0])
        print(f"scale={s}: separation gap (high-alpha minus low-alpha) = {gap:.4e}")
    write_run_manifest(out / "run_manifest.json", cfg, pupil_set=pset)
    return 0


def _cmd_property1(args):
    grid = _grid(args)
    lo, hi = (float(v) for v in args.eps.split(":"))
    epsilons = np.logspace(np.log10(lo), np.log10(hi), args.steps)
    triangle = rasterize_hull(regular_polygon_spec(3), grid)
    parts = decompose(triangle)
    basis = build_zernike_basis(grid, (4, 5, 7))
    rng = np.random.default_rng(args.seed)
    phase = even_symmetrize(synthesize_phase(rng.uniform(-1, 1, 3), basis))
    peak = np.max(np.abs(phase))
    if peak > 0:
        phase = phase * (args.phase_max / peak)
    result = property1_sweep(parts.symmetric, parts.asymmetric, phase, epsilons, grid)
    print(f"fitted log-log slope: {result.slope:.4f}")
    for eps, ex, pred in zip(result.epsilons, result.exact, result.predicted):
        print(f"eps={eps:.4e} exact={ex:.6e} predicted={pred:.6e}")
    return 0


def _cmd_search(args):
    grid = _grid(args)
    names = [c.strip() for c in args.candidates.split(",") if c.strip()]
    candidates = []
    for name in names:
        if name in _BUILTIN_CANDIDATES:
            candidates.append(_BUILTIN_CANDIDATES[name](grid))
        else:
            candidates.append(rasterize_hull(_load_hull(name), grid))
    result = pupil_search(
        candidates,
        PhaseSampler(),
        scoring=args.scoring,
        sigma=args.sigma,
        n_phases=args.phases,
        seed=args.seed,
        grid=grid,
    )
    for rank, idx in enumerate(result.ranking, start=1):
        print(f"{rank}. {names[idx]} score={result.scores[idx]:.6e}")
    print(f"best: {names[result.best_index]}")
    return 0


def _cmd_correct(args):
    grid = _grid(args)
    pupil = _load_pupil(args, grid)
    coeffs, basis = _parse_coeffs(args, grid)
    phase = synthesize_phase(coeffs, basis)
    image = _load_image(args.image)
    if args.estimate:
        estimate = np.load(args.estimate)
    else:
        rng = np.random.default_rng(args.seed)
        psf = noisy_normalized_psf(pupil, phase, NoiseModel(args.sigma), rng=rng)
        estimate = retrieve_wavefront(psf, pupil, rng=rng).phase
    aberrated, corrected = render_correction(image, pupil, phase, estimate)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _save_image(aberrated, out / "aberrated.png")
    _save_image(corrected, out / "corrected.png")
    print(f"wrote aberrated.png and corrected.png to {out}")
    return 0


def _cmd_slm(args):
    grid = _grid(args)
    pupil = _load_pupil(args, grid)
    coeffs, basis = _parse_coeffs(args, grid)
    phase = synthesize_phase(coeffs, basis)
    realized, _ = simulate_slm_psf(pupil, phase, carrier_pitch=args.pitch)
    intended = forward_psf(pupil, phase)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "slm_psf.npy", realized.values)
    _save_image(realized.values, out / "slm_psf.png")
    _save_image(intended.values, out / "intended_psf.png")
    print(f"wrote slm_psf.npy / slm_psf.png / intended_psf.png to {out}")
    return 0


_COMMANDS = {
    "gen-pupils": _cmd_gen_pupils,
    "gen-dataset": _cmd_gen_dataset,
    "asymmetry": _cmd_asymmetry,
    "psf": _cmd_psf,
    "retrieve": _cmd_retrieve,
    "trend": _cmd_trend,
    "scales": _cmd_scales,
    "property1": _cmd_property1,
    "search": _cmd_search,
    "correct": _cmd_correct,
    "slm": _cmd_slm,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args = _merge_config(args, parser)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # argparse --help exits 0
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry():
    sys.exit(main())
