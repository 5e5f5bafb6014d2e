"""pupilkit: pupil design for single-shot wavefront estimation.

Simulates PSF formation through arbitrary pupils, measures pupil asymmetry,
generates asymmetry-binned pupil/phase/PSF datasets, and quantifies how
asymmetry buys back the conjugate-flip ambiguity of Fourier phase retrieval.
"""

from .grid import GridSpec, checkerboard
from .zernike import ZernikeBasis, build_zernike_basis, noll_to_nm, synthesize_phase, zernike_map
from .pupils import (
    ConvexHullSpec,
    PupilDecomposition,
    PupilMask,
    PupilSet,
    asymmetry,
    build_pupil_set,
    circle_pupil,
    decompose,
    flip_origin,
    rasterize_hull,
    regular_polygon_spec,
    sample_pupil,
)
from .optics import (
    Psf,
    centered_fft2,
    conjugate_flip_field,
    conjugate_flip_phase,
    even_symmetrize,
    forward_psf,
    simulate_slm_psf,
)
from .metrics import (
    NoiseModel,
    circle_peak,
    noisy_normalized_psf,
    phase_error,
    psf_psnr,
    psf_separation,
    psnr_vs_reference,
    strehl,
    write_metrics_csv,
)
from .retrieval import (
    Estimate,
    RetrievalConfig,
    ambiguous_average_mismatch,
    disambiguate_flip,
    fit_zernike,
    retrieve_wavefront,
)
from .experiments import (
    ExperimentConfig,
    PhaseSampler,
    Property1Result,
    SearchResult,
    TrendReport,
    property1_sweep,
    pupil_search,
    render_correction,
    run_scale_study,
    run_trend_study,
    single_system_analysis,
)
from .datasets import (
    DatasetManifest,
    TripletRecord,
    read_dataset,
    regenerate_psf,
    write_dataset,
)

__version__ = "0.1.0"
