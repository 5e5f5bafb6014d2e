"""Convex-hull pupils, the asymmetry metric, and the asymmetry-binned sampler."""

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.signal import fftconvolve
from scipy.spatial import ConvexHull, QhullError

from .grid import GridSpec

log = logging.getLogger(__name__)

# convex shapes cannot exceed alpha = 1/3 (triangle); rasterization adds a
# little slack on top
CONVEX_ALPHA_MAX = 0.36


class PupilError(ValueError):
    pass


def flip_origin(a: np.ndarray) -> np.ndarray:
    """Index map (i, j) -> ((n-i) mod n, (n-j) mod n).

    This is the discrete flip about the grid center n//2, and the exact
    spatial counterpart of conjugation in the Fourier domain.
    """
    return np.roll(a[::-1, ::-1], (1, 1), axis=(0, 1))


@dataclass(frozen=True)
class PupilMask:
    """Real-valued (binary in practice) pupil support inside the reference circle."""

    values: np.ndarray
    grid: GridSpec
    alpha: Optional[float] = None  # annotated by the sampler
    pupil_id: Optional[int] = None

    def __post_init__(self):
        v = self.values
        if v.shape != (self.grid.n, self.grid.n):
            raise PupilError(f"mask shape {v.shape} does not match grid n={self.grid.n}")
        outside = ~self.grid.disk_mask()
        if np.any(v[outside] != 0):
            raise PupilError("pupil has support outside the reference circle")

    @property
    def area(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True)
class ConvexHullSpec:
    """Convex polygon in unit-circle coordinates, vertices counterclockwise."""

    vertices: np.ndarray  # (k, 2)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        object.__setattr__(self, "vertices", v)
        if v.ndim != 2 or v.shape[1] != 2 or not (3 <= len(v) <= 360):
            raise PupilError(f"need 3..360 vertices of shape (k, 2), got {v.shape}")
        if np.any(np.hypot(v[:, 0], v[:, 1]) > 1.0 + 1e-9):
            raise PupilError("hull vertices must lie inside the unit circle")
        edges = np.roll(v, -1, axis=0) - v
        cross = edges[:, 0] * np.roll(edges, -1, axis=0)[:, 1] - edges[:, 1] * np.roll(
            edges, -1, axis=0
        )[:, 0]
        if np.all(np.abs(cross) < 1e-12):
            raise PupilError("degenerate (collinear) vertex set")
        if np.any(cross < -1e-12):
            raise PupilError("vertices must be counterclockwise and convex")


@dataclass(frozen=True)
class PupilDecomposition:
    """Split of a pupil into a flip-invariant part and the remainder."""

    symmetric: np.ndarray
    asymmetric: np.ndarray


def rasterize_hull(spec: ConvexHullSpec, grid: GridSpec) -> PupilMask:
    """Binary mask from a pixel-center point-in-polygon test, clipped to C."""
    # hulls live inside the unit circle, so only test the circle's pixel rows
    c = grid.n // 2
    half = int(np.ceil(grid.radius_px)) + 1
    lo, hi = max(0, c - half), min(grid.n, c + half + 1)
    coord = (np.arange(lo, hi) - c) / grid.radius_px
    u = coord[None, :]
    v = coord[:, None]
    verts = spec.vertices
    a = verts
    b = np.roll(verts, -1, axis=0)
    # left-of-edge test for CCW polygons, all edges at once
    cross = (b[:, 0] - a[:, 0])[:, None, None] * (v - a[:, 1][:, None, None]) - (
        b[:, 1] - a[:, 1]
    )[:, None, None] * (u - a[:, 0][:, None, None])
    inside = np.all(cross >= 0, axis=0)
    mask = np.zeros((grid.n, grid.n))
    mask[lo:hi, lo:hi] = inside.astype(float)
    mask *= grid.circle_mask()
    return PupilMask(values=mask, grid=grid)


def _max_overlap_fft(p: np.ndarray):
    """Peak of the self-convolution p * p over all shifts, via zero-padded FFT.

    The self-convolution at shift s equals the overlap integral of p with its
    origin-flip translated by s, so its peak is the best-case flip overlap.
    """
    rows = np.flatnonzero(p.any(axis=1))
    cols = np.flatnonzero(p.any(axis=0))
    if len(rows) == 0:
        return 0.0, (0, 0)
    tight = p[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]
    conv = fftconvolve(tight, tight, mode="full")
    idx = np.unravel_index(int(np.argmax(conv)), conv.shape)
    # re-express the peak index in full-array convolution coordinates
    full_idx = (idx[0] + 2 * rows[0], idx[1] + 2 * cols[0])
    return float(conv[idx]), full_idx


def asymmetry(pupil) -> float:
    """Asymmetry alpha = 1 - (max flip overlap over all shifts) / area.

    0 for centrally symmetric shapes; 1/3 for triangles, the convex maximum.
    Normalizing by the pupil area (not the L2 norm) keeps the ratio in [0, 1]
    for binary masks and reproduces the circle -> 0 anchor.
    """
    p = pupil.values if isinstance(pupil, PupilMask) else np.asarray(pupil, dtype=float)
    area = float(p.sum())
    if area <= 0:
        raise PupilError("asymmetry is undefined for a zero-area pupil")
    peak, _ = _max_overlap_fft(p)
    return float(min(1.0, max(0.0, 1.0 - peak / area)))


def asymmetry_brute_force(p: np.ndarray) -> float:
    """Direct all-shifts overlap scan; oracle for the FFT path on small grids."""
    p = np.asarray(p, dtype=float)
    area = float(p.sum())
    if area <= 0:
        raise PupilError("asymmetry is undefined for a zero-area pupil")
    n0, n1 = p.shape
    flipped = p[::-1, ::-1]
    big = np.zeros((3 * n0, 3 * n1))
    big[n0 : 2 * n0, n1 : 2 * n1] = p
    best = 0.0
    for di in range(-n0 + 1, n0):
        for dj in range(-n1 + 1, n1):
            window = big[n0 + di : 2 * n0 + di, n1 + dj : 2 * n1 + dj]
            best = max(best, float(np.sum(window * flipped)))
    return 1.0 - best / area


def decompose(pupil, recenter: bool = False) -> PupilDecomposition:
    """P = P_s + P_a with P_s = min(P, flip(P)) (flip-invariant) and P_a the rest.

    With recenter=True the flip is translated to the overlap-maximizing shift
    before taking the minimum, matching the shift used by the metric.
    """
    p = pupil.values if isinstance(pupil, PupilMask) else np.asarray(pupil, dtype=float)
    flipped = flip_origin(p)
    if recenter:
        _, idx = _max_overlap_fft(p)
        # full conv index s corresponds to translating the plain flip
        # p[::-1, ::-1] by s - (n - 1)
        si = idx[0] - (p.shape[0] - 1)
        sj = idx[1] - (p.shape[1] - 1)
        flipped = np.roll(p[::-1, ::-1], (si, sj), axis=(0, 1))
    sym = np.minimum(p, flipped)
    return PupilDecomposition(symmetric=sym, asymmetric=p - sym)


def _random_hull_spec(rng: np.random.Generator, vertex_range) -> Optional[ConvexHullSpec]:
    lo, hi = vertex_range
    # few-vertex hulls carry nearly all of the high-asymmetry range, so mix
    # them in explicitly; the log-uniform tail covers near-circular shapes
    u = rng.uniform()
    if u < 0.5 and lo <= 6:
        k = int(rng.integers(max(lo, 3), 7))
    else:
        k = int(round(math.exp(rng.uniform(math.log(lo), math.log(hi)))))
    k = max(lo, min(hi, k))
    r = np.sqrt(rng.uniform(0.0, 1.0, size=k))
    t = rng.uniform(0.0, 2.0 * np.pi, size=k)
    pts = np.stack([r * np.cos(t), r * np.sin(t)], axis=1)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return None
    verts = pts[hull.vertices]  # ConvexHull returns CCW order in 2D
    if len(verts) < 3:
        return None
    return ConvexHullSpec(vertices=verts)


def sample_pupil(
    rng: np.random.Generator,
    grid: GridSpec,
    vertex_range=(3, 360),
    min_area_fraction: float = 0.2,
    max_tries: int = 1000,
):
    """Random convex-hull pupil with at least the requested area fraction of C."""
    if vertex_range[0] < 3:
        raise PupilError("need at least 3 vertices")
    min_area = min_area_fraction * grid.circle_area()
    for _ in range(max_tries):
        spec = _random_hull_spec(rng, vertex_range)
        if spec is None:
            continue
        mask = rasterize_hull(spec, grid)
        if mask.area >= min_area:
            return spec, mask
    raise PupilError(f"no pupil met area >= {min_area_fraction:.2f} of C in {max_tries} tries")


@dataclass
class PupilSet:
    """Asymmetry-binned pupil collection; bin i covers [edges[i], edges[i+1])."""

    pupils: list
    specs: list
    bin_edges: np.ndarray
    bin_of: np.ndarray
    warnings: list = field(default_factory=list)

    def alphas(self) -> np.ndarray:
        return np.array([p.alpha for p in self.pupils])


def build_pupil_set(
    count_per_bin: int,
    grid: GridSpec,
    bins: int = 30,
    alpha_max: float = CONVEX_ALPHA_MAX,
    seed: int = 0,
    min_area_fraction: float = 0.2,
    vertex_range=(3, 360),
    max_samples: Optional[int] = None,
) -> PupilSet:
    """Uniform-by-bin pupil collection over [0, alpha_max].

    Raw hull samples pile up near alpha = 0, so filled bins reject further
    candidates until every bin has count_per_bin pupils or the sample budget
    runs out (unreachable bins are reported as warnings, not errors).
    """
    if count_per_bin < 1:
        raise PupilError("count_per_bin must be >= 1")
    rng = np.random.default_rng(seed)
    edges = np.linspace(0.0, alpha_max, bins + 1)
    width = alpha_max / bins
    if max_samples is None:
        max_samples = 3000 * bins * count_per_bin
    patience = 3000  # stop chasing bins that stopped making progress
    buckets = [[] for _ in range(bins)]
    spec_buckets = [[] for _ in range(bins)]
    drawn = 0
    stale = 0
    while (
        drawn < max_samples
        and stale < patience
        and any(len(b) < count_per_bin for b in buckets)
    ):
        try:
            spec, mask = sample_pupil(
                rng, grid, vertex_range=vertex_range, min_area_fraction=min_area_fraction
            )
        except PupilError:
            break
        drawn += 1
        stale += 1
        a = asymmetry(mask)
        if a >= alpha_max:
            continue
        b = min(bins - 1, int(a / width))
        if len(buckets[b]) < count_per_bin:
            buckets[b].append(PupilMask(values=mask.values, grid=grid, alpha=a))
            spec_buckets[b].append(spec)
            stale = 0
    warnings = []
    for b in range(bins):
        if len(buckets[b]) < count_per_bin:
            msg = (
                f"bin {b} [{edges[b]:.3f}, {edges[b + 1]:.3f}) filled "
                f"{len(buckets[b])}/{count_per_bin} after {drawn} samples"
            )
            warnings.append(msg)
            log.warning(msg)
    pupils, specs, bin_of = [], [], []
    for b in range(bins):
        for mask, spec in zip(buckets[b], spec_buckets[b]):
            pupils.append(
                PupilMask(values=mask.values, grid=grid, alpha=mask.alpha, pupil_id=len(pupils))
            )
            specs.append(spec)
            bin_of.append(b)
    return PupilSet(
        pupils=pupils,
        specs=specs,
        bin_edges=edges,
        bin_of=np.array(bin_of, dtype=int),
        warnings=warnings,
    )


def regular_polygon_spec(k: int, rotation: float = 0.0, radius: float = 1.0) -> ConvexHullSpec:
    t = rotation + 2.0 * np.pi * np.arange(k) / k
    return ConvexHullSpec(vertices=np.stack([radius * np.cos(t), radius * np.sin(t)], axis=1))


def circle_pupil(grid: GridSpec) -> PupilMask:
    return PupilMask(values=grid.circle_mask(), grid=grid)
