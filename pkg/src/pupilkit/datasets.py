"""On-disk pupil/phase/PSF triplet datasets.

Layout: a JSON manifest next to binary chunk files.  `pupils-NNN.bin` holds
hull vertices plus run-length-encoded masks; `records-NNN.bin` holds triplet
records.  All integers little-endian, arrays row-major float32, one 64-bit
FNV-1a checksum per chunk recorded in the manifest.
"""

import json
import struct
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .grid import GridSpec
from .metrics import NoiseModel, noisy_normalized_psf
from .optics import Psf
from .pupils import PupilMask
from .zernike import ZernikeBasis, build_zernike_basis, synthesize_phase

FORMAT_VERSION = 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class DatasetError(ValueError):
    pass


def fnv1a64(data: bytes, h: int = FNV_OFFSET) -> int:
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def rle_encode(mask: np.ndarray) -> np.ndarray:
    """Run lengths of a flattened binary mask, first run counting zeros."""
    flat = np.asarray(mask).ravel().astype(np.uint8)
    if flat.size == 0:
        return np.zeros(0, dtype=np.uint32)
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = np.diff(bounds).astype(np.uint32)
    if flat[0] == 1:
        runs = np.concatenate([[np.uint32(0)], runs])
    return runs


def rle_decode(runs: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros(size, dtype=np.uint8)
    pos = 0
    val = 0
    for run in runs:
        if val:
            out[pos : pos + int(run)] = 1
        pos += int(run)
        val ^= 1
    if pos != size:
        raise DatasetError(f"RLE stream covers {pos} pixels, expected {size}")
    return out


@dataclass(frozen=True)
class TripletRecord:
    """One (pupil, Zernike coefficients, noise level, PSF) sample."""

    pupil_id: int
    alpha: float
    coeffs: np.ndarray
    sigma: float
    seed: Optional[int] = None  # noise stream; None only makes sense for sigma == 0
    psf: Optional[np.ndarray] = None  # float32; omitted when regenerable


@dataclass
class DatasetManifest:
    grid: GridSpec
    bin_edges: list
    counts_per_bin: list
    zernike_modes: list
    sigmas: list
    seed: int
    version: int = FORMAT_VERSION
    created: str = ""
    psf_stored: bool = True
    files: list = field(default_factory=list)  # [{"name", "checksum", "count"}]

    def __post_init__(self):
        if not self.created:
            self.created = datetime.now(timezone.utc).isoformat()


def _pack_pupil(pupil: PupilMask, vertices: np.ndarray) -> bytes:
    runs = rle_encode(pupil.values > 0)
    verts = np.asarray(vertices, dtype="<f4")
    head = struct.pack(
        "<IfH", int(pupil.pupil_id or 0), float(pupil.alpha or 0.0), len(verts)
    )
    return (
        head
        + verts.tobytes()
        + struct.pack("<I", len(runs))
        + runs.astype("<u4").tobytes()
    )


def _unpack_pupil(buf: memoryview, offset: int, grid: GridSpec):
    pid, alpha, nverts = struct.unpack_from("<IfH", buf, offset)
    offset += 10
    verts = np.frombuffer(buf, dtype="<f4", count=2 * nverts, offset=offset).reshape(
        nverts, 2
    )
    offset += 8 * nverts
    (nruns,) = struct.unpack_from("<I", buf, offset)
    offset += 4
    runs = np.frombuffer(buf, dtype="<u4", count=nruns, offset=offset)
    offset += 4 * nruns
    mask = rle_decode(runs, grid.n * grid.n).reshape(grid.n, grid.n).astype(float)
    pupil = PupilMask(values=mask, grid=grid, alpha=float(alpha), pupil_id=int(pid))
    return pupil, np.array(verts, dtype=float), offset


def _pack_record(rec: TripletRecord, grid: GridSpec) -> bytes:
    coeffs = np.asarray(rec.coeffs, dtype="<f4")
    head = struct.pack("<IfH", rec.pupil_id, rec.alpha, len(coeffs))
    body = coeffs.tobytes() + struct.pack("<f", rec.sigma)
    body += struct.pack("<BQ", 1 if rec.seed is not None else 0, rec.seed or 0)
    if rec.psf is not None:
        psf = np.asarray(rec.psf, dtype="<f4")
        if psf.shape != (grid.n, grid.n):
            raise DatasetError(f"PSF shape {psf.shape} does not match grid")
        body += struct.pack("<B", 1) + psf.tobytes()
    else:
        body += struct.pack("<B", 0)
    return head + body


def _unpack_record(buf: memoryview, offset: int, grid: GridSpec):
    pid, alpha, ncoef = struct.unpack_from("<IfH", buf, offset)
    offset += 10
    coeffs = np.array(np.frombuffer(buf, dtype="<f4", count=ncoef, offset=offset))
    offset += 4 * ncoef
    (sigma,) = struct.unpack_from("<f", buf, offset)
    offset += 4
    has_seed, seed = struct.unpack_from("<BQ", buf, offset)
    offset += 9
    (has_psf,) = struct.unpack_from("<B", buf, offset)
    offset += 1
    psf = None
    if has_psf:
        psf = np.array(
            np.frombuffer(buf, dtype="<f4", count=grid.n * grid.n, offset=offset)
        ).reshape(grid.n, grid.n)
        offset += 4 * grid.n * grid.n
    rec = TripletRecord(
        pupil_id=int(pid),
        alpha=float(alpha),
        coeffs=coeffs,
        sigma=float(sigma),
        seed=int(seed) if has_seed else None,
        psf=psf,
    )
    return rec, offset


def _write_chunks(path: Path, stem: str, blobs, per_chunk: int):
    entries = []
    for start in range(0, max(len(blobs), 1), per_chunk):
        chunk = blobs[start : start + per_chunk]
        if not chunk and start > 0:
            break
        name = f"{stem}-{start // per_chunk:03d}.bin"
        data = b"".join(chunk)
        (path / name).write_bytes(data)
        entries.append({"name": name, "checksum": f"{fnv1a64(data):016x}", "count": len(chunk)})
    return entries


def write_dataset(
    records,
    manifest: DatasetManifest,
    path,
    pupils=None,
    hull_specs=None,
    records_per_chunk: int = 512,
) -> None:
    """Persist records (and optionally the pupil set they reference).

    Records are written in canonical (pupil_id, appearance) order so manifests
    hash identically regardless of generation order.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    records = sorted(records, key=lambda r: r.pupil_id)
    if sum(manifest.counts_per_bin) not in (len(records), len(pupils or [])):
        raise DatasetError(
            "manifest bin counts do not match the records or pupils being written"
        )
    manifest.files = []
    if pupils is not None:
        specs = hull_specs or [None] * len(pupils)
        blobs = [
            _pack_pupil(p, s.vertices if s is not None else np.zeros((0, 2)))
            for p, s in zip(pupils, specs)
        ]
        entries = _write_chunks(path, "pupils", blobs, records_per_chunk)
        for e in entries:
            e["kind"] = "pupils"
        manifest.files.extend(entries)
    blobs = [_pack_record(r, manifest.grid) for r in records]
    entries = _write_chunks(path, "records", blobs, records_per_chunk)
    for e in entries:
        e["kind"] = "records"
    manifest.files.extend(entries)
    manifest.psf_stored = all(r.psf is not None for r in records) if records else manifest.psf_stored
    doc = {
        "version": manifest.version,
        "created": manifest.created,
        "grid": {"n": manifest.grid.n, "circle_diameter_px": manifest.grid.circle_diameter_px},
        "bin_edges": list(map(float, manifest.bin_edges)),
        "counts_per_bin": list(map(int, manifest.counts_per_bin)),
        "zernike_modes": list(map(int, manifest.zernike_modes)),
        "sigmas": list(map(float, manifest.sigmas)),
        "seed": int(manifest.seed),
        "psf_stored": manifest.psf_stored,
        "files": manifest.files,
    }
    (path / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def read_dataset(path):
    """Load and validate a dataset: (records, pupils, hull vertex arrays, manifest)."""
    path = Path(path)
    doc = json.loads((path / "manifest.json").read_text())
    if doc["version"] != FORMAT_VERSION:
        raise DatasetError(
            f"unsupported dataset version {doc['version']} (expected {FORMAT_VERSION})"
        )
    grid = GridSpec(n=doc["grid"]["n"], circle_diameter_px=doc["grid"]["circle_diameter_px"])
    manifest = DatasetManifest(
        grid=grid,
        bin_edges=doc["bin_edges"],
        counts_per_bin=doc["counts_per_bin"],
        zernike_modes=doc["zernike_modes"],
        sigmas=doc["sigmas"],
        seed=doc["seed"],
        version=doc["version"],
        created=doc["created"],
        psf_stored=doc["psf_stored"],
        files=doc["files"],
    )
    records, pupils, hulls = [], [], []
    for entry in doc["files"]:
        data = (path / entry["name"]).read_bytes()
        checksum = f"{fnv1a64(data):016x}"
        if checksum != entry["checksum"]:
            raise DatasetError(
                f"checksum mismatch in {entry['name']}: {checksum} != {entry['checksum']}"
            )
        buf = memoryview(data)
        offset = 0
        for _ in range(entry["count"]):
            if entry["kind"] == "pupils":
                pupil, verts, offset = _unpack_pupil(buf, offset, grid)
                pupils.append(pupil)
                hulls.append(verts)
            else:
                rec, offset = _unpack_record(buf, offset, grid)
                records.append(rec)
        if offset != len(data):
            raise DatasetError(f"trailing bytes in {entry['name']}")
    return records, pupils, hulls, manifest


def generate_triplet_psf(
    record: TripletRecord, pupil: PupilMask, basis: ZernikeBasis
) -> np.ndarray:
    """The float32 PSF payload for a record; the single code path used both
    when writing datasets and when regenerating omitted payloads."""
    # go through float32 so writing and post-round-trip regeneration see the
    # exact same coefficient and sigma values
    coeffs = np.asarray(record.coeffs, dtype=np.float32).astype(float)
    sigma = float(np.float32(record.sigma))
    phase = synthesize_phase(coeffs, basis)
    rng = np.random.default_rng(record.seed) if record.seed is not None else None
    psf = noisy_normalized_psf(pupil, phase, NoiseModel(sigma), rng=rng)
    return psf.values.astype(np.float32)


def regenerate_psf(record: TripletRecord, pupil: PupilMask, manifest: DatasetManifest) -> Psf:
    """Replay the stored generation seed; bitwise-identical to the stored PSF."""
    if record.sigma > 0 and record.seed is None:
        raise DatasetError("record has noise but no stored generation seed")
    basis = build_zernike_basis(manifest.grid, manifest.zernike_modes)
    values = generate_triplet_psf(record, pupil, basis)
    return Psf(values=values, normalization_tag="circle_normalized", sigma=record.sigma)
