import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pupilkit import (
    DatasetManifest,
    GridSpec,
    TripletRecord,
    build_pupil_set,
    build_zernike_basis,
    read_dataset,
    regenerate_psf,
    write_dataset,
)
from pupilkit.datasets import (
    DatasetError,
    fnv1a64,
    generate_triplet_psf,
    rle_decode,
    rle_encode,
)

MODES = (2, 3, 4, 5)


def _small_dataset(tmp_path, n_records=12, sigma=0.01, store_psf=True, seed=7):
    grid = GridSpec(n=32, circle_diameter_px=16)
    pset = build_pupil_set(1, grid, bins=4, seed=seed, max_samples=2000)
    basis = build_zernike_basis(grid, MODES)
    rng = np.random.default_rng(seed)
    records = []
    for k in range(n_records):
        pupil = pset.pupils[k % len(pset.pupils)]
        rec = TripletRecord(
            pupil_id=pupil.pupil_id,
            alpha=pupil.alpha,
            coeffs=rng.uniform(-1, 1, len(MODES)).astype(np.float32),
            sigma=sigma if k % 2 else 0.0,
            seed=int(rng.integers(0, 2**32)),
        )
        if store_psf:
            rec = TripletRecord(
                pupil_id=rec.pupil_id,
                alpha=rec.alpha,
                coeffs=rec.coeffs,
                sigma=rec.sigma,
                seed=rec.seed,
                psf=generate_triplet_psf(rec, pupil, basis),
            )
        records.append(rec)
    counts = np.bincount(pset.bin_of, minlength=4)
    manifest = DatasetManifest(
        grid=grid,
        bin_edges=list(pset.bin_edges),
        counts_per_bin=list(counts),
        zernike_modes=list(MODES),
        sigmas=[0.0, sigma],
        seed=seed,
        psf_stored=store_psf,
    )
    write_dataset(records, manifest, tmp_path, pupils=pset.pupils, hull_specs=pset.specs)
    return records, pset, manifest


def test_fnv1a64_anchors():
    assert fnv1a64(b"") == 0xCBF29CE484222325
    assert fnv1a64(b"a") == 0xAF63DC4C8601EC8C


@settings(max_examples=50, deadline=None)
@given(arrays(np.uint8, st.integers(0, 64), elements=st.integers(0, 1)))
def test_rle_roundtrip(mask):
    runs = rle_encode(mask)
    assert np.array_equal(rle_decode(runs, mask.size), mask)


def test_rle_length_mismatch_raises():
    runs = rle_encode(np.array([0, 1, 1, 0], dtype=np.uint8))
    with pytest.raises(DatasetError):
        rle_decode(runs, 10)


def test_roundtrip_bitwise(tmp_path):
    records, pset, _ = _small_dataset(tmp_path)
    loaded, pupils, hulls, manifest = read_dataset(tmp_path)
    assert len(loaded) == len(records)
    assert len(pupils) == len(pset.pupils)
    by_order = sorted(records, key=lambda r: r.pupil_id)
    for a, b in zip(by_order, loaded):
        assert a.pupil_id == b.pupil_id
        assert np.float32(a.alpha) == np.float32(b.alpha)
        assert np.array_equal(a.coeffs.astype(np.float32), b.coeffs)
        assert np.float32(a.sigma) == np.float32(b.sigma)
        assert a.seed == b.seed
        assert np.array_equal(a.psf, b.psf)
    for p, q in zip(pset.pupils, pupils):
        assert np.array_equal(p.values, q.values)
    for s, h in zip(pset.specs, hulls):
        assert np.allclose(s.vertices, h, atol=1e-6)


def test_seeded_regeneration_is_bitwise(tmp_path):
    _small_dataset(tmp_path)
    loaded, pupils, _, manifest = read_dataset(tmp_path)
    by_id = {p.pupil_id: p for p in pupils}
    for rec in loaded:
        regen = regenerate_psf(rec, by_id[rec.pupil_id], manifest)
        assert np.array_equal(regen.values, rec.psf)


def test_regeneration_requires_seed_when_noisy(tmp_path):
    _small_dataset(tmp_path)
    loaded, pupils, _, manifest = read_dataset(tmp_path)
    rec = next(r for r in loaded if r.sigma > 0)
    stripped = TripletRecord(
        pupil_id=rec.pupil_id, alpha=rec.alpha, coeffs=rec.coeffs, sigma=rec.sigma
    )
    with pytest.raises(DatasetError):
        regenerate_psf(stripped, pupils[0], manifest)


def test_checksum_tamper_detection(tmp_path):
    _small_dataset(tmp_path)
    target = next(tmp_path.glob("records-*.bin"))
    data = bytearray(target.read_bytes())
    data[len(data) // 2] ^= 0xFF
    target.write_bytes(bytes(data))
    with pytest.raises(DatasetError, match="checksum"):
        read_dataset(tmp_path)


def test_version_mismatch_raises(tmp_path):
    _small_dataset(tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    doc["version"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match="version"):
        read_dataset(tmp_path)


def test_trailing_bytes_raise(tmp_path):
    _small_dataset(tmp_path)
    doc = json.loads((tmp_path / "manifest.json").read_text())
    entry = next(e for e in doc["files"] if e["kind"] == "records")
    target = tmp_path / entry["name"]
    padded = target.read_bytes() + b"\x00"
    target.write_bytes(padded)
    entry["checksum"] = f"{fnv1a64(padded):016x}"
    (tmp_path / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(DatasetError, match="trailing"):
        read_dataset(tmp_path)


def test_counts_consistency_enforced(tmp_path):
    records, pset, manifest = _small_dataset(tmp_path)
    manifest.counts_per_bin = [999] * 4
    with pytest.raises(DatasetError):
        write_dataset(records, manifest, tmp_path, pupils=pset.pupils)


def test_chunking_splits_files(tmp_path):
    _small_dataset(tmp_path)
    # rewrite with tiny chunks and confirm multiple record files load fine
    loaded, pupils, hulls, manifest = read_dataset(tmp_path)
    sub = tmp_path / "chunked"
    from pupilkit import ConvexHullSpec

    specs = [ConvexHullSpec(vertices=h) for h in hulls]
    write_dataset(loaded, manifest, sub, pupils=pupils, hull_specs=specs, records_per_chunk=5)
    assert len(list(sub.glob("records-*.bin"))) > 1
    again, _, _, _ = read_dataset(sub)
    assert len(again) == len(loaded)
