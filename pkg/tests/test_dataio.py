"""Cube format, patch geometry, split, statistics, and scene generator tests."""

import struct
from collections import deque

import numpy as np
import pytest

from osdg import dataio


def _tiny_cube(h=5, w=6, c=4, k=2, seed=0):
    rng = np.random.default_rng(seed)
    data = rng.normal(size=(h, w, c)).astype(np.float32)
    labels = rng.integers(0, k + 1, size=(h, w)).astype(np.uint16)
    labels[0, 0] = 1  # at least one known pixel
    return dataio.HSICube(data=data, labels=labels, num_classes=k, class_names=["a", "b"])


# ---------------------------------------------------------------------------
# serialization


def test_cube_round_trip_bit_exact(tmp_path):
    cube = _tiny_cube()
    path = tmp_path / "scene.hsic"
    dataio.save_cube(cube, path)
    back = dataio.load_cube(path)
    assert np.array_equal(back.data, cube.data)
    assert back.data.tobytes() == cube.data.tobytes()
    assert np.array_equal(back.labels, cube.labels)
    assert back.num_classes == cube.num_classes
    assert back.class_names == cube.class_names
    # and the file itself is stable under a second save
    path2 = tmp_path / "scene2.hsic"
    dataio.save_cube(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.hsic"
    path.write_bytes(b"NOPE" + b"\x00" * 64)
    with pytest.raises(dataio.CubeFormatError) as exc:
        dataio.load_cube(path)
    assert exc.value.code == "bad_magic"


def test_load_rejects_truncated_payload(tmp_path):
    cube = _tiny_cube()
    path = tmp_path / "scene.hsic"
    dataio.save_cube(cube, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-7])
    with pytest.raises(dataio.CubeFormatError) as exc:
        dataio.load_cube(path)
    assert exc.value.code == "truncated"


def test_load_rejects_trailing_bytes(tmp_path):
    cube = _tiny_cube()
    path = tmp_path / "scene.hsic"
    dataio.save_cube(cube, path)
    path.write_bytes(path.read_bytes() + b"xx")
    with pytest.raises(dataio.CubeFormatError) as exc:
        dataio.load_cube(path)
    assert exc.value.code == "trailing_bytes"


def test_load_rejects_label_out_of_range(tmp_path):
    cube = _tiny_cube(k=2)
    path = tmp_path / "scene.hsic"
    dataio.save_cube(cube, path)
    raw = bytearray(path.read_bytes())
    # poke an out-of-range label (17) into the label block at the end
    struct.pack_into("<H", raw, len(raw) - 2, 17)
    path.write_bytes(bytes(raw))
    with pytest.raises(dataio.CubeFormatError) as exc:
        dataio.load_cube(path)
    assert exc.value.code == "label_range"


def test_load_rejects_wrong_dtype_field(tmp_path):
    header = b'{"height": 1, "width": 1, "bands": 2, "K": 1, "dtype": "f64", "class_names": ["a"]}'
    body = b"\x00" * (1 * 1 * 2 * 4 + 1 * 1 * 2)
    (tmp_path / "bad.hsic").write_bytes(dataio.MAGIC + struct.pack("<I", len(header)) + header + body)
    with pytest.raises(dataio.CubeFormatError) as exc:
        dataio.load_cube(tmp_path / "bad.hsic")
    assert exc.value.code == "bad_dtype"


def test_cube_validate_rejects_nan():
    data = np.zeros((2, 2, 3), dtype=np.float32)
    data[0, 0, 0] = np.nan
    with pytest.raises(dataio.CubeFormatError) as exc:
        dataio.HSICube(data=data, labels=np.zeros((2, 2), dtype=np.uint16), num_classes=1, class_names=["a"])
    assert exc.value.code == "non_finite"


# ---------------------------------------------------------------------------
# patch geometry


def test_reflect_index_hand_map():
    # mirror about the border pixel on n=5: -3,-2,-1,0...6 -> literal expectation
    got = [dataio.reflect_index(i, 5) for i in range(-3, 7)]
    assert got == [3, 2, 1, 0, 1, 2, 3, 4, 3, 2]


def test_corner_patch_matches_hand_index_map():
    cube = _tiny_cube(h=5, w=5, c=3)
    cube.labels[0, 0] = 1
    patch = dataio.extract_patch(cube, 0, 0)
    expect_rows = [3, 2, 1, 0, 1, 2, 3]
    expect_cols = [3, 2, 1, 0, 1, 2, 3]
    expected = cube.data[np.ix_(expect_rows, expect_cols)]
    assert patch.window.shape == (7, 7, 3)
    assert np.array_equal(patch.window, expected)
    assert patch.label == 1


def test_interior_patch_is_direct_slice():
    cube = _tiny_cube(h=9, w=9, c=4)
    cube.labels[4, 5] = 2
    patch = dataio.extract_patch(cube, 4, 5)
    assert np.array_equal(patch.window, cube.data[1:8, 2:9])


def test_patch_requires_labeled_centre_and_bounds():
    cube = _tiny_cube(h=7, w=7)
    cube.labels[3, 3] = 0
    with pytest.raises(ValueError):
        dataio.extract_patch(cube, 3, 3)
    with pytest.raises(ValueError):
        dataio.extract_patch(cube, 7, 0)


def test_batch_extraction_matches_single():
    cube = _tiny_cube(h=8, w=9, c=5, seed=3)
    cube.labels[:, :] = 1
    coords = np.array([[0, 0], [0, 8], [7, 0], [3, 4], [7, 8]])
    batch = dataio.extract_patch_batch(cube.data, coords)
    assert batch.shape == (5, 7, 7, 5)
    for i, (r, c) in enumerate(coords):
        single = dataio.extract_patch(cube, int(r), int(c))
        assert np.array_equal(batch[i], single.window)


# ---------------------------------------------------------------------------
# split and statistics


def test_stratified_split_sizes():
    labels = np.array([1] * 10 + [2] * 5)
    train, val = dataio.stratified_split(labels, ratio=0.8, seed=0)
    assert len(train) == 8 + 4 and len(val) == 2 + 1
    assert set(train).isdisjoint(set(val))
    assert np.all(np.sort(np.concatenate([train, val])) == np.arange(15))
    # stratification: per-class train counts are exact
    assert (labels[train] == 1).sum() == 8
    assert (labels[train] == 2).sum() == 4


def test_stratified_split_deterministic_and_seed_sensitive():
    labels = np.array([1] * 40 + [2] * 40 + [3] * 40)
    a1, _ = dataio.stratified_split(labels, seed=7)
    a2, _ = dataio.stratified_split(labels, seed=7)
    b, _ = dataio.stratified_split(labels, seed=8)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_stratified_split_rejects_tiny_class():
    with pytest.raises(ValueError):
        dataio.stratified_split(np.array([1, 1, 2]), seed=0)


def test_band_stats_and_standardize():
    rng = np.random.default_rng(0)
    data = rng.normal(3.0, 2.0, size=(10, 10, 6)).astype(np.float32)
    labels = np.ones((10, 10), dtype=np.uint16)
    cube = dataio.HSICube(data=data, labels=labels, num_classes=1, class_names=["a"])
    coords = np.argwhere(labels == 1)
    stats = dataio.compute_band_stats(cube.data, coords)
    std_cube = dataio.standardize(cube, stats)
    pixels = std_cube.data[coords[:, 0], coords[:, 1]]
    assert np.allclose(pixels.mean(axis=0), 0.0, atol=1e-5)
    assert np.allclose(pixels.std(axis=0), 1.0, atol=1e-4)


def test_band_stats_degenerate_band_gets_unit_std():
    data = np.zeros((4, 4, 2), dtype=np.float32)
    data[..., 1] = 5.0  # constant band
    coords = np.argwhere(np.ones((4, 4), dtype=bool))
    stats = dataio.compute_band_stats(data, coords)
    assert stats.std[1] == 1.0
    assert stats.mean[1] == pytest.approx(5.0)


def test_rescale_unit_maps_range_and_clips():
    br = dataio.BandRange(lo=np.array([0.0, 1.0], dtype=np.float32), hi=np.array([2.0, 3.0], dtype=np.float32))
    out = dataio.rescale_unit(np.array([[0.0, 3.0], [2.0, 0.0], [4.0, 2.0]], dtype=np.float32), br)
    assert np.allclose(out, [[0.0, 1.0], [1.0, 0.0], [1.0, 0.5]])


# ---------------------------------------------------------------------------
# synthetic scenes


def _flood_count(grid, cls):
    """Size of the connected component containing the first pixel of cls."""
    coords = np.argwhere(grid == cls)
    start = tuple(coords[0])
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= rr < grid.shape[0] and 0 <= cc < grid.shape[1]:
                if grid[rr, cc] == cls and (rr, cc) not in seen:
                    seen.add((rr, cc))
                    queue.append((rr, cc))
    return len(seen)


@pytest.fixture(scope="module")
def small_scene():
    spec = dataio.default_scene_spec(
        seed=11,
        num_known=3,
        num_unknown=1,
        bands=16,
        height=36,
        width=36,
        pixels_per_known_source=80,
        pixels_per_known_target=70,
        pixels_per_unknown=60,
    )
    return spec, dataio.synth_scene(spec)


def test_scene_deterministic(small_scene):
    spec, (src, tgt) = small_scene
    src2, tgt2 = dataio.synth_scene(spec)
    assert np.array_equal(src.data, src2.data)
    assert np.array_equal(tgt.data, tgt2.data)
    assert np.array_equal(tgt.labels, tgt2.labels)


def test_scene_label_layout(small_scene):
    spec, (src, tgt) = small_scene
    assert dataio.UNKNOWN_LABEL not in src.labels
    assert (tgt.labels == dataio.UNKNOWN_LABEL).sum() == spec.num_unknown * spec.pixels_per_unknown
    for k in range(1, spec.num_known + 1):
        assert (src.labels == k).sum() == spec.pixels_per_known_source
        assert (tgt.labels == k).sum() == spec.pixels_per_known_target
    assert (src.labels == k).sum() >= 50


def test_scene_regions_are_contiguous(small_scene):
    spec, (src, _) = small_scene
    for k in range(1, spec.num_known + 1):
        total = (src.labels == k).sum()
        assert _flood_count(src.labels, k) == total


def test_zero_shift_class_means_agree():
    spec = dataio.default_scene_spec(
        seed=5,
        num_known=3,
        num_unknown=1,
        bands=12,
        height=40,
        width=40,
        shift="none",
        pixels_per_known_source=120,
        pixels_per_known_target=120,
        pixels_per_unknown=60,
    )
    src, tgt = dataio.synth_scene(spec)
    for k in range(1, spec.num_known + 1):
        src_px = src.data[src.labels == k]
        tgt_px = tgt.data[tgt.labels == k]
        sigma = src_px.std(axis=0, ddof=1)
        bound = 3.0 * sigma * np.sqrt(1.0 / len(src_px) + 1.0 / len(tgt_px))
        assert np.all(np.abs(src_px.mean(axis=0) - tgt_px.mean(axis=0)) <= bound + 1e-6)


def test_moderate_shift_moves_band_means():
    spec = dataio.default_scene_spec(seed=5, num_known=3, num_unknown=1, bands=12, height=40, width=40,
                                     shift="moderate", pixels_per_known_source=120,
                                     pixels_per_known_target=120, pixels_per_unknown=60)
    src, tgt = dataio.synth_scene(spec)
    k = 1
    diff = np.abs(src.data[src.labels == k].mean(axis=0) - tgt.data[tgt.labels == k].mean(axis=0))
    assert diff.max() > 0.02  # the shift is visible somewhere in the spectrum


def test_scene_spec_validation():
    spec = dataio.default_scene_spec(seed=0, num_known=2, num_unknown=1, bands=16, height=30, width=30,
                                     pixels_per_known_source=60, pixels_per_known_target=60,
                                     pixels_per_unknown=50)
    with pytest.raises(ValueError):
        dataio.SceneSpec(**{**spec.__dict__, "pixels_per_unknown": 20}).validate()
    with pytest.raises(ValueError):
        dataio.SceneSpec(**{**spec.__dict__, "num_known": 1}).validate()


def test_labeled_coords_excludes_background(small_scene):
    spec, (src, tgt) = small_scene
    coords, labels = dataio.labeled_coords(src)
    assert len(coords) == spec.num_known * spec.pixels_per_known_source
    assert set(np.unique(labels)) == set(range(1, spec.num_known + 1))
    coords_u, labels_u = dataio.labeled_coords(tgt, include_unknown=True)
    assert (labels_u == dataio.UNKNOWN_LABEL).sum() == spec.num_unknown * spec.pixels_per_unknown


# ---------------------------------------------------------------------------
# access tracking


def test_tracked_cube_counts_reads_per_phase():
    cube = _tiny_cube()
    tracker = dataio.AccessTracker()
    tracked = dataio.TrackedCube(cube, tracker)
    tracker.phase = "train"
    assert tracked.height == 5  # metadata is free
    assert tracker.reads == {}
    _ = tracked.data
    tracker.phase = "evaluate"
    _ = tracked.data
    _ = tracked.labels
    assert tracker.reads == {"train": 1, "evaluate": 2}
    assert tracker.reads_outside(allowed=("evaluate",)) == 1
