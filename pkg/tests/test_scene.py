import hashlib

import numpy as np
import pytest

from scanwheel import synth
from scanwheel.errors import PixelLookupError, SceneFormatError, SceneLoadError
from scanwheel.scene import load_scene, pixel_spectrum, validate_scene, write_scene

from conftest import make_scene


def test_load_single_pixel_single_band(tmp_path):
    scene = make_scene(rows=1, cols=1, bands=[500.0], values=np.zeros((1, 1, 1)))
    write_scene(scene, tmp_path / "b")
    loaded = load_scene(tmp_path / "b")
    assert loaded.rows == 1 and loaded.cols == 1
    assert loaded.radiance[0, 0, 0] == 0.0


def test_load_matches_generator_checksums(tmp_path):
    recipe = synth.SceneRecipe(
        scene_id="tiny", rows=2, cols=2, seed=4, band_centers_nm=[500.0, 600.0]
    )
    bundle, manifest = synth.generate(recipe, tmp_path)
    scene = load_scene(bundle)
    for b in range(scene.band_count):
        digest = hashlib.sha256(
            np.ascontiguousarray(scene.radiance[b], dtype="<f4").tobytes()
        ).hexdigest()
        assert digest == manifest["band_checksums"][b]


def test_load_wrong_band_length_names_file(tmp_path):
    scene = make_scene()
    bundle = write_scene(scene, tmp_path / "b")
    band = bundle / "band_1.f32"
    band.write_bytes(band.read_bytes()[:-4])
    with pytest.raises(SceneFormatError, match="band_1.f32"):
        load_scene(bundle)


def test_load_missing_band_is_load_error(tmp_path):
    scene = make_scene()
    bundle = write_scene(scene, tmp_path / "b")
    (bundle / "band_0.f32").unlink()
    with pytest.raises(SceneLoadError, match="band_0.f32"):
        load_scene(bundle)


def test_read_counter_increments_once_per_band(tmp_path):
    from scanwheel.engine import BandReadCounter

    scene = make_scene(bands=[500.0, 600.0, 700.0])
    bundle = write_scene(scene, tmp_path / "b")
    counter = BandReadCounter()
    load_scene(bundle, read_counter=counter)
    assert counter.counts() == {"unit": 3}


def test_round_trip_is_byte_identical(tmp_path):
    recipe = synth.SceneRecipe(
        scene_id="rt", rows=6, cols=5, seed=9,
        nodata_rects=[(0, 0, 2, 2)],
    )
    bundle, _ = synth.generate(recipe, tmp_path, complete_marker=False)
    scene = load_scene(bundle)
    out = write_scene(scene, tmp_path / "copy")
    names = ["metadata.json", "nodata.u8"] + [
        f"band_{i}.f32" for i in range(scene.band_count)
    ]
    for name in names:
        assert (out / name).read_bytes() == (bundle / name).read_bytes(), name


def test_validate_flags_nonfinite_as_error():
    values = np.ones((2, 4, 4), dtype=np.float32)
    values[0, 1, 2] = np.nan
    scene = make_scene(rows=4, cols=4, values=values)
    report = validate_scene(scene)
    assert not report.ok
    assert sum(1 for sev, _ in report.issues if sev == "ERROR") == 1


def test_validate_masks_zero_edge_rows():
    values = np.ones((2, 4, 5), dtype=np.float32)
    values[:, 0, :] = 0.0
    scene = make_scene(rows=4, cols=5, values=values)
    report = validate_scene(scene)
    assert report.ok
    assert [sev for sev, _ in report.issues] == ["WARN"]
    assert scene.nodata_mask[0].all()
    assert not scene.nodata_mask[1:].any()


def test_validate_clean_scene_ok(tmp_path):
    bundle, _ = synth.generate(synth.SceneRecipe(scene_id="ok", rows=10, cols=10, seed=2), tmp_path)
    report = validate_scene(load_scene(bundle))
    assert report.ok and report.issues == []


def test_validate_never_unmasks():
    rng = np.random.default_rng(6)
    for trial in range(10):
        values = rng.uniform(0.0, 2.0, size=(2, 6, 6)).astype(np.float32)
        values[:, : rng.integers(0, 3), :] = 0.0
        scene = make_scene(rows=6, cols=6, values=values)
        scene.nodata_mask[rng.random((6, 6)) < 0.2] = True
        before = scene.nodata_mask.copy()
        validate_scene(scene)
        first = scene.nodata_mask.copy()
        assert (first | before).sum() == first.sum()  # superset of before
        validate_scene(scene)
        assert (scene.nodata_mask | first).sum() == scene.nodata_mask.sum()


def test_pixel_spectrum_values_and_errors():
    values = np.zeros((2, 2, 2), dtype=np.float32)
    values[0, 0, 0] = 1.0
    values[1, 0, 0] = 2.0
    scene = make_scene(rows=2, cols=2, values=values)
    assert pixel_spectrum(scene, 0, 0).tolist() == [1.0, 2.0]
    scene.nodata_mask[1, 1] = True
    with pytest.raises(PixelLookupError):
        pixel_spectrum(scene, 1, 1)
    with pytest.raises(PixelLookupError):
        pixel_spectrum(scene, 5, 0)


def test_pixel_spectrum_matches_generator_record(tmp_path):
    bundle, manifest = synth.generate(
        synth.SceneRecipe(scene_id="px", rows=12, cols=12, seed=13), tmp_path
    )
    scene = load_scene(bundle)
    for sample in manifest["spectrum_samples"]:
        got = pixel_spectrum(scene, sample["row"], sample["col"])
        assert got.tolist() == sample["radiance"]
    assert got.shape[0] == len(scene.metadata.band_centers_nm)
