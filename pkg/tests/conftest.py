import sys

import numpy as np
import pytest

from scanwheel import synth
from scanwheel.analytics import classifier as clf


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    status = "PASS" if report.passed else ("FAIL" if report.failed else "SKIP")
    name = report.nodeid.split("::")[-1]
    sys.stderr.write(f"[acceptance] {name}: {status}\n")


@pytest.fixture(scope="session")
def session_dir(tmp_path_factory):
    return tmp_path_factory.mktemp("scanwheel")


@pytest.fixture(scope="session")
def small_model(session_dir):
    """A classifier trained on small pure-class scenes, plus its file path."""
    regions = []
    for i, name in enumerate(clf.CLASSES):
        recipe = synth.SceneRecipe(
            scene_id=f"train-{name.lower()}", rows=24, cols=24, seed=900 + i,
            background=name, noise_sigma=0.3,
        )
        bundle, _ = synth.generate(recipe, session_dir / "train-scenes")
        regions.append((bundle, (1, 1, 23, 23), name))
    ts = clf.build_training_set(regions)
    model = clf.train_classifier(ts, epochs=80, seed=0)
    path = session_dir / "small-model.json"
    model.save(path)
    return model, path


def make_scene(rows=8, cols=9, bands=(500.0, 600.0), values=None, **meta_kwargs):
    """Hand-built in-memory scene for unit tests."""
    import datetime

    from scanwheel.scene import GeoBounds, Instrument, Scene, SceneMetadata

    bands = list(bands)
    if values is not None:
        values = np.asarray(values)
        rows, cols = values.shape[1], values.shape[2]
    defaults = dict(
        scene_id="unit",
        acquisition_date=datetime.date(2014, 2, 11),
        sun_elevation_deg=90.0,
        sun_azimuth_deg=120.0,
        earth_sun_distance_au=1.0,
        geo_bounds=GeoBounds(lat_min=10.0, lat_max=11.0, lon_min=20.0, lon_max=21.0),
        instrument=Instrument.SYNTHETIC,
        band_centers_nm=bands,
        band_solar_flux=[1000.0] * len(bands),
    )
    defaults.update(meta_kwargs)
    metadata = SceneMetadata(**defaults)
    if values is None:
        values = np.ones((len(bands), rows, cols), dtype=np.float32)
    values = np.asarray(values, dtype=np.float32)
    return Scene(metadata=metadata, rows=rows, cols=cols, radiance=values)


@pytest.fixture
def unit_scene_factory():
    return make_scene
