"""Synthetic scene generator with ground-truth manifests.

Scenes are built from four smooth archetype reflectance curves (flat-high
cloud, red-edge vegetation, low decaying water, rising desert), converted to
radiance with the recipe's solar geometry, and perturbed with seeded Gaussian
noise.  Planted anomalies shift the spectrum of chosen pixels by a stated
multiple of the noise sigma.  Everything, including the written bundle
bytes, is a deterministic function of the recipe seed, and the manifest
records the truth every detector test needs: planted pixel sets, per-pixel
classes, band checksums, and the archetype spectra.
"""

from __future__ import annotations

import datetime
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .analytics.classifier import CLASSES
from .errors import ConfigError
from .radiometry import default_ali_intervals
from .scene import GeoBounds, Instrument, Scene, SceneMetadata, write_scene

COMPLETE_MARKER = "COMPLETE"
TRUTH_FILENAME = "truth.json"


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def archetype_reflectance(class_name: str, wavelengths_nm) -> np.ndarray:
    """Smooth parametric reflectance curve for one cover class.

    These are qualitative stand-ins shaped like the usual cover spectra
    (cloud flat and bright, vegetation stepping up at the red edge, water
    dark and decaying, desert rising), not measured curves.
    """
    w = np.asarray(wavelengths_nm, dtype=np.float64)
    if class_name == "CLOUD":
        return 0.72 - 5e-5 * (w - 400.0)
    if class_name == "WATER":
        return 0.005 + 0.12 * np.exp(-(w - 400.0) / 250.0)
    if class_name == "VEGETATION":
        step = 0.05 + 0.38 * _sigmoid((w - 715.0) / 18.0)
        return step * (1.0 - 0.45 * _sigmoid((w - 1300.0) / 150.0))
    if class_name == "DESERT":
        return 0.10 + 0.32 * (1.0 - np.exp(-(w - 400.0) / 900.0))
    raise ConfigError(f"unknown archetype class {class_name!r}")


def solar_flux_curve(wavelengths_nm) -> np.ndarray:
    """Smooth positive stand-in for per-band incident solar flux."""
    w = np.asarray(wavelengths_nm, dtype=np.float64)
    return 180.0 + 1900.0 * np.exp(-0.5 * ((w - 480.0) / 380.0) ** 2)


def default_band_centers() -> list[float]:
    """30 band centers: two inside each coarse multispectral interval plus
    fill bands across 360-2576 nm."""
    centers = []
    for lo, hi in default_ali_intervals():
        centers.append(lo + 0.3 * (hi - lo))
        centers.append(lo + 0.7 * (hi - lo))
    centers.extend(
        [360.0, 410.0, 700.0, 730.0, 910.0, 1000.0, 1100.0, 1400.0,
         1900.0, 2000.0, 2500.0, 2576.0]
    )
    return sorted(centers)


@dataclass
class PlantedAnomaly:
    """A rectangular patch whose spectrum is shifted off the background.

    ``shift_sigma`` is measured in units of the recipe noise sigma.  In
    ``per_band`` mode every band shifts by shift_sigma * sigma; in ``norm``
    mode the shift vector has L2 norm shift_sigma * sigma along the chosen
    direction ("uniform", "random", or an explicit vector).  Direction
    "scatter" draws an independent random direction per pixel (norm mode),
    producing a spectrally incoherent patch.

    ``log_color`` mode instead perturbs the pixel's color multiplicatively:
    each band is scaled by exp(delta) where the per-band deltas are
    non-negative (brightward, so noise cannot clip dim bands to zero) with a
    random profile of norm shift_sigma * sqrt(bands); shift_sigma is in
    absolute log units per band.  Direction "scatter" redraws the profile
    per pixel.
    """

    row: int
    col: int
    height: int = 3
    width: int = 4
    shift_sigma: float = 8.0
    mode: str = "per_band"          # per_band | norm | log_color
    direction: str | list = "uniform"

    def pixels(self) -> list[tuple[int, int]]:
        return [
            (self.row + dr, self.col + dc)
            for dr in range(self.height)
            for dc in range(self.width)
        ]


@dataclass
class SceneRecipe:
    scene_id: str
    rows: int = 100
    cols: int = 100
    seed: int = 0
    band_centers_nm: list[float] | None = None
    background: str | dict = "DESERT"
    noise_sigma: float = 1.0
    anomalies: list[PlantedAnomaly] = field(default_factory=list)
    sun_elevation_deg: float = 49.1
    sun_azimuth_deg: float = 119.12
    earth_sun_distance_au: float = 1.0
    acquisition_date: str = "2014-02-11"
    geo_bounds: GeoBounds | None = None
    instrument: Instrument = Instrument.SYNTHETIC
    nodata_rects: list[tuple[int, int, int, int]] = field(default_factory=list)


def _class_grid(recipe: SceneRecipe) -> np.ndarray:
    grid = np.zeros((recipe.rows, recipe.cols), dtype=np.int8)
    bg = recipe.background
    if isinstance(bg, str):
        grid[:] = CLASSES.index(bg)
        return grid
    kind = bg.get("kind")
    names = bg.get("classes", [])
    if kind == "halves":
        axis = bg.get("axis", "cols")
        a, b = (CLASSES.index(names[0]), CLASSES.index(names[1]))
        if axis == "cols":
            grid[:, : recipe.cols // 2] = a
            grid[:, recipe.cols // 2:] = b
        else:
            grid[: recipe.rows // 2, :] = a
            grid[recipe.rows // 2:, :] = b
        return grid
    if kind == "quadrants":
        ids = [CLASSES.index(n) for n in names]
        rh, ch = recipe.rows // 2, recipe.cols // 2
        grid[:rh, :ch] = ids[0]
        grid[:rh, ch:] = ids[1]
        grid[rh:, :ch] = ids[2]
        grid[rh:, ch:] = ids[3]
        return grid
    raise ConfigError(f"unknown background spec {bg!r}")


def generate(recipe: SceneRecipe, out_dir: str | Path,
             complete_marker: bool = True) -> tuple[Path, dict]:
    """Write the scene bundle plus its ground-truth manifest.

    Returns (bundle path, manifest dict).  The manifest is also stored in
    the bundle directory as ``truth.json``; loaders ignore it.
    """
    rng = np.random.default_rng(recipe.seed)
    centers = np.asarray(recipe.band_centers_nm or default_band_centers())
    nbands = centers.shape[0]
    flux = solar_flux_curve(centers)
    mu0 = math.cos(math.radians(90.0 - recipe.sun_elevation_deg))
    d = recipe.earth_sun_distance_au

    class_grid = _class_grid(recipe)
    used_classes = sorted({CLASSES[i] for i in np.unique(class_grid)})
    rho = {name: archetype_reflectance(name, centers) for name in used_classes}
    radiance_of = {
        name: rho[name] * mu0 * flux / (math.pi * d * d) for name in used_classes
    }

    clean = np.empty((nbands, recipe.rows, recipe.cols))
    for name in used_classes:
        sel = class_grid == CLASSES.index(name)
        clean[:, sel] = radiance_of[name][:, None]

    planted = []
    taken: set[tuple[int, int]] = set()
    for anomaly in recipe.anomalies:
        pixels = anomaly.pixels()
        for r, c in pixels:
            if not (0 <= r < recipe.rows and 0 <= c < recipe.cols):
                raise ConfigError(f"anomaly pixel ({r}, {c}) out of bounds")
            if (r, c) in taken:
                raise ConfigError(f"anomalies overlap at ({r}, {c})")
            taken.add((r, c))
        rows = np.array([p[0] for p in pixels])
        cols = np.array([p[1] for p in pixels])
        if anomaly.mode == "log_color":
            n_draw = len(pixels) if anomaly.direction == "scatter" else 1
            deltas = np.abs(rng.standard_normal((n_draw, nbands)))
            deltas *= (
                anomaly.shift_sigma * math.sqrt(nbands)
                / np.linalg.norm(deltas, axis=1, keepdims=True)
            )
            if n_draw == 1:
                deltas = np.repeat(deltas, len(pixels), axis=0)
            clean[:, rows, cols] *= np.exp(deltas).T
            planted.append({
                "pixels": [[int(r), int(c)] for r, c in pixels],
                "shift": None,
                "shift_sigma": anomaly.shift_sigma,
                "mode": "log_color",
            })
            continue
        if anomaly.direction == "scatter":
            dirs = rng.standard_normal((len(pixels), nbands))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            shifts = anomaly.shift_sigma * recipe.noise_sigma * dirs
            clean[:, rows, cols] += shifts.T
            shift_record = None
        else:
            if isinstance(anomaly.direction, str):
                if anomaly.direction == "uniform":
                    direction = np.ones(nbands)
                elif anomaly.direction == "random":
                    direction = rng.standard_normal(nbands)
                else:
                    raise ConfigError(f"unknown direction {anomaly.direction!r}")
            else:
                direction = np.asarray(anomaly.direction, dtype=np.float64)
            if anomaly.mode == "per_band":
                unit = direction / np.max(np.abs(direction))
            elif anomaly.mode == "norm":
                unit = direction / np.linalg.norm(direction)
            else:
                raise ConfigError(f"unknown shift mode {anomaly.mode!r}")
            shift = anomaly.shift_sigma * recipe.noise_sigma * unit
            clean[:, rows, cols] += shift[:, None]
            shift_record = shift.tolist()
        planted.append({
            "pixels": [[int(r), int(c)] for r, c in pixels],
            "shift": shift_record,
            "shift_sigma": anomaly.shift_sigma,
            "mode": anomaly.mode if anomaly.direction != "scatter" else "scatter",
        })

    noisy = clean + rng.normal(0.0, recipe.noise_sigma, clean.shape)
    radiance = np.maximum(noisy, 0.0).astype(np.float32)

    nodata = np.zeros((recipe.rows, recipe.cols), dtype=bool)
    for r0, c0, r1, c1 in recipe.nodata_rects:
        nodata[r0:r1, c0:c1] = True

    bounds = recipe.geo_bounds or GeoBounds(
        lat_min=10.0,
        lat_max=10.0 + 0.0003 * recipe.rows,
        lon_min=20.0,
        lon_max=20.0 + 0.0003 * recipe.cols,
    )
    metadata = SceneMetadata(
        scene_id=recipe.scene_id,
        acquisition_date=datetime.date.fromisoformat(recipe.acquisition_date),
        sun_elevation_deg=recipe.sun_elevation_deg,
        sun_azimuth_deg=recipe.sun_azimuth_deg,
        earth_sun_distance_au=recipe.earth_sun_distance_au,
        geo_bounds=bounds,
        instrument=recipe.instrument,
        band_centers_nm=[float(x) for x in centers],
        band_solar_flux=[float(x) for x in flux],
    )
    scene = Scene(
        metadata=metadata,
        rows=recipe.rows,
        cols=recipe.cols,
        radiance=radiance,
        nodata_mask=nodata,
    )
    bundle = write_scene(scene, Path(out_dir) / recipe.scene_id)

    checksums = [
        hashlib.sha256(
            np.ascontiguousarray(radiance[b], dtype="<f4").tobytes()
        ).hexdigest()
        for b in range(nbands)
    ]
    sample_idx = rng.integers(0, recipe.rows * recipe.cols, size=5)
    spectrum_samples = []
    for flat in sample_idx:
        r, c = int(flat) // recipe.cols, int(flat) % recipe.cols
        spectrum_samples.append({
            "row": r, "col": c,
            "radiance": [float(radiance[b, r, c]) for b in range(nbands)],
        })

    manifest = {
        "scene_id": recipe.scene_id,
        "seed": recipe.seed,
        "rows": recipe.rows,
        "cols": recipe.cols,
        "band_centers_nm": [float(x) for x in centers],
        "noise_sigma": recipe.noise_sigma,
        "class_names": list(CLASSES),
        "class_grid": class_grid.tolist(),
        "archetype_reflectance": {n: rho[n].tolist() for n in used_classes},
        "class_radiance": {n: radiance_of[n].tolist() for n in used_classes},
        "anomalies": planted,
        "band_checksums": checksums,
        "spectrum_samples": spectrum_samples,
    }
    (bundle / TRUTH_FILENAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", "utf-8"
    )
    if complete_marker:
        (bundle / COMPLETE_MARKER).write_text("", "utf-8")
    return bundle, manifest


def load_manifest(bundle: str | Path) -> dict:
    return json.loads((Path(bundle) / TRUTH_FILENAME).read_text("utf-8"))
