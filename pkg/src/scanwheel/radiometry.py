"""Shared per-scene physical and feature transforms.

Everything here is a pure function of an immutable scene, so results can be
computed once and shared across all analytics in a run.  ``PreparedScene``
is that shared cache.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, MetadataError
from .scene import Instrument, Scene, solar_zenith_cosine


class FeatureBasis(str, Enum):
    LOG_COLOR = "LOG_COLOR"
    PCA_SCORES = "PCA_SCORES"
    ALI_BINNED = "ALI_BINNED"


@dataclass
class ReflectanceCube:
    """At-sensor reflectance, band-major, same grid and mask as the scene."""

    values: np.ndarray  # (bands, rows, cols), float64
    band_centers_nm: list[float]
    nodata_mask: np.ndarray

    @property
    def band_count(self) -> int:
        return self.values.shape[0]


@dataclass
class FeatureCube:
    """A derived per-pixel feature stack (components, rows, cols)."""

    values: np.ndarray
    basis_tag: FeatureBasis
    nodata_mask: np.ndarray
    component_centers_nm: list[float] | None = None

    @property
    def component_count(self) -> int:
        return self.values.shape[0]


def to_reflectance(scene: Scene) -> ReflectanceCube:
    """Convert recorded radiance to at-sensor reflectance.

    Per band i:  rho_i = pi * d^2 * L_i / (mu0 * F0_i)  with mu0 the cosine
    of the solar zenith angle and d the Earth-Sun distance in AU.  When the
    metadata carries a per-band (gain, offset), raw values are rescaled to
    radiance first.  Masked pixels come out as 0.
    """
    meta = scene.metadata
    flux = np.asarray(meta.band_solar_flux, dtype=np.float64)
    if flux.shape[0] != scene.band_count:
        raise MetadataError("band_solar_flux length != band count")
    if np.any(flux <= 0.0):
        bad = int(np.argmax(flux <= 0.0))
        raise MetadataError(f"band_solar_flux[{bad}] = {flux[bad]} is not positive")
    mu0 = solar_zenith_cosine(meta)
    d = meta.earth_sun_distance_au

    radiance = scene.radiance.astype(np.float64)
    if meta.scale_offset is not None:
        gain = np.asarray(meta.scale_offset[0], dtype=np.float64)[:, None, None]
        offset = np.asarray(meta.scale_offset[1], dtype=np.float64)[:, None, None]
        radiance = gain * radiance + offset

    factor = np.pi * d * d / (mu0 * flux)  # per band
    rho = factor[:, None, None] * radiance
    rho[:, scene.nodata_mask] = 0.0
    return ReflectanceCube(
        values=rho,
        band_centers_nm=list(meta.band_centers_nm),
        nodata_mask=scene.nodata_mask.copy(),
    )


def log_color_projection(scene: Scene, band_subset: list[int] | None = None) -> FeatureCube:
    """Log-radiance projected onto its color-only (intensity-free) subspace.

    x_i = ln(L_i), then the per-pixel mean over components is subtracted, so
    scaling a pixel's radiance by any c > 0 leaves its features unchanged.
    Pixels with any non-positive band in the subset are masked for this cube.
    """
    if band_subset is None:
        cube = scene.radiance.astype(np.float64)
        centers = list(scene.metadata.band_centers_nm)
    else:
        cube = scene.radiance[band_subset].astype(np.float64)
        centers = [scene.metadata.band_centers_nm[i] for i in band_subset]
    nonpositive = (cube <= 0.0).any(axis=0)
    mask = scene.nodata_mask | nonpositive
    safe = np.where(cube > 0.0, cube, 1.0)
    logs = np.log(safe)
    logs -= logs.mean(axis=0, keepdims=True)
    logs[:, mask] = 0.0
    return FeatureCube(
        values=logs,
        basis_tag=FeatureBasis.LOG_COLOR,
        nodata_mask=mask,
        component_centers_nm=centers,
    )


def default_ali_intervals() -> list[tuple[float, float]]:
    """The 9-interval multispectral band table shipped with the package."""
    with resources.files("scanwheel.data").joinpath("ali_bands.json").open("rb") as f:
        table = json.load(f)
    return [(float(lo), float(hi)) for lo, hi in table]


def load_ali_intervals(path: str | Path | None) -> list[tuple[float, float]]:
    if path is None:
        return default_ali_intervals()
    table = json.loads(Path(path).read_text("utf-8"))
    return [(float(lo), float(hi)) for lo, hi in table]


def bin_to_ali(
    cube: ReflectanceCube,
    band_map: list[tuple[float, float]],
    instrument: Instrument | None = None,
) -> FeatureCube:
    """Average fine spectral bands into coarse multispectral components.

    Component j is the unweighted mean of the source bands whose centers fall
    inside interval j (inclusive on both edges).  Input that already has the
    coarse layout (ALI-like instrument, one band per interval) passes through
    unchanged.
    """
    centers = np.asarray(cube.band_centers_nm, dtype=np.float64)
    if instrument is Instrument.ALI_LIKE and len(centers) == len(band_map):
        return FeatureCube(
            values=cube.values.copy(),
            basis_tag=FeatureBasis.ALI_BINNED,
            nodata_mask=cube.nodata_mask.copy(),
            component_centers_nm=list(cube.band_centers_nm),
        )
    components = np.empty((len(band_map),) + cube.values.shape[1:], dtype=np.float64)
    mid_centers = []
    for j, (lo, hi) in enumerate(band_map):
        member = (centers >= lo) & (centers <= hi)
        if not member.any():
            raise ConfigError(
                f"band interval [{lo}, {hi}] nm contains no source band"
            )
        components[j] = cube.values[member].mean(axis=0)
        mid_centers.append(0.5 * (lo + hi))
    components[:, cube.nodata_mask] = 0.0
    return FeatureCube(
        values=components,
        basis_tag=FeatureBasis.ALI_BINNED,
        nodata_mask=cube.nodata_mask.copy(),
        component_centers_nm=mid_centers,
    )


def rgb_composite(
    scene: Scene,
    bands: tuple[int, int, int],
    stretch: str = "minmax",
    percentile_clip: tuple[float, float] = (2.0, 98.0),
) -> np.ndarray:
    """8-bit (rows, cols, 3) composite from three bands.

    The longest-wavelength band of the triplet is rendered as red, the
    shortest as blue.  Each channel is stretched independently over unmasked
    pixels; a constant band renders as zeros.  Rounding is half-to-even.
    """
    for b in bands:
        if not (0 <= b < scene.band_count):
            raise ConfigError(f"band index {b} out of range")
    order = sorted(bands, key=lambda b: scene.metadata.band_centers_nm[b], reverse=True)
    valid = scene.valid_mask
    out = np.zeros((scene.rows, scene.cols, 3), dtype=np.uint8)
    if not valid.any():
        return out
    for channel, b in enumerate(order):
        band = scene.radiance[b].astype(np.float64)
        sample = band[valid]
        if stretch == "percentile":
            lo = float(np.percentile(sample, percentile_clip[0]))
            hi = float(np.percentile(sample, percentile_clip[1]))
        elif stretch == "minmax":
            lo = float(sample.min())
            hi = float(sample.max())
        else:
            raise ConfigError(f"unknown stretch mode {stretch!r}")
        if hi <= lo:
            continue
        scaled = np.clip((band - lo) / (hi - lo), 0.0, 1.0) * 255.0
        out[:, :, channel] = np.rint(scaled).astype(np.uint8)
    out[~valid] = 0
    return out


def top_variance_bands(
    values: np.ndarray,
    valid: np.ndarray,
    count: int,
    centers: list[float],
) -> list[int]:
    """Indices of the ``count`` highest-variance bands, in band order.

    Variance is taken over unmasked pixels.  Ties break on band center so
    the selected set does not depend on how the input bands were ordered.
    """
    nbands = values.shape[0]
    if count >= nbands:
        return list(range(nbands))
    variances = values[:, valid].var(axis=1)
    order = sorted(range(nbands), key=lambda b: (-variances[b], centers[b]))
    return sorted(order[:count])


def default_rgb_bands(scene: Scene) -> tuple[int, int, int]:
    """Nearest bands to the canonical 640.5 / 579.45 / 508.22 nm triplet."""
    centers = np.asarray(scene.metadata.band_centers_nm)
    picks = []
    for target in (640.5, 579.45, 508.22):
        picks.append(int(np.argmin(np.abs(centers - target))))
    return tuple(picks)  # type: ignore[return-value]


@dataclass
class PreparedScene:
    """Per-scene cache of shared derivations, computed at most once each.

    The reflectance cube is built eagerly because nearly every analytic needs
    it; the log/color cube, the coarse-binned cube, and the RGB composite are
    built on first access.  Instances are immutable in practice and safe to
    share across analytics running on the same scene.
    """

    scene: Scene
    ali_intervals: list[tuple[float, float]] = field(default_factory=default_ali_intervals)
    rgb_bands: tuple[int, int, int] | None = None
    reflectance: ReflectanceCube = field(init=False)
    _log_color: FeatureCube | None = field(init=False, default=None, repr=False)
    _ali_binned: FeatureCube | None = field(init=False, default=None, repr=False)
    _rgb: np.ndarray | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self.reflectance = to_reflectance(self.scene)

    @property
    def scene_id(self) -> str:
        return self.scene.scene_id

    @property
    def log_color(self) -> FeatureCube:
        if self._log_color is None:
            self._log_color = log_color_projection(self.scene)
        return self._log_color

    @property
    def ali_binned(self) -> FeatureCube:
        if self._ali_binned is None:
            self._ali_binned = bin_to_ali(
                self.reflectance, self.ali_intervals, self.scene.metadata.instrument
            )
        return self._ali_binned

    @property
    def rgb(self) -> np.ndarray:
        if self._rgb is None:
            bands = self.rgb_bands or default_rgb_bands(self.scene)
            self._rgb = rgb_composite(self.scene, bands)
        return self._rgb
