"""Scene bundle data model: on-disk format, loading, validation, pixel access.

A scene bundle is a directory holding

* ``metadata.json``  -- UTF-8 JSON, snake_case keys, canonical (sorted) order,
* ``band_<i>.f32``   -- one flat raster per band, rows x cols little-endian
  float32, row-major, ``i`` counted from 0 in band order,
* ``nodata.u8``      -- optional rows x cols bytes, 1 marks an invalid pixel.

Bundles written by :func:`write_scene` round-trip byte-identically through
:func:`load_scene`.
"""

from __future__ import annotations

import datetime
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import MetadataError, PixelLookupError, SceneFormatError, SceneLoadError

METADATA_FILENAME = "metadata.json"
NODATA_FILENAME = "nodata.u8"


class Instrument(str, Enum):
    HYPERION_LIKE = "HYPERION_LIKE"
    ALI_LIKE = "ALI_LIKE"
    SYNTHETIC = "SYNTHETIC"


@dataclass(frozen=True)
class GeoBounds:
    """Axis-aligned lat/lon bounding box of the scene footprint."""

    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def as_dict(self) -> dict:
        return {
            "lat_min": self.lat_min,
            "lat_max": self.lat_max,
            "lon_min": self.lon_min,
            "lon_max": self.lon_max,
        }


@dataclass
class SceneMetadata:
    """Acquisition, solar, and band metadata carried by every scene."""

    scene_id: str
    acquisition_date: datetime.date
    sun_elevation_deg: float
    sun_azimuth_deg: float
    earth_sun_distance_au: float
    geo_bounds: GeoBounds
    instrument: Instrument
    band_centers_nm: list[float]
    band_solar_flux: list[float]
    scale_offset: tuple[list[float], list[float]] | None = None

    @property
    def band_count(self) -> int:
        return len(self.band_centers_nm)

    def check(self) -> list[str]:
        """Return human-readable descriptions of metadata invariant violations."""
        problems = []
        centers = self.band_centers_nm
        if len(centers) == 0:
            problems.append("band_centers_nm is empty")
        if any(b <= a for a, b in zip(centers, centers[1:])):
            problems.append("band_centers_nm is not strictly increasing")
        if len(self.band_solar_flux) != len(centers):
            problems.append(
                "band_solar_flux length %d != band count %d"
                % (len(self.band_solar_flux), len(centers))
            )
        if not (0.0 < self.sun_elevation_deg <= 90.0):
            problems.append(
                "sun_elevation_deg %g outside (0, 90]" % self.sun_elevation_deg
            )
        if not (0.0 <= self.sun_azimuth_deg < 360.0):
            problems.append("sun_azimuth_deg %g outside [0, 360)" % self.sun_azimuth_deg)
        if not self.earth_sun_distance_au > 0.0:
            problems.append("earth_sun_distance_au must be > 0")
        if self.scale_offset is not None:
            gain, offset = self.scale_offset
            if len(gain) != len(centers) or len(offset) != len(centers):
                problems.append("scale_offset gain/offset lengths != band count")
        return problems

    def as_dict(self) -> dict:
        d = {
            "scene_id": self.scene_id,
            "acquisition_date": self.acquisition_date.isoformat(),
            "sun_elevation_deg": self.sun_elevation_deg,
            "sun_azimuth_deg": self.sun_azimuth_deg,
            "earth_sun_distance_au": self.earth_sun_distance_au,
            "geo_bounds": self.geo_bounds.as_dict(),
            "instrument": self.instrument.value,
            "band_centers_nm": list(self.band_centers_nm),
            "band_solar_flux": list(self.band_solar_flux),
        }
        if self.scale_offset is None:
            d["scale_offset"] = None
        else:
            d["scale_offset"] = {
                "gain": list(self.scale_offset[0]),
                "offset": list(self.scale_offset[1]),
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneMetadata":
        so = d.get("scale_offset")
        scale_offset = None
        if so is not None:
            scale_offset = (list(so["gain"]), list(so["offset"]))
        return cls(
            scene_id=d["scene_id"],
            acquisition_date=datetime.date.fromisoformat(d["acquisition_date"]),
            sun_elevation_deg=float(d["sun_elevation_deg"]),
            sun_azimuth_deg=float(d["sun_azimuth_deg"]),
            earth_sun_distance_au=float(d["earth_sun_distance_au"]),
            geo_bounds=GeoBounds(**d["geo_bounds"]),
            instrument=Instrument(d["instrument"]),
            band_centers_nm=[float(x) for x in d["band_centers_nm"]],
            band_solar_flux=[float(x) for x in d["band_solar_flux"]],
            scale_offset=scale_offset,
        )


@dataclass
class Scene:
    """A band-major radiance cube plus its metadata and nodata mask.

    ``radiance`` has shape ``(bands, rows, cols)``; ``nodata_mask`` has shape
    ``(rows, cols)`` with True marking invalid pixels.  Scenes are treated as
    immutable once constructed, except that :func:`validate_scene` may widen
    the nodata mask in place.
    """

    metadata: SceneMetadata
    rows: int
    cols: int
    radiance: np.ndarray
    nodata_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.nodata_mask is None:
            self.nodata_mask = np.zeros((self.rows, self.cols), dtype=bool)
        expected = (self.metadata.band_count, self.rows, self.cols)
        if self.radiance.shape != expected:
            raise SceneFormatError(
                f"radiance shape {self.radiance.shape} != expected {expected}"
            )
        if self.nodata_mask.shape != (self.rows, self.cols):
            raise SceneFormatError("nodata_mask shape does not match rows x cols")

    @property
    def scene_id(self) -> str:
        return self.metadata.scene_id

    @property
    def band_count(self) -> int:
        return self.metadata.band_count

    @property
    def valid_mask(self) -> np.ndarray:
        return ~self.nodata_mask


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    issues: list[tuple[str, str]]  # (severity, message), severity in {ERROR, WARN}

    def as_dict(self) -> dict:
        return {
            "ok": self.ok,
            "issues": [{"severity": s, "message": m} for s, m in self.issues],
        }


class GeoTransform:
    """Affine map between pixel coordinates and lon/lat.

    Pixel coordinates are continuous: integer values lie on pixel corners, so
    pixel (r, c) spans [r, r+1) x [c, c+1) and its center is (r+0.5, c+0.5).
    Row 0 sits at lat_max (north-up).
    """

    def __init__(self, bounds: GeoBounds, rows: int, cols: int):
        self.bounds = bounds
        self.rows = rows
        self.cols = cols
        self._dlat = (bounds.lat_max - bounds.lat_min) / rows
        self._dlon = (bounds.lon_max - bounds.lon_min) / cols

    def to_lonlat(self, row: float, col: float) -> tuple[float, float]:
        lon = self.bounds.lon_min + col * self._dlon
        lat = self.bounds.lat_max - row * self._dlat
        return lon, lat

    def to_rowcol(self, lon: float, lat: float) -> tuple[float, float]:
        col = (lon - self.bounds.lon_min) / self._dlon
        row = (self.bounds.lat_max - lat) / self._dlat
        return row, col

    def pixel_bounds(self, row: int, col: int) -> GeoBounds:
        lon0, lat0 = self.to_lonlat(row + 1, col)
        lon1, lat1 = self.to_lonlat(row, col + 1)
        return GeoBounds(lat_min=lat0, lat_max=lat1, lon_min=lon0, lon_max=lon1)


def geo_transform(scene: Scene) -> GeoTransform:
    return GeoTransform(scene.metadata.geo_bounds, scene.rows, scene.cols)


def _band_filename(i: int) -> str:
    return f"band_{i}.f32"


def metadata_bytes(metadata: SceneMetadata, rows: int, cols: int) -> bytes:
    """Canonical metadata.json bytes: sorted keys, two-space indent, newline."""
    d = metadata.as_dict()
    d["rows"] = rows
    d["cols"] = cols
    return (json.dumps(d, sort_keys=True, indent=2) + "\n").encode("utf-8")


def write_scene(scene: Scene, path: str | Path) -> Path:
    """Write a scene as a bundle directory; returns the bundle path.

    ``nodata.u8`` is emitted only when at least one pixel is masked, so a
    load/write cycle reproduces generator output byte for byte.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / METADATA_FILENAME).write_bytes(
        metadata_bytes(scene.metadata, scene.rows, scene.cols)
    )
    for i in range(scene.band_count):
        data = np.ascontiguousarray(scene.radiance[i], dtype="<f4")
        (path / _band_filename(i)).write_bytes(data.tobytes())
    if scene.nodata_mask.any():
        (path / NODATA_FILENAME).write_bytes(
            np.ascontiguousarray(scene.nodata_mask, dtype=np.uint8).tobytes()
        )
    return path


def load_scene(path: str | Path, read_counter=None) -> Scene:
    """Load a scene bundle from ``path``.

    Every band file is read exactly once; if ``read_counter`` is given its
    ``record(scene_id)`` method is called once per band file read, which is
    how the engine audits its single-pass guarantee.
    """
    path = Path(path)
    meta_path = path / METADATA_FILENAME
    if not meta_path.is_file():
        raise SceneLoadError(f"missing {meta_path}")
    try:
        raw = json.loads(meta_path.read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneLoadError(f"unreadable {meta_path}: {exc}") from exc
    try:
        metadata = SceneMetadata.from_dict(raw)
        rows = int(raw["rows"])
        cols = int(raw["cols"])
    except (KeyError, ValueError, TypeError) as exc:
        raise SceneFormatError(f"bad metadata in {meta_path}: {exc}") from exc
    if rows <= 0 or cols <= 0:
        raise SceneFormatError(f"bad raster dimensions {rows}x{cols} in {meta_path}")

    nbytes = rows * cols * 4
    bands = np.empty((metadata.band_count, rows, cols), dtype=np.float32)
    for i in range(metadata.band_count):
        band_path = path / _band_filename(i)
        if not band_path.is_file():
            raise SceneLoadError(f"missing band file {band_path}")
        blob = band_path.read_bytes()
        if read_counter is not None:
            read_counter.record(metadata.scene_id)
        if len(blob) != nbytes:
            raise SceneFormatError(
                f"band file {band_path} holds {len(blob)} bytes, expected {nbytes}"
            )
        bands[i] = np.frombuffer(blob, dtype="<f4").reshape(rows, cols)

    nodata_path = path / NODATA_FILENAME
    if nodata_path.is_file():
        blob = nodata_path.read_bytes()
        if len(blob) != rows * cols:
            raise SceneFormatError(
                f"nodata file {nodata_path} holds {len(blob)} bytes, "
                f"expected {rows * cols}"
            )
        nodata = np.frombuffer(blob, dtype=np.uint8).reshape(rows, cols) != 0
    else:
        nodata = np.zeros((rows, cols), dtype=bool)

    return Scene(
        metadata=metadata, rows=rows, cols=cols, radiance=bands,
        nodata_mask=nodata.copy(),
    )


def validate_scene(scene: Scene) -> ValidationReport:
    """Check a scene for unusable values; problems are reported, not raised.

    Non-finite radiance and metadata violations are ERROR issues.  All-zero
    rows/columns on the image edges are WARNed and added to the nodata mask
    in place (the mask is only ever widened, never unmasked).
    """
    issues: list[tuple[str, str]] = []
    for problem in scene.metadata.check():
        issues.append(("ERROR", "metadata: " + problem))

    valid = scene.valid_mask
    bad = ~np.isfinite(scene.radiance)
    bad_pixels = bad.any(axis=0) & valid
    n_bad = int(bad_pixels.sum())
    if n_bad:
        r, c = np.argwhere(bad_pixels)[0]
        issues.append(
            ("ERROR", f"{n_bad} pixel(s) with non-finite radiance, first at "
                      f"({int(r)}, {int(c)})")
        )

    # Edge rows/columns that are zero in every band are sensor margins, not
    # data; mask them so no downstream statistic sees them.
    with np.errstate(invalid="ignore"):
        zero_everywhere = (scene.radiance == 0.0).all(axis=0)
    dead = zero_everywhere | scene.nodata_mask
    new_mask = scene.nodata_mask.copy()
    top = 0
    while top < scene.rows and dead[top, :].all():
        new_mask[top, :] = True
        top += 1
    bottom = scene.rows - 1
    while bottom >= top and dead[bottom, :].all():
        new_mask[bottom, :] = True
        bottom -= 1
    left = 0
    while left < scene.cols and dead[:, left].all():
        new_mask[:, left] = True
        left += 1
    right = scene.cols - 1
    while right >= left and dead[:, right].all():
        new_mask[:, right] = True
        right -= 1
    n_new = int((new_mask & ~scene.nodata_mask).sum())
    if n_new:
        issues.append(
            ("WARN", f"masked {n_new} all-zero edge pixel(s)")
        )
        scene.nodata_mask |= new_mask

    ok = not any(sev == "ERROR" for sev, _ in issues)
    return ValidationReport(ok=ok, issues=issues)


def pixel_spectrum(scene: Scene, row: int, col: int) -> np.ndarray:
    """Band-ordered radiance vector at one valid pixel."""
    if not (0 <= row < scene.rows and 0 <= col < scene.cols):
        raise PixelLookupError(f"pixel ({row}, {col}) out of bounds")
    if scene.nodata_mask[row, col]:
        raise PixelLookupError(f"pixel ({row}, {col}) is nodata")
    return scene.radiance[:, row, col].astype(np.float64)


def solar_zenith_cosine(metadata: SceneMetadata) -> float:
    """cos(solar zenith) from the sun elevation angle."""
    if not (0.0 < metadata.sun_elevation_deg <= 90.0):
        raise MetadataError(
            f"sun_elevation_deg {metadata.sun_elevation_deg} outside (0, 90]"
        )
    return math.cos(math.radians(90.0 - metadata.sun_elevation_deg))
