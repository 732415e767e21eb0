"""scanwheel: single-pass scanning analytics over multi-band raster scenes.

A batch of scene bundles flows once under a registry of pluggable analytics
(anomaly detectors and a land-cover classifier); results persist as JSON
documents in an embedded store, from which per-scene and overview reports
are generated off the wheel.
"""

from .engine import (
    AnalyticContext,
    AnalyticDescriptor,
    AnalyticRegistry,
    Consumes,
    RunSummary,
    WheelConfig,
    register_analytic,
    run_wheel,
)
from .radiometry import (
    FeatureBasis,
    FeatureCube,
    PreparedScene,
    ReflectanceCube,
    bin_to_ali,
    log_color_projection,
    rgb_composite,
    to_reflectance,
)
from .scene import (
    GeoBounds,
    Instrument,
    Scene,
    SceneMetadata,
    ValidationReport,
    geo_transform,
    load_scene,
    pixel_spectrum,
    validate_scene,
    write_scene,
)
from .store import AnalyticDocument, DocumentStore

__version__ = "0.1.0"

__all__ = [
    "AnalyticContext",
    "AnalyticDescriptor",
    "AnalyticDocument",
    "AnalyticRegistry",
    "Consumes",
    "DocumentStore",
    "FeatureBasis",
    "FeatureCube",
    "GeoBounds",
    "Instrument",
    "PreparedScene",
    "ReflectanceCube",
    "RunSummary",
    "Scene",
    "SceneMetadata",
    "ValidationReport",
    "WheelConfig",
    "bin_to_ali",
    "geo_transform",
    "load_scene",
    "log_color_projection",
    "pixel_spectrum",
    "register_analytic",
    "rgb_composite",
    "run_wheel",
    "to_reflectance",
    "validate_scene",
    "write_scene",
    "__version__",
]
