"""Exception types shared across the package."""


class ScanWheelError(Exception):
    """Base class for all package-specific errors."""


class SceneLoadError(ScanWheelError):
    """A scene bundle file is missing or unreadable."""


class SceneFormatError(ScanWheelError):
    """A scene bundle file exists but violates the bundle format."""


class MetadataError(ScanWheelError):
    """Scene metadata is unusable for the requested computation."""


class ConfigError(ScanWheelError):
    """A configuration value is missing, malformed, or inconsistent."""


class PixelLookupError(ScanWheelError, LookupError):
    """A pixel access was out of bounds or hit a nodata pixel."""


class RegistrationError(ScanWheelError):
    """An analytic could not be added to a registry."""


class DuplicateKeyError(ScanWheelError):
    """A document with the same (scene_id, analytic_id, run_id) already exists."""


class NotFoundError(ScanWheelError, LookupError):
    """A requested document, scene, or report source does not exist."""
