"""Built-in analytics and their default wheel registration."""

from __future__ import annotations

from ..engine import AnalyticDescriptor, AnalyticRegistry, Consumes, register_analytic
from . import blobs, classifier, contours, gmm_knn, rpf

BUILTIN_ANALYTICS = {
    "contours": (10, contours.analytic),
    "rpf": (20, rpf.analytic),
    "gmm_knn": (30, gmm_knn.analytic),
    "blobs": (40, blobs.analytic),
    "classifier": (50, classifier.analytic),
}


def default_registry(
    analytic_configs: dict[str, dict] | None = None,
    enabled: list[str] | None = None,
) -> AnalyticRegistry:
    """Registry of the built-in analytics.

    ``analytic_configs`` maps analytic id to its config block (an
    ``enabled: false`` key switches one off, a ``priority`` key reorders
    it); ``enabled`` restricts registration to the listed ids.
    """
    analytic_configs = analytic_configs or {}
    registry = AnalyticRegistry()
    for analytic_id, (priority, impl) in BUILTIN_ANALYTICS.items():
        config = dict(analytic_configs.get(analytic_id, {}))
        if enabled is not None and analytic_id not in enabled:
            continue
        if not config.pop("enabled", True):
            continue
        priority = config.pop("priority", priority)
        register_analytic(
            registry,
            AnalyticDescriptor(
                analytic_id=analytic_id,
                priority=priority,
                consumes=Consumes.PREPARED_SCENE,
                config=config,
            ),
            impl,
        )
    return registry


__all__ = [
    "BUILTIN_ANALYTICS",
    "default_registry",
    "blobs",
    "classifier",
    "contours",
    "gmm_knn",
    "rpf",
]
