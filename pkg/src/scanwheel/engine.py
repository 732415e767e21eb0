"""The wheel itself: batch discovery, shared pre-processing, and execution.

Scenes flow under a fixed set of registered analytics.  Each marked scene is
loaded from disk exactly once and prepared exactly once, no matter how many
analytics are registered; an instrumented band-read counter makes that
single-pass property auditable.  One analytic failing on one scene records
an ERROR document and the wheel keeps turning.
"""

from __future__ import annotations

import base64
import datetime
import hashlib
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import RegistrationError
from .radiometry import PreparedScene, load_ali_intervals
from .scene import load_scene, validate_scene
from .store import AnalyticDocument, DocumentStore

logger = logging.getLogger(__name__)

COMPLETE_MARKER = "COMPLETE"


class Consumes(str, Enum):
    PREPARED_SCENE = "PREPARED_SCENE"
    STORED_RESULTS = "STORED_RESULTS"


@dataclass(frozen=True)
class AnalyticDescriptor:
    """Registration record for one analytic.

    Lower priority runs earlier; ties break on analytic_id.  ``consumes``
    selects whether the implementation sees the prepared scene or only the
    already-stored documents of the current run.
    """

    analytic_id: str
    priority: int = 100
    consumes: Consumes = Consumes.PREPARED_SCENE
    config: dict = field(default_factory=dict)


@dataclass
class AnalyticContext:
    """Everything an analytic implementation gets to see for one scene."""

    scene_id: str
    run_id: str
    seed: int
    config: dict
    prepared: PreparedScene | None
    store: DocumentStore


class AnalyticRegistry:
    """Ordered, unique-id collection of analytics."""

    def __init__(self):
        self._entries: dict[str, tuple[AnalyticDescriptor, object]] = {}

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self) -> list[str]:
        return sorted(self._entries)

    def ordered(self, consumes: Consumes | None = None) -> list[tuple[AnalyticDescriptor, object]]:
        entries = [
            e for e in self._entries.values()
            if consumes is None or e[0].consumes is consumes
        ]
        entries.sort(key=lambda e: (e[0].priority, e[0].analytic_id))
        return entries


def register_analytic(
    registry: AnalyticRegistry,
    descriptor: AnalyticDescriptor,
    implementation,
) -> AnalyticRegistry:
    """Add an analytic; duplicate ids are rejected."""
    if descriptor.analytic_id in registry._entries:
        raise RegistrationError(f"analytic {descriptor.analytic_id!r} already registered")
    registry._entries[descriptor.analytic_id] = (descriptor, implementation)
    return registry


class BandReadCounter:
    """Thread-safe per-scene count of band file reads."""

    def __init__(self):
        self._counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def record(self, scene_id: str) -> None:
        with self._lock:
            self._counts[scene_id] = self._counts.get(scene_id, 0) + 1

    def counts(self) -> dict[str, int]:
        with self._lock:
            return dict(self._counts)


@dataclass
class WheelConfig:
    """Run-level knobs; per-analytic config lives on the descriptors."""

    store_root: str | Path
    seed: int = 0
    run_id: str | None = None
    workers: int = 1
    deadline_seconds: float | None = None
    ali_intervals_path: str | Path | None = None


@dataclass
class RunSummary:
    run_id: str
    scenes_processed: int
    scenes_deferred: int
    scenes_failed: int
    documents_written: int
    band_reads: dict[str, int]
    analytic_seconds: dict[str, float]
    deadline_exceeded: bool
    elapsed_seconds: float

    def as_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "scenes_processed": self.scenes_processed,
            "scenes_deferred": self.scenes_deferred,
            "scenes_failed": self.scenes_failed,
            "documents_written": self.documents_written,
            "band_reads": dict(sorted(self.band_reads.items())),
            "analytic_seconds": {
                k: round(v, 6) for k, v in sorted(self.analytic_seconds.items())
            },
            "deadline_exceeded": self.deadline_exceeded,
            "elapsed_seconds": round(self.elapsed_seconds, 6),
        }


def derive_seed(base_seed: int, *parts: str) -> int:
    """Stable per-(scene, analytic) seed derivation."""
    h = hashlib.sha256(("|".join([str(base_seed), *parts])).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "big")


def derive_run_id(seed: int, scene_ids: list[str]) -> str:
    h = hashlib.sha256(",".join(sorted(scene_ids)).encode("utf-8")).hexdigest()[:10]
    return f"r{seed}-{h}"


def discover_scenes(batch_dir: str | Path) -> list[tuple[str, Path]]:
    """Bundle directories carrying a COMPLETE marker, as (dir name, path)."""
    batch_dir = Path(batch_dir)
    found = []
    if not batch_dir.is_dir():
        return found
    for entry in sorted(batch_dir.iterdir()):
        if entry.is_dir() and (entry / COMPLETE_MARKER).is_file():
            found.append((entry.name, entry))
    return found


def _error_body(analytic_id: str, scene_id: str, message: str, stage: str) -> dict:
    return {
        "analytic_id": analytic_id,
        "scene_id": scene_id,
        "message": message,
        "stage": stage,
    }


class _RunState:
    """Mutable cross-thread state for one run_wheel invocation."""

    def __init__(self):
        self.lock = threading.Lock()
        self.documents_written = 0
        self.analytic_seconds: dict[str, float] = {}
        self.index_scenes: dict[str, dict] = {}
        self.processed = 0
        self.deferred = 0
        self.failed = 0
        self.deadline_hit = False

    def add_time(self, analytic_id: str, dt: float) -> None:
        with self.lock:
            self.analytic_seconds[analytic_id] = (
                self.analytic_seconds.get(analytic_id, 0.0) + dt
            )


def run_wheel(
    batch_dir: str | Path,
    registry: AnalyticRegistry,
    config: WheelConfig,
) -> RunSummary:
    """Process every new, marked scene in the batch through all analytics.

    Scenes already in the processed ledger are skipped.  If the deadline is
    exceeded, remaining scenes are deferred whole to the next run; a scene is
    never left half-processed.
    """
    t0 = time.monotonic()
    store = DocumentStore(config.store_root)
    counter = BandReadCounter()
    state = _RunState()
    ali_intervals = load_ali_intervals(config.ali_intervals_path)

    discovered = discover_scenes(batch_dir)
    processed_ledger = store.processed_scenes()
    pending = [(name, path) for name, path in discovered if name not in processed_ledger]
    run_id = config.run_id or derive_run_id(config.seed, [n for n, _ in pending])

    def persist(scene_id: str, analytic_id: str, body) -> None:
        store.put(
            AnalyticDocument(
                scene_id=scene_id, analytic_id=analytic_id, run_id=run_id, body=body
            )
        )
        with state.lock:
            state.documents_written += 1
            entry = state.index_scenes.setdefault(scene_id, {"documents": []})
            entry["documents"].append(analytic_id)

    def process(bundle_name: str, path: Path) -> None:
        if config.deadline_seconds is not None:
            if time.monotonic() - t0 >= config.deadline_seconds:
                with state.lock:
                    state.deadline_hit = True
                    state.deferred += 1
                return
        scene_id = bundle_name
        try:
            scene = load_scene(path, read_counter=counter)
            scene_id = scene.scene_id
            report = validate_scene(scene)
            if not report.ok:
                raise ValueError(
                    "scene failed validation: "
                    + "; ".join(m for s, m in report.issues if s == "ERROR")
                )
            prepared = PreparedScene(scene, ali_intervals=ali_intervals)
        except Exception as exc:  # noqa: BLE001 - the wheel keeps turning
            logger.warning("scene %s unusable: %s", bundle_name, exc)
            persist(scene_id, "wheel", _error_body("wheel", scene_id, str(exc), "load"))
            store.mark_processed(scene_id, run_id)
            with state.lock:
                state.failed += 1
            return

        for phase in (Consumes.PREPARED_SCENE, Consumes.STORED_RESULTS):
            for descriptor, impl in registry.ordered(phase):
                ctx = AnalyticContext(
                    scene_id=scene_id,
                    run_id=run_id,
                    seed=derive_seed(config.seed, scene_id, descriptor.analytic_id),
                    config=descriptor.config,
                    prepared=prepared if phase is Consumes.PREPARED_SCENE else None,
                    store=store,
                )
                t_start = time.monotonic()
                try:
                    body = impl(ctx)
                    persist(scene_id, descriptor.analytic_id, body)
                except Exception as exc:  # noqa: BLE001
                    logger.warning(
                        "analytic %s failed on scene %s: %s",
                        descriptor.analytic_id, scene_id, exc,
                    )
                    persist(
                        scene_id,
                        descriptor.analytic_id,
                        _error_body(descriptor.analytic_id, scene_id, str(exc), "analytic"),
                    )
                finally:
                    state.add_time(descriptor.analytic_id, time.monotonic() - t_start)

        meta = scene.metadata
        summary = {
            "rows": scene.rows,
            "cols": scene.cols,
            "band_count": scene.band_count,
            "acquisition_date": meta.acquisition_date.isoformat(),
            "instrument": meta.instrument.value,
            "sun_elevation_deg": meta.sun_elevation_deg,
            "sun_azimuth_deg": meta.sun_azimuth_deg,
            "geo_bounds": meta.geo_bounds.as_dict(),
            "rgb_png_base64": base64.b64encode(_encode_png(prepared.rgb)).decode("ascii"),
        }
        with state.lock:
            entry = state.index_scenes.setdefault(scene_id, {"documents": []})
            entry.update(summary)
            state.processed += 1
        store.mark_processed(scene_id, run_id)

    if config.workers <= 1 or len(pending) <= 1:
        for name, path in pending:
            process(name, path)
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            list(pool.map(lambda item: process(*item), pending))

    elapsed = time.monotonic() - t0
    summary = RunSummary(
        run_id=run_id,
        scenes_processed=state.processed,
        scenes_deferred=state.deferred,
        scenes_failed=state.failed,
        documents_written=state.documents_written,
        band_reads=counter.counts(),
        analytic_seconds=state.analytic_seconds,
        deadline_exceeded=state.deadline_hit,
        elapsed_seconds=elapsed,
    )
    index = {
        "run_id": run_id,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "scenes": {
            sid: {k: v for k, v in entry.items()}
            for sid, entry in state.index_scenes.items()
        },
        "band_reads": counter.counts(),
        "deadline_exceeded": state.deadline_hit,
    }
    store.write_run_index(run_id, index)
    return summary


def _encode_png(rgb: "object") -> bytes:
    from io import BytesIO

    from PIL import Image

    buf = BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()
