"""Embedded JSON document store: the run-result side of the engine.

Documents live as individual JSON files in a two-level directory keyed by
scene and analytic id, written atomically (temp file + rename) so concurrent
readers only ever see complete documents.  An index file per run carries
per-scene summary material (metadata digest, RGB composite) that reports
need but that is not an analytic result.
"""

from __future__ import annotations

import datetime
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError, DuplicateKeyError, NotFoundError

SCHEMA_VERSION = 1


def canonical_json_bytes(value) -> bytes:
    """Canonical JSON encoding used for document bodies and reports."""
    return json.dumps(value, sort_keys=True, separators=(",", ":")).encode("utf-8")


def utc_now_iso() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


@dataclass(frozen=True)
class AnalyticDocument:
    """One analytic result for one scene in one run."""

    scene_id: str
    analytic_id: str
    run_id: str
    body: object
    produced_at: str = field(default_factory=utc_now_iso)
    schema_version: int = SCHEMA_VERSION

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.scene_id, self.analytic_id, self.run_id)

    def body_bytes(self) -> bytes:
        return canonical_json_bytes(self.body)

    def as_dict(self) -> dict:
        return {
            "scene_id": self.scene_id,
            "analytic_id": self.analytic_id,
            "run_id": self.run_id,
            "produced_at": self.produced_at,
            "schema_version": self.schema_version,
            "body": self.body,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnalyticDocument":
        return cls(
            scene_id=d["scene_id"],
            analytic_id=d["analytic_id"],
            run_id=d["run_id"],
            body=d["body"],
            produced_at=d["produced_at"],
            schema_version=int(d.get("schema_version", SCHEMA_VERSION)),
        )


def is_error_document(doc: AnalyticDocument) -> bool:
    body = doc.body
    return isinstance(body, dict) and {"message", "stage"} <= set(body)


def _parse_time(value: str, name: str) -> datetime.datetime:
    try:
        return datetime.datetime.fromisoformat(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"malformed {name} timestamp {value!r}") from exc


class DocumentStore:
    """Append-only JSON document store rooted at a directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.documents_dir = self.root / "documents"
        self.runs_dir = self.root / "runs"
        self.documents_dir.mkdir(parents=True, exist_ok=True)
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    # -- documents ---------------------------------------------------------

    def _doc_path(self, scene_id: str, analytic_id: str, run_id: str) -> Path:
        return self.documents_dir / scene_id / analytic_id / f"{run_id}.json"

    def put(self, doc: AnalyticDocument) -> tuple[str, str, str]:
        """Persist a document atomically; duplicate keys are an error."""
        path = self._doc_path(*doc.key)
        payload = (
            json.dumps(doc.as_dict(), sort_keys=True, indent=2) + "\n"
        ).encode("utf-8")
        with self._lock:
            if path.exists():
                raise DuplicateKeyError(f"document {doc.key} already stored")
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".json.tmp")
            tmp.write_bytes(payload)
            os.replace(tmp, path)
        return doc.key

    def get(self, scene_id: str, analytic_id: str, run_id: str) -> AnalyticDocument:
        path = self._doc_path(scene_id, analytic_id, run_id)
        if not path.is_file():
            raise NotFoundError(f"no document for ({scene_id}, {analytic_id}, {run_id})")
        return AnalyticDocument.from_dict(json.loads(path.read_text("utf-8")))

    def query(
        self,
        scene_id: str | None = None,
        analytic_id: str | None = None,
        run_id: str | None = None,
        produced_from: str | None = None,
        produced_to: str | None = None,
    ) -> list[AnalyticDocument]:
        """All documents matching the filter, sorted by (scene, analytic, run).

        The time range is inclusive on both ends and applies to the
        ``produced_at`` envelope timestamp.
        """
        t_from = _parse_time(produced_from, "produced_from") if produced_from else None
        t_to = _parse_time(produced_to, "produced_to") if produced_to else None
        if t_from and t_to and t_from > t_to:
            raise ConfigError("produced_from is after produced_to")

        scene_dirs = (
            [self.documents_dir / scene_id]
            if scene_id
            else sorted(p for p in self.documents_dir.iterdir() if p.is_dir())
            if self.documents_dir.is_dir()
            else []
        )
        out = []
        for sdir in scene_dirs:
            if not sdir.is_dir():
                continue
            adirs = (
                [sdir / analytic_id]
                if analytic_id
                else sorted(p for p in sdir.iterdir() if p.is_dir())
            )
            for adir in adirs:
                if not adir.is_dir():
                    continue
                files = (
                    [adir / f"{run_id}.json"]
                    if run_id
                    else sorted(adir.glob("*.json"))
                )
                for f in files:
                    if not f.is_file() or f.suffix != ".json":
                        continue
                    doc = AnalyticDocument.from_dict(json.loads(f.read_text("utf-8")))
                    t = _parse_time(doc.produced_at, "produced_at")
                    if t_from and t < t_from:
                        continue
                    if t_to and t > t_to:
                        continue
                    out.append(doc)
        out.sort(key=lambda d: d.key)
        return out

    # -- run index ---------------------------------------------------------

    def write_run_index(self, run_id: str, index: dict) -> Path:
        path = self.runs_dir / f"{run_id}.json"
        tmp = path.with_suffix(".json.tmp")
        tmp.write_bytes(
            (json.dumps(index, sort_keys=True, indent=2) + "\n").encode("utf-8")
        )
        os.replace(tmp, path)
        return path

    def read_run_index(self, run_id: str) -> dict:
        path = self.runs_dir / f"{run_id}.json"
        if not path.is_file():
            raise NotFoundError(f"no run index for {run_id}")
        return json.loads(path.read_text("utf-8"))

    def run_ids(self) -> list[str]:
        return sorted(p.stem for p in self.runs_dir.glob("*.json"))

    # -- processed-scene ledger ---------------------------------------------

    @property
    def _ledger_path(self) -> Path:
        return self.root / "processed.json"

    def processed_scenes(self) -> dict:
        if not self._ledger_path.is_file():
            return {}
        return json.loads(self._ledger_path.read_text("utf-8"))

    def mark_processed(self, scene_id: str, run_id: str) -> None:
        with self._lock:
            ledger = self.processed_scenes()
            ledger[scene_id] = {"run_id": run_id, "completed_at": utc_now_iso()}
            tmp = self._ledger_path.with_suffix(".json.tmp")
            tmp.write_bytes(
                (json.dumps(ledger, sort_keys=True, indent=2) + "\n").encode("utf-8")
            )
            os.replace(tmp, self._ledger_path)
