"""Off-the-wheel report generation from stored documents.

Reports are pure functions of store state: the per-scene report renders every
analytic's stored document (or "not run"), and the overview pools all scored
anomalies in a timeframe onto the shared 0-1000 scale and keeps the top ten.
Output is a canonical ``report.json`` plus a self-contained ``report.html``
(embedded RGB, inline geometry, no network dependencies).
"""

from __future__ import annotations

import html as html_mod
import json
from pathlib import Path

import numpy as np

from . import gridops
from .errors import NotFoundError
from .scene import GeoBounds, GeoTransform
from .store import AnalyticDocument, DocumentStore, is_error_document

KNOWN_SECTIONS = ("contours", "rpf", "gmm_knn", "blobs", "classifier")
TOP_ANOMALY_LIMIT = 10


def png_bytes(rgb: np.ndarray) -> bytes:
    from io import BytesIO

    from PIL import Image

    buf = BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def _scene_transform(index_entry: dict) -> GeoTransform | None:
    if not index_entry or "geo_bounds" not in index_entry:
        return None
    return GeoTransform(
        GeoBounds(**index_entry["geo_bounds"]),
        int(index_entry["rows"]),
        int(index_entry["cols"]),
    )


def pixel_set_polygon(pixels: list[list[int]], transform: GeoTransform) -> dict:
    rings = gridops.boundary_rings(np.asarray(pixels, dtype=np.int64))
    return {
        "type": "Polygon",
        "coordinates": [
            [list(transform.to_lonlat(r, c)) for r, c in ring] for ring in rings
        ],
    }


def _polygon_bounds(polygon: dict) -> dict:
    lons = [pt[0] for ring in polygon["coordinates"] for pt in ring]
    lats = [pt[1] for ring in polygon["coordinates"] for pt in ring]
    return {
        "lat_min": min(lats), "lat_max": max(lats),
        "lon_min": min(lons), "lon_max": max(lons),
    }


def document_anomalies(doc: AnalyticDocument, transform: GeoTransform | None) -> list[dict]:
    """Scored anomaly entries of one analytic document, on the common scale."""
    if is_error_document(doc):
        return []
    body = doc.body
    out = []

    def entry(score: int, polygon: dict | None, ref: str) -> dict:
        return {
            "scene_id": doc.scene_id,
            "analytic_id": doc.analytic_id,
            "run_id": doc.run_id,
            "score": int(score),
            "geo_bounds": _polygon_bounds(polygon) if polygon else None,
            "geometry": polygon,
            "ref": ref,
        }

    if doc.analytic_id == "contours":
        for c in body.get("clusters", []):
            out.append(entry(c["score"], c.get("contour"), f"cluster:{c['cluster_id']}"))
    elif doc.analytic_id == "rpf":
        for o in body.get("objects", []):
            if not o.get("reported"):
                continue
            poly = (
                pixel_set_polygon(o["pixel_set"], transform) if transform else None
            )
            out.append(entry(o["score"], poly, f"object:{o['cluster_id']}"))
    elif doc.analytic_id == "gmm_knn":
        for c in body.get("clumps", []):
            if not c.get("selected"):
                continue
            poly = (
                pixel_set_polygon(c["pixel_set"], transform) if transform else None
            )
            out.append(entry(c["score"], poly, f"clump:{c['clump_id']}"))
    elif doc.analytic_id == "blobs":
        for a in body.get("anomalies", []):
            poly = (
                pixel_set_polygon(a["pixel_set"], transform) if transform else None
            )
            out.append(entry(a["score"], poly, f"blob:{a['blob_id']}"))
    return out


def _section_digest(doc: AnalyticDocument) -> dict:
    body = doc.body
    if is_error_document(doc):
        return {"message": body["message"], "stage": body["stage"]}
    if doc.analytic_id == "contours":
        clusters = body.get("clusters", [])
        return {
            "cluster_count": len(clusters),
            "top_score": max((c["score"] for c in clusters), default=None),
        }
    if doc.analytic_id == "rpf":
        objs = body.get("objects", [])
        return {
            "s1_size": body.get("s1_size"),
            "s2_size": body.get("s2_size"),
            "reported_objects": sum(1 for o in objs if o.get("reported")),
        }
    if doc.analytic_id == "gmm_knn":
        clumps = body.get("clumps", [])
        return {
            "clump_count": len(clumps),
            "selected": sum(1 for c in clumps if c.get("selected")),
        }
    if doc.analytic_id == "blobs":
        return {
            "blob_count": body.get("blob_count"),
            "anomaly_count": len(body.get("anomalies", [])),
        }
    if doc.analytic_id == "classifier":
        return {"coverage": body.get("coverage")}
    return {}


def scene_report(
    store: DocumentStore,
    scene_id: str,
    run_id: str,
    out_root: str | Path | None = None,
) -> dict:
    """Build and write the per-scene report; returns the report dict.

    Writes ``reports/<run_id>/<scene_id>/report.{json,html}`` (plus the RGB
    PNG referenced by the JSON) and the scene overlay feature collection
    under ``overlays/``.  Raises NotFoundError when the store holds no
    documents for the scene.
    """
    docs = store.query(scene_id=scene_id, run_id=run_id)
    if not docs:
        raise NotFoundError(f"no documents for scene {scene_id} in run {run_id}")
    try:
        index_entry = store.read_run_index(run_id).get("scenes", {}).get(scene_id, {})
    except NotFoundError:
        index_entry = {}
    transform = _scene_transform(index_entry)

    by_id = {d.analytic_id: d for d in docs}
    sections = {}
    for analytic_id in sorted(set(KNOWN_SECTIONS) | set(by_id)):
        doc = by_id.get(analytic_id)
        if doc is None:
            sections[analytic_id] = {"status": "not run"}
            continue
        sections[analytic_id] = {
            "status": "error" if is_error_document(doc) else "ok",
            "document": {
                "scene_id": doc.scene_id,
                "analytic_id": doc.analytic_id,
                "run_id": doc.run_id,
            },
            "digest": _section_digest(doc),
            "body": doc.body,
        }

    anomalies = []
    for doc in docs:
        anomalies.extend(document_anomalies(doc, transform))
    anomalies.sort(key=lambda a: (-a["score"], a["analytic_id"], a["ref"]))

    metadata = {
        k: index_entry.get(k)
        for k in ("rows", "cols", "band_count", "acquisition_date", "instrument",
                  "sun_elevation_deg", "sun_azimuth_deg", "geo_bounds")
    }
    report = {
        "scene_id": scene_id,
        "run_id": run_id,
        "metadata": metadata,
        "rgb_image": "rgb.png" if index_entry.get("rgb_png_base64") else None,
        "sections": sections,
        "anomalies": [
            {k: v for k, v in a.items() if k != "geometry"} for a in anomalies
        ],
    }

    out_root = Path(out_root) if out_root else store.root
    report_dir = out_root / "reports" / run_id / scene_id
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "report.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", "utf-8"
    )
    rgb64 = index_entry.get("rgb_png_base64")
    if rgb64:
        import base64

        (report_dir / "rgb.png").write_bytes(base64.b64decode(rgb64))
    (report_dir / "report.html").write_text(
        _scene_report_html(report, rgb64), "utf-8"
    )

    overlay_dir = out_root / "overlays"
    overlay_dir.mkdir(parents=True, exist_ok=True)
    features = [
        {
            "type": "Feature",
            "geometry": a["geometry"],
            "properties": {
                "scene_id": a["scene_id"],
                "analytic_id": a["analytic_id"],
                "score": a["score"],
                "ref": a["ref"],
            },
        }
        for a in anomalies
        if a["geometry"] is not None
    ]
    (overlay_dir / f"{scene_id}.geojson").write_text(
        json.dumps({"type": "FeatureCollection", "features": features},
                   sort_keys=True, indent=2) + "\n",
        "utf-8",
    )
    return report


def overview_report(
    store: DocumentStore,
    timeframe: tuple[str | None, str | None] | None = None,
    run_id: str | None = None,
    out_root: str | Path | None = None,
) -> dict:
    """Pool scored anomalies across scenes and keep the top ten.

    ``timeframe`` bounds scene acquisition dates (inclusive, either side
    open when None).  When ``run_id`` is None all runs in the store are
    pooled.  Writes ``reports/<run_id or 'overview'>/overview.{json,html}``.
    """
    start, end = timeframe or (None, None)
    run_ids = [run_id] if run_id else store.run_ids()
    entries = []
    scene_count = 0
    analytic_scenes: dict[str, set] = {}
    for rid in run_ids:
        try:
            index = store.read_run_index(rid)
        except NotFoundError:
            continue
        for scene_id, scene_entry in sorted(index.get("scenes", {}).items()):
            date = scene_entry.get("acquisition_date")
            if start and (date is None or date < start):
                continue
            if end and (date is None or date > end):
                continue
            scene_count += 1
            transform = _scene_transform(scene_entry)
            for doc in store.query(scene_id=scene_id, run_id=rid):
                if not is_error_document(doc):
                    analytic_scenes.setdefault(doc.analytic_id, set()).add(scene_id)
                entries.extend(document_anomalies(doc, transform))

    entries.sort(key=lambda a: (-a["score"], a["scene_id"], a["analytic_id"], a["ref"]))
    top = entries[:TOP_ANOMALY_LIMIT]
    report = {
        "timeframe": [start, end],
        "runs": run_ids,
        "scenes_covered": scene_count,
        "anomaly_count": len(entries),
        "per_analytic_scene_counts": {
            k: len(v) for k, v in sorted(analytic_scenes.items())
        },
        "top_anomalies": [
            {k: v for k, v in a.items() if k != "geometry"} for a in top
        ],
    }
    out_root = Path(out_root) if out_root else store.root
    report_dir = out_root / "reports" / (run_id or "overview")
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "overview.json").write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", "utf-8"
    )
    (report_dir / "overview.html").write_text(_overview_html(report), "utf-8")
    return report


_PAGE_STYLE = (
    "body{font-family:sans-serif;margin:2em;max-width:70em}"
    "table{border-collapse:collapse}td,th{border:1px solid #999;"
    "padding:0.2em 0.6em;text-align:left}h2{margin-top:1.2em}"
    "pre{background:#f6f6f6;padding:0.6em;overflow-x:auto}"
)


def _scene_report_html(report: dict, rgb64: str | None) -> str:
    esc = html_mod.escape
    parts = [
        "<!doctype html><html><head><meta charset='utf-8'>",
        f"<title>Scene {esc(report['scene_id'])}</title>",
        f"<style>{_PAGE_STYLE}</style></head><body>",
        f"<h1>Scene report: {esc(report['scene_id'])}</h1>",
        f"<p>run <code>{esc(report['run_id'])}</code></p>",
        "<h2>Scene</h2><table>",
    ]
    for key, value in sorted(report["metadata"].items()):
        parts.append(f"<tr><th>{esc(key)}</th><td>{esc(json.dumps(value))}</td></tr>")
    parts.append("</table>")
    if rgb64:
        parts.append(
            f"<h2>RGB composite</h2><img alt='rgb composite' "
            f"src='data:image/png;base64,{rgb64}'>"
        )
    parts.append("<h2>Top anomalies</h2>")
    if report["anomalies"]:
        parts.append("<table><tr><th>score</th><th>analytic</th><th>ref</th></tr>")
        for a in report["anomalies"][:TOP_ANOMALY_LIMIT]:
            parts.append(
                f"<tr><td>{a['score']}</td><td>{esc(a['analytic_id'])}</td>"
                f"<td>{esc(a['ref'])}</td></tr>"
            )
        parts.append("</table>")
    else:
        parts.append("<p>none</p>")
    for analytic_id, section in sorted(report["sections"].items()):
        parts.append(f"<h2>{esc(analytic_id)}</h2>")
        if section["status"] == "not run":
            parts.append("<p><em>not run</em></p>")
            continue
        parts.append(f"<p>status: {esc(section['status'])}</p>")
        parts.append(
            "<pre>" + esc(json.dumps(section["digest"], sort_keys=True, indent=2))
            + "</pre>"
        )
    parts.append("</body></html>")
    return "".join(parts) + "\n"


def _overview_html(report: dict) -> str:
    esc = html_mod.escape
    parts = [
        "<!doctype html><html><head><meta charset='utf-8'>",
        "<title>Overview</title>",
        f"<style>{_PAGE_STYLE}</style></head><body>",
        "<h1>Daily overview</h1>",
        f"<p>timeframe: {esc(json.dumps(report['timeframe']))}; "
        f"scenes covered: {report['scenes_covered']}</p>",
        "<h2>Top anomalies</h2>",
    ]
    if report["top_anomalies"]:
        parts.append(
            "<table><tr><th>#</th><th>score</th><th>scene</th>"
            "<th>analytic</th><th>ref</th></tr>"
        )
        for i, a in enumerate(report["top_anomalies"], start=1):
            parts.append(
                f"<tr><td>{i}</td><td>{a['score']}</td><td>{esc(a['scene_id'])}</td>"
                f"<td>{esc(a['analytic_id'])}</td><td>{esc(a['ref'])}</td></tr>"
            )
        parts.append("</table>")
    else:
        parts.append("<p>none</p>")
    parts.append("<h2>Scenes per analytic</h2><table>")
    for analytic_id, count in sorted(report["per_analytic_scene_counts"].items()):
        parts.append(f"<tr><th>{esc(analytic_id)}</th><td>{count}</td></tr>")
    parts.append("</table></body></html>")
    return "".join(parts) + "\n"
