"""Dense-grid spatial primitives shared by the detection analytics.

Pixel (r, c) covers the unit square [r, r+1) x [c, c+1); ring vertices
produced by :func:`boundary_rings` therefore sit on integer lattice points,
which keeps polygon/pixel round trips exact.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def label_regions(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected components of True pixels, labeled 1..n.

    Labels are assigned in row-major order of each component's first pixel,
    so the numbering is deterministic for a given mask.  Background is 0.
    """
    raw, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    if n == 0:
        return raw.astype(np.int32), 0
    flat = raw.ravel()
    labels, first_index = np.unique(flat, return_index=True)
    keep = labels != 0
    labels, first_index = labels[keep], first_index[keep]
    order = np.argsort(first_index, kind="stable")
    remap = np.zeros(int(labels.max()) + 1, dtype=np.int32)
    remap[labels[order]] = np.arange(1, n + 1, dtype=np.int32)
    return remap[raw], n


def component_pixels(labels: np.ndarray, n: int) -> list[np.ndarray]:
    """Per-label (k, 2) arrays of (row, col), ordered row-major within each."""
    out: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    rr, cc = np.nonzero(labels)
    ids = labels[rr, cc]
    order = np.lexsort((cc, rr))
    rr, cc, ids = rr[order], cc[order], ids[order]
    for lab in range(1, n + 1):
        sel = ids == lab
        out[lab - 1] = np.stack([rr[sel], cc[sel]], axis=1)
    return out


def flood_fill_from_seeds(eligible: np.ndarray, seeds: np.ndarray) -> tuple[np.ndarray, int]:
    """Label the 4-connected components of ``eligible`` that contain a seed.

    ``seeds`` is a boolean grid; seeds must themselves be eligible.  Returns
    a label grid (0 = not reached) with deterministic numbering and the
    number of filled components.
    """
    labels, n = label_regions(eligible)
    if n == 0:
        return labels, 0
    hit = np.unique(labels[seeds & (labels > 0)])
    keep = np.zeros(n + 1, dtype=bool)
    keep[hit] = True
    remap = np.zeros(n + 1, dtype=np.int32)
    remap[hit] = np.arange(1, len(hit) + 1, dtype=np.int32)
    return remap[labels], len(hit)


def pixel_bbox(pixels: np.ndarray) -> tuple[int, int, int, int]:
    """(row_min, col_min, row_max, col_max) of a (k, 2) pixel array."""
    return (
        int(pixels[:, 0].min()),
        int(pixels[:, 1].min()),
        int(pixels[:, 0].max()),
        int(pixels[:, 1].max()),
    )


_TURN_ORDER = {
    (0, 1): [(1, 0), (0, 1), (-1, 0)],    # moving +x: prefer +y (right), straight, -y
    (1, 0): [(0, -1), (1, 0), (0, 1)],    # moving +y: prefer -x, straight, +x
    (0, -1): [(-1, 0), (0, -1), (1, 0)],
    (-1, 0): [(0, 1), (-1, 0), (0, -1)],
}


def boundary_rings(pixels: np.ndarray, shape: tuple[int, int] | None = None) -> list[list[tuple[int, int]]]:
    """Closed boundary rings of a pixel set, as (row, col) lattice vertices.

    Each ring is a closed loop (first vertex repeated last).  The exterior
    and any hole boundaries are all returned; together they reproduce the
    pixel set exactly under :func:`rasterize_rings`.  Edges are oriented with
    the pixel set on the right-hand side of the walk, and at pinch vertices
    the sharpest right turn is taken, so output is deterministic.
    """
    pixset = {(int(r), int(c)) for r, c in pixels}
    # Directed unit edges in (x, y) = (col, row) coordinates.
    edges: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(a, b):
        edges.setdefault(a, []).append(b)

    for r, c in sorted(pixset):
        if (r - 1, c) not in pixset:
            add((c, r), (c + 1, r))
        if (r + 1, c) not in pixset:
            add((c + 1, r + 1), (c, r + 1))
        if (r, c - 1) not in pixset:
            add((c, r + 1), (c, r))
        if (r, c + 1) not in pixset:
            add((c + 1, r), (c + 1, r + 1))
    for v in edges:
        edges[v].sort()

    rings = []
    while edges:
        start = min(edges)
        ring_xy = [start]
        prev_dir = None
        v = start
        while True:
            outs = edges.get(v)
            if prev_dir is None or len(outs) == 1:
                nxt = outs[0]
            else:
                nxt = None
                for d in _TURN_ORDER[prev_dir]:
                    cand = (v[0] + d[0], v[1] + d[1])
                    if cand in outs:
                        nxt = cand
                        break
                if nxt is None:
                    nxt = outs[0]
            outs.remove(nxt)
            if not outs:
                del edges[v]
            prev_dir = (nxt[0] - v[0], nxt[1] - v[1])
            ring_xy.append(nxt)
            v = nxt
            if v == start and (v not in edges or not edges[v]):
                break
            if v == start:
                # Pinch at the start vertex: close here, remaining edges
                # start a separate ring.
                break
        rings.append(_simplify(ring_xy))
    # Convert to (row, col) vertex order.
    return [[(y, x) for x, y in ring] for ring in rings]


def _simplify(ring_xy: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Drop interior vertices of straight runs; keeps the loop closed."""
    if len(ring_xy) <= 2:
        return ring_xy
    pts = ring_xy[:-1]
    out = []
    n = len(pts)
    for i, p in enumerate(pts):
        a = pts[i - 1]
        b = pts[(i + 1) % n]
        if (p[0] - a[0], p[1] - a[1]) != (b[0] - p[0], b[1] - p[1]):
            out.append(p)
    out.append(out[0])
    return out


def rasterize_rings(rings: list[list[tuple[float, float]]], shape: tuple[int, int]) -> np.ndarray:
    """Even-odd fill of integer-lattice rings back onto a pixel grid.

    Inverse of :func:`boundary_rings`: vertices are snapped to the integer
    lattice and pixel centers (r+0.5, c+0.5) are tested against the vertical
    ring segments on each scanline.
    """
    filled = np.zeros(shape, dtype=bool)
    verticals: list[tuple[int, int, int]] = []  # (col, row_lo, row_hi)
    for ring in rings:
        snapped = [(int(round(r)), int(round(c))) for r, c in ring]
        for (r0, c0), (r1, c1) in zip(snapped, snapped[1:]):
            if c0 == c1 and r0 != r1:
                verticals.append((c0, min(r0, r1), max(r0, r1)))
    if not verticals:
        return filled
    for row in range(shape[0]):
        y = row + 0.5
        xs = sorted(c for c, lo, hi in verticals if lo < y < hi)
        for x0, x1 in zip(xs[0::2], xs[1::2]):
            filled[row, x0:x1] = True
    return filled


def ring_to_lonlat(ring: list[tuple[int, int]], transform) -> list[tuple[float, float]]:
    """Map (row, col) lattice vertices to (lon, lat) pairs."""
    return [transform.to_lonlat(r, c) for r, c in ring]


def ring_from_lonlat(ring: list[tuple[float, float]], transform) -> list[tuple[float, float]]:
    """Map (lon, lat) pairs back to continuous (row, col) vertices."""
    return [transform.to_rowcol(lon, lat) for lon, lat in ring]
