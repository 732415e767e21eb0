"""Rare pixel finder: small clusters of spectrally extreme, mutually similar,
geographically proximate pixels.

The pipeline narrows the pixel population in four stages: a Mahalanobis
extremeness cut (S1), a pairwise spectral-similarity cut (S2), proximity
clustering on the pixel grid (S3/S4), and finally per-cluster acceptance
criteria that gate what is reported as an object.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..radiometry import PreparedScene, top_variance_bands
from ..stats import mahalanobis_distances, rank_scores


@dataclass
class RpfParams:
    band_subset: list[int] | None = None   # None = AUTO top-variance bands
    auto_band_count: int = 20
    transform: str = "radiance"            # radiance | reflectance | log
    k1_sigma: float = 6.0
    s1_fraction_bounds: tuple[float, float] = (0.001, 0.005)
    k2: float = 0.999
    k3: int = 3
    k4: int = 5
    p1: float = 0.0
    p2: float = 0.0
    p3: int = 5
    p4: int = 20
    p5: int = 2

    def __post_init__(self):
        if self.p3 > self.p4:
            raise ValueError("p3 must be <= p4")
        if not (0.0 < self.k2 <= 1.0):
            raise ValueError("k2 must be in (0, 1]")
        if self.k3 < 1 or self.k4 < 1:
            raise ValueError("k3 and k4 must be >= 1")
        lo, hi = self.s1_fraction_bounds
        if not (0.0 < lo <= hi < 1.0):
            raise ValueError("bad s1_fraction_bounds")

    @classmethod
    def from_config(cls, config: dict) -> "RpfParams":
        kwargs = {k: v for k, v in config.items() if k in cls.__dataclass_fields__}
        if "s1_fraction_bounds" in kwargs:
            kwargs["s1_fraction_bounds"] = tuple(kwargs["s1_fraction_bounds"])
        return cls(**kwargs)


@dataclass
class RareObject:
    cluster_id: int
    pixels: np.ndarray              # (m, 2) row/col
    mean_mahalanobis: float
    snr: float                      # mean/stddev of member distances; inf if stddev 0
    bbox_rows: int
    bbox_cols: int
    passed_filters: dict = field(default_factory=dict)
    reported: bool = False
    score: int = 0


def select_bands(values: np.ndarray, valid: np.ndarray,
                 centers: list[float], params: RpfParams) -> list[int]:
    if params.band_subset is not None:
        return sorted(params.band_subset)
    return top_variance_bands(values, valid, params.auto_band_count, centers)


def transformed_cube(prepared: PreparedScene, params: RpfParams) -> tuple[np.ndarray, np.ndarray]:
    """(values, valid) for the configured spectral transform.

    ``log`` masks pixels with any non-positive radiance in addition to the
    scene's own nodata mask.
    """
    scene = prepared.scene
    valid = scene.valid_mask.copy()
    if params.transform == "radiance":
        values = scene.radiance.astype(np.float64)
    elif params.transform == "reflectance":
        values = prepared.reflectance.values
    elif params.transform == "log":
        radiance = scene.radiance.astype(np.float64)
        nonpositive = (radiance <= 0.0).any(axis=0)
        valid &= ~nonpositive
        values = np.log(np.where(radiance > 0.0, radiance, 1.0))
    else:
        raise ValueError(f"unknown transform {params.transform!r}")
    return values, valid


def mahalanobis_grid(values: np.ndarray, valid: np.ndarray,
                     band_subset: list[int]) -> np.ndarray:
    """Per-pixel Mahalanobis distance over the chosen band subset.

    Invalid pixels come out as NaN.
    """
    if valid.sum() <= len(band_subset):
        raise ValueError(
            f"{int(valid.sum())} unmasked pixels cannot support a "
            f"{len(band_subset)}-band covariance"
        )
    X = values[band_subset][:, valid].T
    grid = np.full(valid.shape, np.nan)
    grid[valid] = mahalanobis_distances(X)
    return grid


def select_s1(dist_grid: np.ndarray, valid: np.ndarray,
              params: RpfParams) -> tuple[np.ndarray, float, float]:
    """Pixels beyond the extremeness threshold k1.

    k1 comes from the upper ``k1_sigma`` tail of a log-normal fit to the
    distance sample.  If the selected fraction leaves the configured bounds,
    selection falls back to a rank cut at the nearest bound, so the S1
    fraction always lands inside the bounds.  Returns (mask, k1, fraction).
    """
    d = dist_grid[valid]
    n = d.shape[0]
    if n < 100:
        raise ValueError(f"only {n} unmasked pixels; need >= 100")
    lo, hi = params.s1_fraction_bounds

    positive = d[d > 0.0]
    if positive.size:
        logs = np.log(positive)
        k1 = float(np.exp(logs.mean() + params.k1_sigma * logs.std()))
    else:
        k1 = float("inf")
    sel = d > k1
    fraction = sel.sum() / n

    if not (lo <= fraction <= hi):
        target = lo if fraction < lo else hi
        count = max(1, math.ceil(n * target))
        rows, cols = np.nonzero(valid)
        order = np.lexsort((cols, rows, -d))
        chosen = order[:count]
        sel = np.zeros(n, dtype=bool)
        sel[chosen] = True
        k1 = float(d[chosen].min())
        fraction = count / n

    mask = np.zeros(valid.shape, dtype=bool)
    mask[valid] = sel
    return mask, k1, float(fraction)


def similarity_filter(s1_mask: np.ndarray, values: np.ndarray,
                      band_subset: list[int], params: RpfParams) -> np.ndarray:
    """Keep S1 pixels whose spectrum is nearly parallel to some other's.

    Similarity is the cosine of the spectral angle; pixel i survives when
    max_j cos(i, j) > k2 for some j != i.  Fewer than two S1 pixels means an
    empty S2.
    """
    coords = np.argwhere(s1_mask)
    out = np.zeros_like(s1_mask)
    if coords.shape[0] < 2:
        return out
    V = values[band_subset][:, coords[:, 0], coords[:, 1]].T
    norms = np.linalg.norm(V, axis=1)
    ok = norms > 0.0
    Vn = np.zeros_like(V)
    Vn[ok] = V[ok] / norms[ok, None]
    G = Vn @ Vn.T
    np.fill_diagonal(G, -np.inf)
    keep = ok & (G.max(axis=1) > params.k2)
    kept = coords[keep]
    out[kept[:, 0], kept[:, 1]] = True
    return out


def proximity_cluster(s2_mask: np.ndarray, params: RpfParams) -> list[np.ndarray]:
    """Grid-proximity components of S2 with at least k4 members.

    Two pixels are linked when their L1 grid distance is below k3 (k3 = 3
    links face- and diagonal-adjacent pixels, and straight two-step jumps).
    Components are discovered breadth-first in row-major order.
    """
    coords = [tuple(p) for p in np.argwhere(s2_mask)]
    coord_set = set(coords)
    offsets = [
        (dr, dc)
        for dr in range(-(params.k3 - 1), params.k3)
        for dc in range(-(params.k3 - 1), params.k3)
        if 0 < abs(dr) + abs(dc) < params.k3
    ]
    seen: set[tuple[int, int]] = set()
    clusters: list[np.ndarray] = []
    for start in coords:
        if start in seen:
            continue
        queue = [start]
        seen.add(start)
        members = []
        while queue:
            r, c = queue.pop(0)
            members.append((r, c))
            for dr, dc in offsets:
                nb = (r + dr, c + dc)
                if nb in coord_set and nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        if len(members) >= params.k4:
            clusters.append(np.array(sorted(members), dtype=np.int64))
    return clusters


def filter_objects(clusters: list[np.ndarray], dist_grid: np.ndarray,
                   params: RpfParams) -> list[RareObject]:
    """Apply the four acceptance criteria and score each candidate.

    SNR is mean/stddev of the member distances (population stddev); a zero
    stddev yields +inf and passes the closeness criterion.  The 0-1000 score
    is the rank percentile of mean distance among all candidates.
    """
    objects = []
    for cid, pixels in enumerate(clusters, start=1):
        d = dist_grid[pixels[:, 0], pixels[:, 1]]
        mean_d = float(d.mean())
        std_d = float(d.std())
        snr = float("inf") if std_d == 0.0 else mean_d / std_d
        bbox_rows = int(pixels[:, 0].max() - pixels[:, 0].min() + 1)
        bbox_cols = int(pixels[:, 1].max() - pixels[:, 1].min() + 1)
        size = pixels.shape[0]
        passed = {
            "spectral_extremeness": mean_d >= params.p1,
            "spectral_closeness": snr >= params.p2,
            "cluster_size": params.p3 <= size <= params.p4,
            "cluster_dimension": bbox_rows >= params.p5 and bbox_cols >= params.p5,
        }
        objects.append(
            RareObject(
                cluster_id=cid,
                pixels=pixels,
                mean_mahalanobis=mean_d,
                snr=snr,
                bbox_rows=bbox_rows,
                bbox_cols=bbox_cols,
                passed_filters=passed,
                reported=all(passed.values()),
            )
        )
    for obj, score in zip(objects, rank_scores([o.mean_mahalanobis for o in objects])):
        obj.score = score
    return objects


def run(prepared: PreparedScene, params: RpfParams | None = None) -> dict:
    """Full pipeline on one scene; returns the analytic document body."""
    params = params or RpfParams()
    values, valid = transformed_cube(prepared, params)
    bands = select_bands(values, valid, prepared.scene.metadata.band_centers_nm, params)
    dist_grid = mahalanobis_grid(values, valid, bands)
    s1, k1, fraction = select_s1(dist_grid, valid, params)
    s2 = similarity_filter(s1, values, bands, params)
    clusters = proximity_cluster(s2, params)
    objects = filter_objects(clusters, dist_grid, params)
    return {
        "params_used": {
            "band_subset": list(bands),
            "transform": params.transform,
            "k1": k1,
            "k1_sigma": params.k1_sigma,
            "k2": params.k2,
            "k3": params.k3,
            "k4": params.k4,
            "p1": params.p1,
            "p2": params.p2,
            "p3": params.p3,
            "p4": params.p4,
            "p5": params.p5,
        },
        "s1_size": int(s1.sum()),
        "s1_fraction": fraction,
        "s2_size": int(s2.sum()),
        "objects": [
            {
                "cluster_id": o.cluster_id,
                "pixel_set": o.pixels.tolist(),
                "mean_mahalanobis": o.mean_mahalanobis,
                # +inf is not representable in strict JSON; null means
                # "identical member distances".
                "snr": None if math.isinf(o.snr) else o.snr,
                "bbox": {"rows": o.bbox_rows, "cols": o.bbox_cols},
                "passed_filters": o.passed_filters,
                "reported": o.reported,
                "score": o.score,
            }
            for o in objects
        ],
    }


def analytic(ctx) -> dict:
    """Wheel entry point."""
    return run(ctx.prepared, RpfParams.from_config(ctx.config))
