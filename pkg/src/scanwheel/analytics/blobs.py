"""Spectral blobs: segmentation by local heterogeneity plus significance merging.

A window-stddev boundary mask carves the scene into connected "blobs" of
spectrally quiet pixels.  Blobs are pairwise compared band-by-band with
Welch's t-test and spectrally similar ones merge into groups; small blobs
whose group contains nothing large are the anomalies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse, stats

from .. import gridops
from ..radiometry import PreparedScene
from ..stats import rank_scores


@dataclass
class BlobsParams:
    window: int = 3
    threshold_quantile: float = 0.2    # top fraction marked boundary
    alpha: float = 0.01                # per-band significance level
    similar_fraction: float = 0.05     # pair similar if significant-band fraction below
    max_anomaly_size: int = 25
    min_test_size: int = 3             # smaller blobs are untestable, see merge_similar

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 1:
            raise ValueError("window must be odd and positive")

    @classmethod
    def from_config(cls, config: dict) -> "BlobsParams":
        return cls(**{k: v for k, v in config.items() if k in cls.__dataclass_fields__})


@dataclass
class Blob:
    blob_id: int
    pixels: np.ndarray
    mean_spectrum: np.ndarray
    spectrum_variance: np.ndarray   # per-band sample variance (ddof=1); NaN if size 1
    size: int


@dataclass
class BlobCatalog:
    label_grid: np.ndarray          # 0 = boundary or nodata, 1..n = blob ids
    blobs: list[Blob]
    boundary_mask: np.ndarray
    heterogeneity: np.ndarray
    merge_groups: list[list[int]] = field(default_factory=list)
    _dissimilarity: np.ndarray | None = field(default=None, repr=False)


def _window_sum(a: np.ndarray, window: int) -> np.ndarray:
    """Truncated sliding-window sums via a summed-area table."""
    rows, cols = a.shape
    half = window // 2
    table = np.zeros((rows + 1, cols + 1))
    table[1:, 1:] = a.cumsum(axis=0).cumsum(axis=1)
    r = np.arange(rows)
    c = np.arange(cols)
    r0 = np.maximum(r - half, 0)
    r1 = np.minimum(r + half + 1, rows)
    c0 = np.maximum(c - half, 0)
    c1 = np.minimum(c + half + 1, cols)
    return (
        table[np.ix_(r1, c1)]
        - table[np.ix_(r0, c1)]
        - table[np.ix_(r1, c0)]
        + table[np.ix_(r0, c0)]
    )


def heterogeneity_grid(values: np.ndarray, valid: np.ndarray, window: int) -> np.ndarray:
    """Mean over bands of the windowed stddev of each pixel's neighborhood.

    Windows truncate at image edges and skip masked pixels.  Masked pixels
    get NaN.
    """
    validf = valid.astype(np.float64)
    counts = _window_sum(validf, window)
    grid = np.zeros(valid.shape)
    safe = np.maximum(counts, 1.0)
    for band in values:
        # Center on the band mean first: the summed-area variance formula
        # E[x^2] - E[x]^2 cancels catastrophically for large offsets.
        offset = band[valid].mean() if valid.any() else 0.0
        data = np.where(valid, band - offset, 0.0)
        s1 = _window_sum(data, window)
        s2 = _window_sum(data * data, window)
        mean = s1 / safe
        var = np.maximum(s2 / safe - mean * mean, 0.0)
        grid += np.sqrt(var)
    grid /= values.shape[0]
    grid[~valid] = np.nan
    grid[counts == 0] = np.nan
    return grid


def boundary_mask(values: np.ndarray, valid: np.ndarray,
                  window: int = 3, threshold_quantile: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Pixels whose neighborhood heterogeneity is in the top quantile.

    The cut is strict, so a constant image (all heterogeneity equal) yields
    an empty mask.  Returns (mask, heterogeneity grid).
    """
    het = heterogeneity_grid(values, valid, window)
    sample = het[valid]
    mask = np.zeros_like(valid)
    if sample.size:
        threshold = np.quantile(sample, 1.0 - threshold_quantile)
        mask[valid] = het[valid] > threshold
    return mask, het


def label_components(mask: np.ndarray, valid: np.ndarray) -> tuple[np.ndarray, int]:
    """Label 4-connected components of non-boundary, unmasked pixels.

    Labels run 1..n in row-major discovery order; 0 marks boundary/nodata.
    """
    return gridops.label_regions(valid & ~mask)


def build_catalog(values: np.ndarray, valid: np.ndarray,
                  params: BlobsParams) -> BlobCatalog:
    mask, het = boundary_mask(values, valid, params.window, params.threshold_quantile)
    labels, n = label_components(mask, valid)
    nbands = values.shape[0]
    flat = labels.ravel()
    counts = np.bincount(flat, minlength=n + 1)[1:]
    means = np.empty((n, nbands))
    variances = np.empty((n, nbands))
    for b in range(nbands):
        band = values[b].ravel()
        s1 = np.bincount(flat, weights=band, minlength=n + 1)[1:]
        s2 = np.bincount(flat, weights=band * band, minlength=n + 1)[1:]
        means[:, b] = s1 / counts
        with np.errstate(invalid="ignore", divide="ignore"):
            variances[:, b] = np.where(
                counts > 1, (s2 - s1 * s1 / counts) / np.maximum(counts - 1, 1), np.nan
            )
    pixel_lists = gridops.component_pixels(labels, n)
    blobs = [
        Blob(
            blob_id=i + 1,
            pixels=pixel_lists[i],
            mean_spectrum=means[i],
            spectrum_variance=variances[i],
            size=int(counts[i]),
        )
        for i in range(n)
    ]
    return BlobCatalog(
        label_grid=labels, blobs=blobs, boundary_mask=mask, heterogeneity=het
    )


def pairwise_dissimilarity(catalog: BlobCatalog, params: BlobsParams) -> np.ndarray:
    """(n, n) fraction of bands on which each blob pair differs significantly.

    Welch's two-sample t-test runs per band on the member spectra.  Blobs
    below ``min_test_size`` cannot support the test (a single pixel has no
    variance at all); their pairs are marked fraction 1.0, i.e. dissimilar
    to everything.  The matrix is cached on the catalog.
    """
    if catalog._dissimilarity is not None:
        return catalog._dissimilarity
    n = len(catalog.blobs)
    frac = np.ones((n, n))
    np.fill_diagonal(frac, 0.0)
    testable = [i for i, b in enumerate(catalog.blobs) if b.size >= params.min_test_size]
    if len(testable) < 2:
        catalog._dissimilarity = frac
        return frac
    idx = np.array(testable)
    means = np.stack([catalog.blobs[i].mean_spectrum for i in idx])
    stds = np.sqrt(np.stack([catalog.blobs[i].spectrum_variance for i in idx]))
    ns = np.array([catalog.blobs[i].size for i in idx])

    iu, ju = np.triu_indices(len(idx), k=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        result = stats.ttest_ind_from_stats(
            means[iu], stds[iu], ns[iu, None],
            means[ju], stds[ju], ns[ju, None],
            equal_var=False,
        )
    p = np.nan_to_num(result.pvalue, nan=1.0)
    pair_frac = (p < params.alpha).mean(axis=1)
    frac[idx[iu], idx[ju]] = pair_frac
    frac[idx[ju], idx[iu]] = pair_frac
    catalog._dissimilarity = frac
    return frac


def merge_similar(catalog: BlobCatalog, params: BlobsParams) -> list[list[int]]:
    """Single-linkage groups of spectrally similar blobs.

    A pair is similar when fewer than ``similar_fraction`` of the bands
    reject equal means at level alpha.  Groups are the connected components
    of that similarity graph, each listed as sorted blob ids.
    """
    n = len(catalog.blobs)
    if n == 0:
        catalog.merge_groups = []
        return []
    frac = pairwise_dissimilarity(catalog, params)
    similar = frac < params.similar_fraction
    np.fill_diagonal(similar, True)
    n_groups, assignment = sparse.csgraph.connected_components(
        sparse.csr_matrix(similar), directed=False
    )
    groups: list[list[int]] = [[] for _ in range(n_groups)]
    for i, g in enumerate(assignment):
        groups[g].append(catalog.blobs[i].blob_id)
    groups = [sorted(g) for g in groups]
    groups.sort(key=lambda g: g[0])
    catalog.merge_groups = groups
    return groups


def anomalous_blobs(catalog: BlobCatalog, params: BlobsParams) -> list[dict]:
    """Small blobs whose merge group contains nothing larger than max size.

    Blobs below ``min_test_size`` never demonstrated dissimilarity, so they
    are not reportable.  Scores are the 0-1000 rank of each anomaly's mean
    dissimilarity against the other testable blobs.
    """
    if not catalog.merge_groups:
        merge_similar(catalog, params)
    by_id = {b.blob_id: b for b in catalog.blobs}
    frac = pairwise_dissimilarity(catalog, params)

    chosen = []
    for group in catalog.merge_groups:
        group_max = max(by_id[b].size for b in group)
        if group_max > params.max_anomaly_size:
            continue
        for blob_id in group:
            blob = by_id[blob_id]
            if params.min_test_size <= blob.size <= params.max_anomaly_size:
                chosen.append(blob)
    chosen.sort(key=lambda b: b.blob_id)

    testable = [i for i, b in enumerate(catalog.blobs) if b.size >= params.min_test_size]
    dissim = []
    for blob in chosen:
        i = blob.blob_id - 1
        others = [j for j in testable if j != i]
        dissim.append(float(np.mean(frac[i, others])) if others else 1.0)
    scores = rank_scores(dissim)
    return [
        {
            "blob_id": blob.blob_id,
            "pixel_set": blob.pixels.tolist(),
            "size": blob.size,
            "mean_dissimilarity": dissim[i],
            "score": scores[i],
        }
        for i, blob in enumerate(chosen)
    ]


def run(prepared: PreparedScene, params: BlobsParams | None = None) -> dict:
    """Full pipeline on one scene; returns the analytic document body."""
    params = params or BlobsParams()
    values = prepared.reflectance.values
    valid = ~prepared.reflectance.nodata_mask
    catalog = build_catalog(values, valid, params)
    groups = merge_similar(catalog, params)
    anomalies = anomalous_blobs(catalog, params)
    n_valid = int(valid.sum())
    return {
        "boundary_fraction": float(catalog.boundary_mask.sum()) / max(n_valid, 1),
        "blob_count": len(catalog.blobs),
        "anomalies": anomalies,
        "merge_groups": groups,
    }


def analytic(ctx) -> dict:
    """Wheel entry point."""
    return run(ctx.prepared, BlobsParams.from_config(ctx.config))
