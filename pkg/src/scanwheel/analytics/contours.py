"""Contours-and-clusters detector: spectral clustering with geographic contours.

Pixels are projected onto their top principal components, clustered with
k-means in that space, and the clusters are ranked by the Mahalanobis
distance of their centers from the spectral center of the image.  Contiguous
high-purity regions of each cluster become scored, contoured anomalies.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import gridops
from ..radiometry import FeatureBasis, FeatureCube, ReflectanceCube
from ..scene import GeoTransform
from ..stats import mahalanobis_distances, rank_scores, regularize_covariance, sample_covariance

logger = logging.getLogger(__name__)


@dataclass
class ContoursParams:
    n_components: int = 5
    k: int = 10
    min_purity: float = 0.8
    min_size: int = 9
    kmeans_tol: float = 1e-6
    kmeans_max_iter: int = 100

    @classmethod
    def from_config(cls, config: dict) -> "ContoursParams":
        return cls(**{k: v for k, v in config.items() if k in cls.__dataclass_fields__})


@dataclass
class ClusterModel:
    pca_basis: np.ndarray            # (n_components, bands), rows orthonormal
    explained_variance: list[float]  # ratio per kept component
    scores: FeatureCube              # PCA_SCORES cube
    cluster_centers: np.ndarray      # (k, n_components)
    assignment: np.ndarray           # (rows, cols); -1 where masked
    image_center: np.ndarray
    image_covariance: np.ndarray
    inertia: float
    initial_inertia: float


@dataclass
class AnomalyCluster:
    cluster_id: int
    pixel_set: np.ndarray            # (m, 2) row/col
    contour: dict                    # GeoJSON-style polygon in lon/lat
    mahalanobis: float
    mean_member_distance: float
    purity: float
    score: int = 0
    rank: int = 0


def pca_project(
    reflectance: ReflectanceCube, n: int
) -> tuple[FeatureCube, np.ndarray, list[float]]:
    """Mean-centered projection onto the top-n principal components.

    Eigenvectors are ordered by descending eigenvalue and sign-fixed so each
    one's largest-magnitude entry is positive.  If the pixel covariance has
    rank r < n the projection is reduced to r components with a warning.
    """
    valid = ~reflectance.nodata_mask
    X = reflectance.values[:, valid].T.astype(np.float64)
    if n > reflectance.band_count:
        raise ValueError(f"n={n} exceeds band count {reflectance.band_count}")
    if X.shape[0] < n:
        raise ValueError(f"only {X.shape[0]} unmasked pixels for n={n}")

    mean, cov = sample_covariance(X)
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals, eigvecs = eigvals[::-1], eigvecs[:, ::-1]
    eigvals = np.maximum(eigvals, 0.0)
    total = eigvals.sum()
    rank = int((eigvals > 1e-12 * max(eigvals[0], 1e-300)).sum())
    if rank < n:
        logger.warning("covariance rank %d < requested %d components; reducing", rank, n)
        n = max(rank, 1)

    basis = eigvecs[:, :n].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    projected = (X - mean) @ basis.T

    cube = np.zeros((n,) + reflectance.nodata_mask.shape, dtype=np.float64)
    cube[:, valid] = projected.T
    explained = [float(v / total) if total > 0 else 0.0 for v in eigvals[:n]]
    feature = FeatureCube(
        values=cube,
        basis_tag=FeatureBasis.PCA_SCORES,
        nodata_mask=reflectance.nodata_mask.copy(),
    )
    return feature, basis, explained


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ center selection."""
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[int(rng.integers(n))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _nearest(X: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


def lloyd_kmeans(
    X: np.ndarray,
    k: int,
    seed: int,
    tol: float = 1e-6,
    max_iter: int = 100,
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """k-means++ initialized Lloyd iterations.

    Stops when the largest center movement drops below ``tol`` or after
    ``max_iter`` rounds.  An emptied cluster is re-seeded at the point
    farthest from its assigned center.  Returns (centers, labels, inertia,
    initial inertia); descent guarantees inertia <= initial inertia.
    """
    rng = np.random.default_rng(seed)
    centers = kmeans_plus_plus(X, k, rng)
    labels, d2 = _nearest(X, centers)
    initial_inertia = float(d2.sum())
    for _ in range(max_iter):
        new_centers = centers.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centers[j] = X[members].mean(axis=0)
        # Re-seed any emptied center at the worst-covered point.
        _, d2 = _nearest(X, new_centers)
        for j in range(k):
            if not (labels == j).any():
                new_centers[j] = X[int(np.argmax(d2))]
                _, d2 = _nearest(X, new_centers)
        movement = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        labels, d2 = _nearest(X, centers)
        if movement < tol:
            break
    return centers, labels, float(d2.sum()), initial_inertia


def cluster_spectral(scores: FeatureCube, k: int, seed: int,
                     tol: float = 1e-6, max_iter: int = 100) -> ClusterModel:
    """k-means over the projected spectra of all unmasked pixels."""
    if k < 2:
        raise ValueError("k must be >= 2")
    valid = ~scores.nodata_mask
    X = scores.values[:, valid].T
    if X.shape[0] < k:
        raise ValueError(f"{X.shape[0]} unmasked pixels < k={k}")
    centers, labels, inertia, init_inertia = lloyd_kmeans(X, k, seed, tol, max_iter)
    assignment = np.full(scores.nodata_mask.shape, -1, dtype=np.int32)
    assignment[valid] = labels
    mean, cov = sample_covariance(X)
    return ClusterModel(
        pca_basis=np.empty((0, 0)),
        explained_variance=[],
        scores=scores,
        cluster_centers=centers,
        assignment=assignment,
        image_center=mean,
        image_covariance=cov,
        inertia=inertia,
        initial_inertia=init_inertia,
    )


def rank_clusters(model: ClusterModel) -> list[tuple[int, float]]:
    """(cluster_id, distance) pairs, most extreme first.

    Distance is the Mahalanobis distance of each cluster center from the
    image's spectral center under the image covariance (regularized when
    ill-conditioned).  Ties break on cluster id.
    """
    D = mahalanobis_distances(
        model.cluster_centers, model.image_center, model.image_covariance
    )
    order = sorted(range(len(D)), key=lambda j: (-D[j], j))
    return [(j, float(D[j])) for j in order]


def contour_regions(
    model: ClusterModel,
    transform: GeoTransform,
    min_purity: float = 0.8,
    min_size: int = 9,
) -> list[AnomalyCluster]:
    """Grow contiguous regions per cluster label and keep the pure ones.

    Each label mask is morphologically closed (3x3, so single-pixel gaps and
    notches are absorbed into the region and count against its purity), then
    split into 4-connected components.  A component survives when
    label-member pixels make up at least ``min_purity`` of its area and the
    area is at least ``min_size``.  Region score combines the cluster's
    image-level extremeness with the region's mean member distance to its
    own cluster center, mapped to 0-1000 by rank percentile.
    """
    from scipy import ndimage

    valid = model.assignment >= 0
    cov = regularize_covariance(model.image_covariance)
    cluster_dist = dict(rank_clusters(model))

    candidates: list[AnomalyCluster] = []
    structure = np.ones((3, 3), dtype=bool)
    k = model.cluster_centers.shape[0]
    for j in range(k):
        mask_j = model.assignment == j
        if not mask_j.any():
            continue
        padded = np.pad(mask_j, 2)
        closed = ndimage.binary_closing(padded, structure=structure)[2:-2, 2:-2]
        closed &= valid
        labels, n = gridops.label_regions(closed)
        if n == 0:
            continue
        for pixels in gridops.component_pixels(labels, n):
            area = pixels.shape[0]
            members = mask_j[pixels[:, 0], pixels[:, 1]]
            purity = float(members.sum()) / area
            if area < min_size or purity < min_purity:
                continue
            member_px = pixels[members]
            member_scores = model.scores.values[:, member_px[:, 0], member_px[:, 1]].T
            dist = mahalanobis_distances(
                member_scores, model.cluster_centers[j], cov
            )
            rings = gridops.boundary_rings(pixels)
            contour = {
                "type": "Polygon",
                "coordinates": [
                    [list(transform.to_lonlat(r, c)) for r, c in ring]
                    for ring in rings
                ],
            }
            candidates.append(
                AnomalyCluster(
                    cluster_id=j,
                    pixel_set=pixels,
                    contour=contour,
                    mahalanobis=cluster_dist[j],
                    mean_member_distance=float(dist.mean()),
                    purity=purity,
                )
            )

    combined = [c.mahalanobis + c.mean_member_distance for c in candidates]
    scores = rank_scores(combined)
    order = sorted(
        range(len(candidates)),
        key=lambda i: (-combined[i], candidates[i].cluster_id,
                       int(candidates[i].pixel_set[0, 0]), int(candidates[i].pixel_set[0, 1])),
    )
    for rank, i in enumerate(order, start=1):
        candidates[i].score = scores[i]
        candidates[i].rank = rank
    candidates.sort(key=lambda c: c.rank)
    return candidates


def run(reflectance: ReflectanceCube, transform: GeoTransform, seed: int,
        params: ContoursParams | None = None) -> dict:
    """Full pipeline on one scene; returns the analytic document body."""
    params = params or ContoursParams()
    scores, basis, explained = pca_project(reflectance, params.n_components)
    model = cluster_spectral(
        scores, params.k, seed, tol=params.kmeans_tol, max_iter=params.kmeans_max_iter
    )
    model.pca_basis = basis
    model.explained_variance = explained
    regions = contour_regions(model, transform, params.min_purity, params.min_size)
    return {
        "clusters": [
            {
                "cluster_id": int(c.cluster_id),
                "score": c.score,
                "rank": c.rank,
                "mahalanobis": c.mahalanobis,
                "mean_member_distance": c.mean_member_distance,
                "purity": c.purity,
                "pixel_count": int(c.pixel_set.shape[0]),
                "contour": c.contour,
            }
            for c in regions
        ],
        "pca": {"n": len(explained), "explained_variance": explained},
    }


def analytic(ctx) -> dict:
    """Wheel entry point."""
    from ..scene import geo_transform

    params = ContoursParams.from_config(ctx.config)
    return run(
        ctx.prepared.reflectance,
        geo_transform(ctx.prepared.scene),
        seed=ctx.seed,
        params=params,
    )
