"""Mixture-plus-neighbors outlier detector over intensity-free color features.

A diagonal-covariance Gaussian mixture fit to the log/color spectra models
the common structures of a scene.  Pixels in the upper tail of the mixture's
negative log-likelihood seed a flood fill that grows and merges anomalous
"clumps"; each clump is summarized by six features (including a k-nearest-
neighbor distance against a background sample and an edge contrast) and the
most unusual candidates are selected by rank.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .. import gridops
from ..radiometry import FeatureCube, PreparedScene, log_color_projection, top_variance_bands
from .contours import kmeans_plus_plus

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "size",
    "mean_gmm_nll",
    "mean_knn_distance",
    "edge_contrast",
    "internal_spectral_variance",
    "bbox_aspect",
)


@dataclass
class GmmKnnParams:
    k: int = 20
    band_subset: list[int] | None = None   # None = AUTO top-variance bands
    auto_band_count: int = 20
    seed_quantile: float = 0.001
    expand_quantile: float = 0.01
    knn_sample: int = 5000
    knn_k: int = 5
    max_selected: int = 10
    max_iter: int = 200
    tol: float = 1e-6
    variance_floor_scale: float = 1e-6

    def __post_init__(self):
        if self.expand_quantile < self.seed_quantile:
            raise ValueError("expand_quantile must be >= seed_quantile")

    @classmethod
    def from_config(cls, config: dict) -> "GmmKnnParams":
        return cls(**{k: v for k, v in config.items() if k in cls.__dataclass_fields__})


@dataclass
class GmmModel:
    weights: np.ndarray      # (k,), sums to 1
    means: np.ndarray        # (k, d)
    variances: np.ndarray    # (k, d), floored
    converged: bool
    log_likelihood: float    # mean per-point at the final iteration
    history: list[float] = field(default_factory=list)
    resets: int = 0


@dataclass
class Clump:
    clump_id: int
    seed_pixels: np.ndarray
    pixels: np.ndarray
    features: dict = field(default_factory=dict)
    score: int = 0
    rank: int = 0
    selected: bool = False


def _log_gaussians(X: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """(n, k) log densities of diagonal Gaussians."""
    n, d = X.shape
    k = means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        diff = X - means[j]
        out[:, j] = -0.5 * (
            d * np.log(2.0 * np.pi)
            + np.log(variances[j]).sum()
            + (diff * diff / variances[j]).sum(axis=1)
        )
    return out


def fit_gmm_points(X: np.ndarray, k: int, seed: int,
                   max_iter: int = 200, tol: float = 1e-6,
                   variance_floor_scale: float = 1e-6) -> GmmModel:
    """EM fit of a k-component diagonal-covariance mixture.

    Means are initialized with seeded k-means++; variances are floored at
    ``variance_floor_scale`` times the global variance.  The mean per-point
    log-likelihood is non-decreasing across iterations (asserted up to float
    round-off) except immediately after a collapsed component is re-spread.
    """
    n, d = X.shape
    if n < k:
        raise ValueError(f"{n} points cannot support {k} components")
    rng = np.random.default_rng(seed)
    global_var = X.var(axis=0)
    floor = max(variance_floor_scale * float(global_var.mean()), 1e-12)

    means = kmeans_plus_plus(X, k, rng)
    variances = np.tile(np.maximum(global_var, floor), (k, 1))
    weights = np.full(k, 1.0 / k)

    history: list[float] = []
    resets = 0
    converged = False
    prev_ll = -np.inf
    reset_last_iter = False
    for _ in range(max_iter):
        logp = _log_gaussians(X, means, variances) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.mean())
        if not reset_last_iter and ll < prev_ll - 1e-9 * max(1.0, abs(prev_ll)):
            raise AssertionError(
                f"EM log-likelihood decreased: {prev_ll} -> {ll}"
            )
        history.append(ll)
        if ll - prev_ll < tol and np.isfinite(prev_ll):
            converged = True
            break
        prev_ll = ll

        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        reset_last_iter = False
        collapsed = nk < 1e-8 * n
        if collapsed.any():
            # Re-spread dead components at the worst-modeled points.
            worst = np.argsort(norm)
            for slot, j in enumerate(np.nonzero(collapsed)[0]):
                means[j] = X[worst[slot % n]]
                variances[j] = np.maximum(global_var, floor)
                nk[j] = 1.0
            weights = nk / nk.sum()
            resets += int(collapsed.sum())
            reset_last_iter = True
            logger.warning("re-spread %d collapsed component(s)", int(collapsed.sum()))
            continue
        weights = nk / n
        means = (resp.T @ X) / nk[:, None]
        second = (resp.T @ (X * X)) / nk[:, None]
        variances = np.maximum(second - means * means, floor)

    return GmmModel(
        weights=weights,
        means=means,
        variances=variances,
        converged=converged,
        log_likelihood=history[-1] if history else float("nan"),
        history=history,
        resets=resets,
    )


def fit_gmm(features: FeatureCube, k: int, seed: int,
            params: GmmKnnParams | None = None) -> GmmModel:
    """Fit the mixture to all unmasked pixels of a feature cube."""
    params = params or GmmKnnParams(k=k)
    valid = ~features.nodata_mask
    X = features.values[:, valid].T
    if X.shape[0] < 10 * k:
        raise ValueError(f"{X.shape[0]} unmasked pixels < 10*k = {10 * k}")
    return fit_gmm_points(
        X, k, seed,
        max_iter=params.max_iter,
        tol=params.tol,
        variance_floor_scale=params.variance_floor_scale,
    )


def negative_log_likelihood(model: GmmModel, features: FeatureCube) -> np.ndarray:
    """Per-pixel mixture NLL; NaN at masked pixels."""
    valid = ~features.nodata_mask
    X = features.values[:, valid].T
    logp = _log_gaussians(X, model.means, model.variances) + np.log(model.weights)
    nll = -logsumexp(logp, axis=1)
    grid = np.full(features.nodata_mask.shape, np.nan)
    grid[valid] = nll
    return grid


def gmm_outlier_seeds(model: GmmModel, features: FeatureCube,
                      seed_quantile: float = 0.001) -> np.ndarray:
    """Pixels whose NLL exceeds the (1 - seed_quantile) empirical quantile."""
    nll = negative_log_likelihood(model, features)
    return outlier_seeds(nll, ~features.nodata_mask, seed_quantile)


def outlier_seeds(nll_grid: np.ndarray, valid: np.ndarray,
                  seed_quantile: float) -> np.ndarray:
    threshold = np.quantile(nll_grid[valid], 1.0 - seed_quantile)
    mask = np.zeros_like(valid)
    mask[valid] = nll_grid[valid] > threshold
    return mask


def flood_fill_clumps(seeds: np.ndarray, nll_grid: np.ndarray,
                      valid: np.ndarray, expand_quantile: float) -> list[Clump]:
    """Grow each seed over the looser anomaly threshold; merge touching fills.

    Eligible pixels are those above the (1 - expand_quantile) NLL quantile;
    seeds are always eligible.  Clumps are the 4-connected eligible
    components containing at least one seed, so overlapping fills merge.
    """
    threshold = np.quantile(nll_grid[valid], 1.0 - expand_quantile)
    eligible = np.zeros_like(valid)
    eligible[valid] = nll_grid[valid] > threshold
    eligible |= seeds
    labels, n = gridops.flood_fill_from_seeds(eligible & valid, seeds & valid)
    clumps = []
    for i, pixels in enumerate(gridops.component_pixels(labels, n), start=1):
        in_seed = seeds[pixels[:, 0], pixels[:, 1]]
        clumps.append(Clump(clump_id=i, seed_pixels=pixels[in_seed], pixels=pixels))
    return clumps


def background_sample(valid: np.ndarray, clumps: list[Clump], size: int,
                      rng: np.random.Generator) -> np.ndarray:
    """(m, 2) uniform sample of unmasked pixels outside every clump."""
    background = valid.copy()
    for clump in clumps:
        background[clump.pixels[:, 0], clump.pixels[:, 1]] = False
    coords = np.argwhere(background)
    if coords.shape[0] > size:
        idx = rng.choice(coords.shape[0], size=size, replace=False)
        coords = coords[np.sort(idx)]
    return coords


def clump_features(clump: Clump, features: FeatureCube, nll_grid: np.ndarray,
                   reference: np.ndarray, knn_k: int = 5) -> dict:
    """The six per-clump descriptors.

    ``reference`` is the (m, 2) background pixel sample used for the
    k-nearest-neighbor distance.  Edge contrast compares mean NLL inside the
    clump against its 1-pixel outer ring, truncated at image borders.
    """
    pixels = clump.pixels
    rr, cc = pixels[:, 0], pixels[:, 1]
    X = features.values[:, rr, cc].T

    ref_X = features.values[:, reference[:, 0], reference[:, 1]].T
    if ref_X.shape[0] == 0:
        knn = 0.0
    else:
        kk = min(knn_k, ref_X.shape[0])
        dist, _ = cKDTree(ref_X).query(X, k=kk)
        dist = np.atleast_2d(dist)
        knn = float(dist[:, -1].mean())

    shape = nll_grid.shape
    mask = np.zeros(shape, dtype=bool)
    mask[rr, cc] = True
    from scipy import ndimage

    ring = ndimage.binary_dilation(mask, structure=np.ones((3, 3), bool)) & ~mask
    ring &= np.isfinite(nll_grid)
    inside = float(nll_grid[rr, cc].mean())
    edge_contrast = inside - float(nll_grid[ring].mean()) if ring.any() else 0.0

    bbox_rows = int(rr.max() - rr.min() + 1)
    bbox_cols = int(cc.max() - cc.min() + 1)
    aspect = max(bbox_rows, bbox_cols) / min(bbox_rows, bbox_cols)

    return {
        "size": int(pixels.shape[0]),
        "mean_gmm_nll": inside,
        "mean_knn_distance": knn,
        "edge_contrast": edge_contrast,
        "internal_spectral_variance": float(X.var(axis=0).mean()),
        "bbox_aspect": float(aspect),
    }


def select_candidates(clumps: list[Clump], max_selected: int = 10) -> list[Clump]:
    """Rank clumps by the mean rank-percentile of their anomaly features.

    The composite averages the percentiles of mean_gmm_nll,
    mean_knn_distance, and edge_contrast; ties break on clump id.  The top
    ``max_selected`` are flagged selected.  Returns clumps in rank order.
    """
    from ..stats import rank_percentiles

    if not clumps:
        return []
    composite = np.zeros(len(clumps))
    for key in ("mean_gmm_nll", "mean_knn_distance", "edge_contrast"):
        composite += rank_percentiles([c.features[key] for c in clumps])
    composite /= 3.0
    order = sorted(range(len(clumps)), key=lambda i: (-composite[i], clumps[i].clump_id))
    for rank, i in enumerate(order, start=1):
        clumps[i].rank = rank
        clumps[i].score = int(round(1000.0 * composite[i]))
        clumps[i].selected = rank <= max_selected
    return sorted(clumps, key=lambda c: c.rank)


def usable_log_bands(radiance: np.ndarray, valid: np.ndarray) -> list[int]:
    """Bands safe for a log transform: no meaningful near-zero population.

    A band is dropped when its lower percentile sits under 5% of its median
    (water-absorption-like bands whose logs would explode).  Falls back to
    all bands if fewer than three survive.
    """
    sample = radiance[:, valid].astype(np.float64)
    median = np.median(sample, axis=1)
    low = np.quantile(sample, 0.01, axis=1)
    keep = [
        b for b in range(radiance.shape[0])
        if median[b] > 0.0 and low[b] > 0.05 * median[b]
    ]
    return keep if len(keep) >= 3 else list(range(radiance.shape[0]))


def run(prepared: PreparedScene, seed: int, params: GmmKnnParams | None = None) -> dict:
    """Full pipeline on one scene; returns the analytic document body."""
    params = params or GmmKnnParams()
    scene = prepared.scene
    if params.band_subset is not None:
        bands = sorted(params.band_subset)
    else:
        candidates = usable_log_bands(scene.radiance, scene.valid_mask)
        values = scene.radiance[candidates].astype(np.float64)
        picked = top_variance_bands(
            values,
            scene.valid_mask,
            params.auto_band_count,
            [scene.metadata.band_centers_nm[b] for b in candidates],
        )
        bands = sorted(candidates[i] for i in picked)
    cube = log_color_projection(scene, bands)
    model = fit_gmm(cube, params.k, seed, params)
    nll = negative_log_likelihood(model, cube)
    valid = ~cube.nodata_mask
    seeds = outlier_seeds(nll, valid, params.seed_quantile)
    clumps = flood_fill_clumps(seeds, nll, valid, params.expand_quantile)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    reference = background_sample(valid, clumps, params.knn_sample, rng)
    for clump in clumps:
        clump.features = clump_features(clump, cube, nll, reference, params.knn_k)
    ranked = select_candidates(clumps, params.max_selected)
    return {
        "gmm": {
            "k": params.k,
            "converged": model.converged,
            "loglik": model.log_likelihood,
            "iterations": len(model.history),
            "resets": model.resets,
        },
        "band_subset": list(bands),
        "clumps": [
            {
                "clump_id": c.clump_id,
                "pixel_set": c.pixels.tolist(),
                "features": c.features,
                "score": c.score,
                "rank": c.rank,
                "selected": c.selected,
            }
            for c in ranked
        ],
    }


def analytic(ctx) -> dict:
    """Wheel entry point."""
    return run(ctx.prepared, ctx.seed, GmmKnnParams.from_config(ctx.config))
