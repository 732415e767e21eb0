import numpy as np
import pytest

from scanwheel import gridops, synth
from scanwheel.analytics import contours
from scanwheel.radiometry import FeatureBasis, FeatureCube, ReflectanceCube
from scanwheel.scene import GeoBounds, GeoTransform, geo_transform, load_scene
from scanwheel.radiometry import PreparedScene


def refl(values):
    values = np.asarray(values, dtype=np.float64)
    return ReflectanceCube(
        values=values,
        band_centers_nm=[500.0 + 10.0 * i for i in range(values.shape[0])],
        nodata_mask=np.zeros(values.shape[1:], dtype=bool),
    )


def test_pca_line_data_explains_everything():
    t = np.linspace(-1.0, 1.0, 30)
    direction = np.array([1.0, 2.0, -0.5])
    X = np.outer(t, direction)  # 30 pixels on a line in band space
    values = X.T.reshape(3, 5, 6)
    cube, basis, explained = contours.pca_project(refl(values), 1)
    assert explained[0] == pytest.approx(1.0, abs=1e-12)
    assert basis.shape == (1, 3)


def test_pca_matches_svd_oracle():
    rng = np.random.default_rng(0)
    values = rng.normal(0, 1, size=(6, 5, 10)) * np.linspace(3, 0.5, 6)[:, None, None]
    cube, basis, explained = contours.pca_project(refl(values), 3)

    X = values.reshape(6, 50).T
    Xc = X - X.mean(axis=0)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    axes = vt[:3]
    for row in axes:  # same sign convention as the implementation
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    want_scores = Xc @ axes.T
    assert np.allclose(basis, axes, atol=1e-9)
    got_scores = cube.values.reshape(3, 50).T
    assert np.allclose(got_scores, want_scores, atol=1e-9)
    want_ratio = (s[:3] ** 2) / (s ** 2).sum()
    assert np.allclose(explained, want_ratio, atol=1e-12)


def test_pca_isotropic_ratios_roughly_equal():
    rng = np.random.default_rng(1)
    values = rng.normal(0, 1, size=(4, 40, 50))
    _, _, explained = contours.pca_project(refl(values), 4)
    assert max(explained) / min(explained) < 1.25


def test_pca_rank_deficit_reduces_components():
    t = np.linspace(-1.0, 1.0, 24)
    values = np.outer(t, [1.0, 1.0, 1.0]).T.reshape(3, 4, 6)
    cube, basis, _ = contours.pca_project(refl(values), 3)
    assert basis.shape[0] == 1


def _oracle_lloyd(X, k, rng):
    """Plain restartable Lloyd for the multi-restart oracle."""
    centers = X[rng.choice(len(X), size=k, replace=False)]
    for _ in range(200):
        d2 = ((X[:, None] - centers[None]) ** 2).sum(-1)
        labels = d2.argmin(1)
        new = centers.copy()
        for j in range(k):
            if (labels == j).any():
                new[j] = X[labels == j].mean(0)
        if np.allclose(new, centers):
            break
        centers = new
    d2 = ((X[:, None] - centers[None]) ** 2).sum(-1)
    return d2.min(1).sum()


def test_kmeans_separated_blobs_recovered():
    rng = np.random.default_rng(2)
    a = rng.normal(0, 0.1, size=(40, 2))
    b = rng.normal(5, 0.1, size=(40, 2)) + np.array([0.0, 5.0])
    X = np.vstack([a, b])
    centers, labels, inertia, init = contours.lloyd_kmeans(X, 2, seed=3)
    assert len(set(labels[:40])) == 1 and len(set(labels[40:])) == 1
    assert labels[0] != labels[-1]


def test_kmeans_inertia_never_exceeds_initialization():
    rng = np.random.default_rng(4)
    X = rng.normal(0, 1, size=(200, 3))
    for seed in range(5):
        _, _, inertia, init = contours.lloyd_kmeans(X, 4, seed=seed)
        assert inertia <= init + 1e-9


def test_kmeans_close_to_multi_restart_oracle():
    rng = np.random.default_rng(5)
    X = np.vstack([
        rng.normal((0.0, 0.0), 0.4, size=(10, 2)),
        rng.normal((4.0, 1.0), 0.4, size=(10, 2)),
        rng.normal((1.0, 5.0), 0.4, size=(10, 2)),
    ])
    best = min(_oracle_lloyd(X, 3, np.random.default_rng(s)) for s in range(1000))
    _, _, inertia, _ = contours.lloyd_kmeans(X, 3, seed=0)
    assert inertia <= best * 1.05


def _model(centers, image_cov=None, assignment=None, scores=None):
    k, d = centers.shape
    if assignment is None:
        assignment = np.zeros((2, 2), dtype=np.int32)
    if scores is None:
        scores = np.zeros((d, *assignment.shape))
    cube = FeatureCube(
        values=np.asarray(scores, dtype=np.float64),
        basis_tag=FeatureBasis.PCA_SCORES,
        nodata_mask=assignment < 0,
    )
    return contours.ClusterModel(
        pca_basis=np.eye(d),
        explained_variance=[1.0 / d] * d,
        scores=cube,
        cluster_centers=np.asarray(centers, dtype=np.float64),
        assignment=np.asarray(assignment, dtype=np.int32),
        image_center=np.zeros(d),
        image_covariance=np.eye(d) if image_cov is None else np.asarray(image_cov),
        inertia=0.0,
        initial_inertia=0.0,
    )


def test_rank_clusters_identity_covariance_is_euclidean_order():
    model = _model(np.array([[1.0, 0.0], [3.0, 0.0]]))
    ranked = contours.rank_clusters(model)
    assert [cid for cid, _ in ranked] == [1, 0]
    assert ranked[0][1] == pytest.approx(3.0)


def test_rank_clusters_center_at_image_center_ranks_last():
    model = _model(np.array([[0.0, 0.0], [2.0, 1.0]]))
    ranked = contours.rank_clusters(model)
    assert ranked[-1] == (0, pytest.approx(0.0))


def test_rank_clusters_matches_direct_solve_oracle():
    rng = np.random.default_rng(6)
    A = rng.normal(0, 1, size=(5, 5))
    cov = A @ A.T + 0.5 * np.eye(5)
    centers = rng.normal(0, 2, size=(4, 5))
    model = _model(centers, image_cov=cov)
    got = dict(contours.rank_clusters(model))
    inv = np.linalg.inv(cov)
    for j in range(4):
        want = float(np.sqrt(centers[j] @ inv @ centers[j]))
        assert got[j] == pytest.approx(want, rel=1e-9)


def _transform(rows, cols):
    return GeoTransform(
        GeoBounds(lat_min=0.0, lat_max=1.0, lon_min=0.0, lon_max=1.0), rows, cols
    )


def test_contour_regions_solid_block_kept():
    assignment = np.full((9, 9), -1, dtype=np.int32)  # background carries no label
    assignment[2:7, 2:7] = 1
    scores = np.zeros((2, 9, 9))
    scores[0][assignment == 1] = 5.0
    model = _model(
        np.array([[0.0, 0.0], [5.0, 0.0]]), assignment=assignment, scores=scores
    )
    regions = contours.contour_regions(model, _transform(9, 9), 0.8, 9)
    assert len(regions) == 1
    region = regions[0]
    assert region.cluster_id == 1
    assert region.purity == 1.0
    assert region.pixel_set.shape[0] == 25
    assert region.rank == 1 and region.score == 1000


def test_contour_regions_checkerboard_rejected():
    rows = cols = 10
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    assignment = ((rr + cc) % 2).astype(np.int32)
    model = _model(
        np.array([[1.0, 0.0], [0.0, 1.0]]),
        assignment=assignment,
        scores=np.zeros((2, rows, cols)),
    )
    regions = contours.contour_regions(model, _transform(rows, cols), 0.8, 9)
    assert regions == []


def test_contour_rasterizes_back_to_pixel_set(tmp_path):
    bundle, manifest = synth.generate(
        synth.SceneRecipe(
            scene_id="c", rows=60, cols=60, seed=33, noise_sigma=1.0,
            anomalies=[synth.PlantedAnomaly(row=20, col=30, height=3, width=4,
                                            shift_sigma=10.0)],
        ),
        tmp_path,
    )
    scene = load_scene(bundle)
    prepared = PreparedScene(scene)
    transform = geo_transform(scene)
    cube, _, _ = contours.pca_project(prepared.reflectance, 5)
    model = contours.cluster_spectral(cube, 8, seed=5)
    regions = contours.contour_regions(model, transform)
    assert regions
    for region in regions:
        rings_rowcol = [
            [transform.to_rowcol(lon, lat) for lon, lat in ring]
            for ring in region.contour["coordinates"]
        ]
        back = gridops.rasterize_rings(rings_rowcol, (scene.rows, scene.cols))
        want = np.zeros((scene.rows, scene.cols), dtype=bool)
        want[region.pixel_set[:, 0], region.pixel_set[:, 1]] = True
        assert (back == want).all()


def test_planted_blob_is_rank_one_with_max_score(tmp_path):
    bundle, manifest = synth.generate(
        synth.SceneRecipe(
            scene_id="p", rows=80, cols=80, seed=77, noise_sigma=1.0,
            anomalies=[synth.PlantedAnomaly(row=40, col=40, height=3, width=4,
                                            shift_sigma=10.0)],
        ),
        tmp_path,
    )
    scene = load_scene(bundle)
    body = contours.run(prepared_reflectance(scene), geo_transform(scene), seed=9)
    planted = set(map(tuple, manifest["anomalies"][0]["pixels"]))
    top = body["clusters"][0]
    assert top["rank"] == 1 and top["score"] == 1000
    assert top["pixel_count"] == len(planted)
    assert all(0 <= c["score"] <= 1000 for c in body["clusters"])


def prepared_reflectance(scene):
    return PreparedScene(scene).reflectance


def test_rank_order_invariant_under_reflectance_scaling(tmp_path):
    bundle, _ = synth.generate(
        synth.SceneRecipe(
            scene_id="s", rows=50, cols=50, seed=12, noise_sigma=1.0,
            anomalies=[synth.PlantedAnomaly(row=25, col=25, height=3, width=4,
                                            shift_sigma=10.0)],
        ),
        tmp_path,
    )
    scene = load_scene(bundle)
    cube = prepared_reflectance(scene)
    scaled = ReflectanceCube(
        values=cube.values * 3.0,
        band_centers_nm=cube.band_centers_nm,
        nodata_mask=cube.nodata_mask,
    )
    transform = geo_transform(scene)
    base = contours.run(cube, transform, seed=4)
    times3 = contours.run(scaled, transform, seed=4)
    order_a = [(c["cluster_id"], c["rank"]) for c in base["clusters"]]
    order_b = [(c["cluster_id"], c["rank"]) for c in times3["clusters"]]
    assert order_a == order_b


def test_cluster_spectral_requires_enough_pixels():
    cube = FeatureCube(
        values=np.zeros((2, 1, 3)),
        basis_tag=FeatureBasis.PCA_SCORES,
        nodata_mask=np.zeros((1, 3), dtype=bool),
    )
    with pytest.raises(ValueError):
        contours.cluster_spectral(cube, 5, seed=0)
