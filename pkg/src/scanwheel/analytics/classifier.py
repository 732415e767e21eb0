"""Four-class per-pixel land-cover classification on coarse-binned reflectance.

Feature vectors are the nine coarse multispectral reflectances plus the two
band ratios (band 3 over 7 and band 4 over 8, bands numbered 1-9 in
wavelength order).  One-vs-rest linear margin classifiers are trained by
deterministic full-batch subgradient descent on the regularized hinge loss,
with backtracking so the objective never increases.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats as scipy_stats

from ..errors import ConfigError
from ..radiometry import FeatureBasis, FeatureCube, PreparedScene, bin_to_ali, to_reflectance
from ..scene import load_scene

logger = logging.getLogger(__name__)

CLASSES = ("CLOUD", "WATER", "DESERT", "VEGETATION")
NODATA_LABEL = 255
FEATURE_COUNT = 11
RATIO_CAP = 100.0
RATIO_DENOM_FLOOR = 1e-6
CLASS_COUNT_GUIDANCE = (6000, 9000)   # per-class training sample guidance


def training_catalog() -> list[dict]:
    """Provenance records of the reference training scenes (region, class
    letters, observation date, solar geometry)."""
    with resources.files("scanwheel.data").joinpath("training_catalog.json").open("rb") as f:
        return json.load(f)


@dataclass
class TrainingSet:
    features: np.ndarray            # (n, 11)
    labels: np.ndarray              # (n,) indices into CLASSES
    scene_ids: list[str]
    provenance: list[dict] = field(default_factory=training_catalog)
    skipped_nodata: int = 0

    @property
    def class_counts(self) -> dict[str, int]:
        return {
            name: int((self.labels == i).sum()) for i, name in enumerate(CLASSES)
        }


@dataclass
class ClassifierModel:
    weights: np.ndarray             # (n_classes, 11)
    biases: np.ndarray              # (n_classes,)
    feature_mean: np.ndarray
    feature_std: np.ndarray
    classes: tuple[str, ...] = CLASSES
    epochs: int = 0
    seed: int = 0
    regularization_c: float = 1.0
    loss_history: list[list[float]] = field(default_factory=list)
    train_accuracy: float = 0.0

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        payload = {
            "classes": list(self.classes),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "epochs": self.epochs,
            "seed": self.seed,
            "regularization_c": self.regularization_c,
            "loss_history": self.loss_history,
            "train_accuracy": self.train_accuracy,
        }
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", "utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "ClassifierModel":
        d = json.loads(Path(path).read_text("utf-8"))
        return cls(
            weights=np.asarray(d["weights"], dtype=np.float64),
            biases=np.asarray(d["biases"], dtype=np.float64),
            feature_mean=np.asarray(d["feature_mean"], dtype=np.float64),
            feature_std=np.asarray(d["feature_std"], dtype=np.float64),
            classes=tuple(d["classes"]),
            epochs=int(d["epochs"]),
            seed=int(d["seed"]),
            regularization_c=float(d["regularization_c"]),
            loss_history=d["loss_history"],
            train_accuracy=float(d["train_accuracy"]),
        )


@dataclass
class ClassMap:
    labels: np.ndarray              # (rows, cols) uint8, 255 = nodata
    coverage: dict[str, float]      # over classified pixels; sums to 1
    class_counts: dict[str, int]
    clamped_ratio_pixels: int = 0


def build_features(ali_cube: FeatureCube) -> tuple[np.ndarray, int]:
    """Per-pixel 11-vector grid: 9 binned reflectances + two band ratios.

    Ratio denominators below 1e-6 clamp the ratio to 100 (counted and
    returned so callers can warn).  Returns (grid of shape (11, rows, cols),
    clamp count over unmasked pixels).
    """
    if ali_cube.basis_tag is not FeatureBasis.ALI_BINNED or ali_cube.component_count != 9:
        raise ConfigError(
            f"expected a 9-component binned cube, got {ali_cube.component_count} "
            f"components tagged {ali_cube.basis_tag}"
        )
    v = ali_cube.values
    grid = np.empty((FEATURE_COUNT,) + v.shape[1:], dtype=np.float64)
    grid[:9] = v
    clamps = 0
    valid = ~ali_cube.nodata_mask
    for slot, (num, den) in ((9, (2, 6)), (10, (3, 7))):
        denom = v[den]
        small = np.abs(denom) < RATIO_DENOM_FLOOR
        ratio = np.where(small, RATIO_CAP, v[num] / np.where(small, 1.0, denom))
        grid[slot] = ratio
        clamps += int((small & valid).sum())
    grid[:, ali_cube.nodata_mask] = 0.0
    return grid, clamps


def build_training_set(
    regions: list[tuple[str | Path, tuple[int, int, int, int], str]],
    ali_intervals=None,
) -> TrainingSet:
    """Featurize labeled scene rectangles into a training set.

    Each region is (bundle path, half-open rect (r0, c0, r1, c1), class
    name).  Pixels are converted to reflectance, binned, and featurized;
    nodata pixels inside a rectangle are skipped and counted.  Per-class
    totals outside the 6000-9000 guidance band are logged as warnings.
    """
    if not regions:
        raise ConfigError("no labeled regions given")
    feats: list[np.ndarray] = []
    labels: list[np.ndarray] = []
    scene_ids: list[str] = []
    skipped = 0
    cache: dict[str, tuple] = {}
    for bundle, rect, class_name in regions:
        if class_name not in CLASSES:
            raise ConfigError(f"unknown class {class_name!r}")
        key = str(bundle)
        if key not in cache:
            scene = load_scene(bundle)
            cube = bin_to_ali(
                to_reflectance(scene),
                ali_intervals or _default_intervals(),
                scene.metadata.instrument,
            )
            grid, _ = build_features(cube)
            cache[key] = (scene, cube, grid)
        scene, cube, grid = cache[key]
        r0, c0, r1, c1 = rect
        window_valid = ~cube.nodata_mask[r0:r1, c0:c1]
        skipped += int((~window_valid).sum())
        sample = grid[:, r0:r1, c0:c1][:, window_valid].T
        feats.append(sample)
        labels.append(np.full(sample.shape[0], CLASSES.index(class_name)))
        scene_ids.extend([scene.scene_id] * sample.shape[0])

    ts = TrainingSet(
        features=np.concatenate(feats),
        labels=np.concatenate(labels).astype(np.int64),
        scene_ids=scene_ids,
        skipped_nodata=skipped,
    )
    lo, hi = CLASS_COUNT_GUIDANCE
    for name, count in ts.class_counts.items():
        if count and not (lo <= count <= hi):
            logger.warning("class %s has %d samples, outside guidance %d-%d",
                           name, count, lo, hi)
    return ts


def _default_intervals():
    from ..radiometry import default_ali_intervals

    return default_ali_intervals()


def save_training_set(ts: TrainingSet, path: str | Path) -> Path:
    """JSON-lines training set: one {features, label, scene_id} per line."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as f:
        for i in range(ts.features.shape[0]):
            f.write(json.dumps({
                "features": ts.features[i].tolist(),
                "label": CLASSES[ts.labels[i]],
                "scene_id": ts.scene_ids[i],
            }, sort_keys=True) + "\n")
    return path


def load_training_set(path: str | Path) -> TrainingSet:
    feats, labels, scene_ids = [], [], []
    with Path(path).open(encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            feats.append(d["features"])
            labels.append(CLASSES.index(d["label"]))
            scene_ids.append(d["scene_id"])
    return TrainingSet(
        features=np.asarray(feats, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
        scene_ids=scene_ids,
    )


def _objective(w, b, X, y, weights, reg):
    margin = y * (X @ w + b)
    hinge = np.maximum(0.0, 1.0 - margin)
    return 0.5 * reg * float(w @ w) + float((weights * hinge).sum() / weights.sum())


def _train_binary(X, y, weights, reg, epochs):
    """Full-batch subgradient descent with backtracking; monotone objective."""
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    eta = 1.0
    wsum = weights.sum()
    history = [_objective(w, b, X, y, weights, reg)]
    for _ in range(epochs):
        margin = y * (X @ w + b)
        active = margin < 1.0
        coef = weights * y * active
        grad_w = reg * w - (X.T @ coef) / wsum
        grad_b = -float(coef.sum()) / wsum
        accepted = False
        for _ in range(40):
            w_new = w - eta * grad_w
            b_new = b - eta * grad_b
            f_new = _objective(w_new, b_new, X, y, weights, reg)
            if f_new <= history[-1]:
                w, b = w_new, b_new
                history.append(f_new)
                eta *= 1.2
                accepted = True
                break
            eta *= 0.5
        if not accepted:
            history.append(history[-1])
            break
    return w, b, history


def train_classifier(
    ts: TrainingSet,
    regularization_c: float = 1.0,
    epochs: int = 200,
    seed: int = 0,
    sample_weight: np.ndarray | None = None,
) -> ClassifierModel:
    """One-vs-rest linear hinge-loss training on standardized features.

    Fully deterministic: full-batch subgradient descent with backtracking
    line search, so each per-class loss history is non-increasing.
    ``sample_weight`` scales individual samples' hinge contributions, which
    is equivalent to duplicating those samples.
    """
    present = [i for i in range(len(CLASSES)) if (ts.labels == i).sum() >= 10]
    if len(present) < 2:
        raise ConfigError("need at least 2 classes with >= 10 samples each")

    mean = ts.features.mean(axis=0)
    std = ts.features.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    X = (ts.features - mean) / std
    n = X.shape[0]
    weights = (
        np.ones(n) if sample_weight is None
        else np.asarray(sample_weight, dtype=np.float64)
    )
    reg = 1.0 / regularization_c

    W = np.zeros((len(CLASSES), FEATURE_COUNT))
    B = np.zeros(len(CLASSES))
    histories: list[list[float]] = [[] for _ in CLASSES]
    for i in range(len(CLASSES)):
        if (ts.labels == i).sum() == 0:
            continue
        y = np.where(ts.labels == i, 1.0, -1.0)
        W[i], B[i], histories[i] = _train_binary(X, y, weights, reg, epochs)

    predicted = (X @ W.T + B).argmax(axis=1)
    accuracy = float((predicted == ts.labels).mean())
    return ClassifierModel(
        weights=W,
        biases=B,
        feature_mean=mean,
        feature_std=std,
        epochs=epochs,
        seed=seed,
        regularization_c=regularization_c,
        loss_history=histories,
        train_accuracy=accuracy,
    )


def classify_features(grid: np.ndarray, valid: np.ndarray,
                      model: ClassifierModel) -> ClassMap:
    """Argmax of the one-vs-rest margins at every valid pixel.

    Ties resolve to the lowest class index (the fixed CLOUD < WATER <
    DESERT < VEGETATION order).
    """
    rows, cols = valid.shape
    X = grid[:, valid].T
    Xs = (X - model.feature_mean) / model.feature_std
    margins = Xs @ model.weights.T + model.biases
    chosen = margins.argmax(axis=1).astype(np.uint8)
    labels = np.full((rows, cols), NODATA_LABEL, dtype=np.uint8)
    labels[valid] = chosen
    counts = {
        name: int((chosen == i).sum()) for i, name in enumerate(model.classes)
    }
    total = int(valid.sum())
    coverage = {
        name: (counts[name] / total if total else 0.0) for name in model.classes
    }
    return ClassMap(labels=labels, coverage=coverage, class_counts=counts)


def classify_scene(prepared: PreparedScene, model: ClassifierModel) -> ClassMap:
    grid, clamps = build_features(prepared.ali_binned)
    cm = classify_features(grid, ~prepared.ali_binned.nodata_mask, model)
    cm.clamped_ratio_pixels = clamps
    return cm


def write_class_map(cm: ClassMap, out_dir: str | Path) -> Path:
    """labels.u8 raster plus a JSON sidecar with the legend and coverage."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "labels.u8").write_bytes(
        np.ascontiguousarray(cm.labels, dtype=np.uint8).tobytes()
    )
    sidecar = {
        "legend": {str(i): name for i, name in enumerate(CLASSES)} | {
            str(NODATA_LABEL): "NODATA"
        },
        "rows": int(cm.labels.shape[0]),
        "cols": int(cm.labels.shape[1]),
        "coverage": cm.coverage,
        "class_counts": cm.class_counts,
        "clamped_ratio_pixels": cm.clamped_ratio_pixels,
    }
    (out_dir / "classmap.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2) + "\n", "utf-8"
    )
    return out_dir


def validate_coverage(pairs: list[tuple[float, float]]) -> dict:
    """Least-squares regression of classified vs expected coverage fractions.

    Returns slope, intercept, R^2, the 95% confidence interval for the
    slope, and RMS distance of the points from the 1-1 line.  Needs at
    least 3 pairs.
    """
    if len(pairs) < 3:
        raise ConfigError(f"need >= 3 pairs, got {len(pairs)}")
    x = np.asarray([p[0] for p in pairs], dtype=np.float64)
    y = np.asarray([p[1] for p in pairs], dtype=np.float64)
    fit = scipy_stats.linregress(x, y)
    dof = len(pairs) - 2
    t_mult = float(scipy_stats.t.ppf(0.975, dof))
    return {
        "n": len(pairs),
        "slope": float(fit.slope),
        "intercept": float(fit.intercept),
        "r_squared": float(fit.rvalue) ** 2,
        "slope_ci95": [
            float(fit.slope - t_mult * fit.stderr),
            float(fit.slope + t_mult * fit.stderr),
        ],
        "identity_rmse": float(np.sqrt(np.mean((y - x) ** 2))),
    }


def analytic(ctx) -> dict:
    """Wheel entry point; needs ``model_path`` in the analytic config."""
    model_path = ctx.config.get("model_path")
    if not model_path:
        raise ConfigError("classifier analytic requires config['model_path']")
    model = ClassifierModel.load(model_path)
    valid = ~ctx.prepared.ali_binned.nodata_mask
    if not valid.any():
        return {
            "legend": list(CLASSES),
            "empty_scene": True,
            "coverage": {},
            "class_counts": {},
            "clamped_ratio_pixels": 0,
        }
    cm = classify_scene(ctx.prepared, model)
    return {
        "legend": list(CLASSES),
        "empty_scene": False,
        "coverage": cm.coverage,
        "class_counts": cm.class_counts,
        "clamped_ratio_pixels": cm.clamped_ratio_pixels,
    }
