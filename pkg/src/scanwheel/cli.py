"""Operator entry points.

stdout carries only machine-readable JSON; human diagnostics go to stderr.
Exit codes: 0 success, 1 configuration or lookup errors, 2 deadline
exceeded on ``run``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analytics import default_registry
from .analytics import classifier as clf
from .engine import WheelConfig, run_wheel
from .errors import ScanWheelError
from .radiometry import PreparedScene, load_ali_intervals
from .reporting import overview_report, scene_report
from .scene import load_scene, validate_scene
from .store import DocumentStore


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


def _fail(message: str) -> int:
    sys.stderr.write(message.rstrip() + "\n")
    return 1


def cmd_run(args) -> int:
    try:
        config_data = json.loads(Path(args.config).read_text("utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        return _fail(f"cannot read config: {exc}")
    try:
        batch_dir = config_data["batch_dir"]
        store_root = config_data["store_root"]
    except KeyError as exc:
        return _fail(f"config is missing {exc}")
    registry = default_registry(config_data.get("analytics"))
    config = WheelConfig(
        store_root=store_root,
        seed=int(config_data.get("seed", 0)),
        run_id=config_data.get("run_id") or (args.run_id or None),
        workers=int(config_data.get("workers", 1)),
        deadline_seconds=config_data.get("deadline_seconds"),
        ali_intervals_path=config_data.get("ali_intervals_path"),
    )
    summary = run_wheel(batch_dir, registry, config)
    _emit(summary.as_dict())
    return 2 if summary.deadline_exceeded else 0


def cmd_train(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text("utf-8"))
        regions = [
            (item["scene"], tuple(item["rect"]), item["class"])
            for item in manifest
        ]
        intervals = load_ali_intervals(args.ali_bands)
        ts = clf.build_training_set(regions, intervals)
        missing = [name for name, n in ts.class_counts.items() if n == 0]
        if missing:
            return _fail(f"classes missing from manifest: {', '.join(missing)}")
        model = clf.train_classifier(
            ts, regularization_c=args.C, epochs=args.epochs, seed=args.seed
        )
    except (ScanWheelError, OSError, KeyError, json.JSONDecodeError) as exc:
        return _fail(f"training failed: {exc}")
    model.save(args.out_model)
    training_path = None
    if args.out_training:
        training_path = str(clf.save_training_set(ts, args.out_training))
    _emit({
        "class_counts": ts.class_counts,
        "train_accuracy": model.train_accuracy,
        "model_path": str(args.out_model),
        "training_set_path": training_path,
    })
    return 0


def cmd_classify(args) -> int:
    try:
        scene = load_scene(args.scene)
        model = clf.ClassifierModel.load(args.model)
        prepared = PreparedScene(scene, ali_intervals=load_ali_intervals(args.ali_bands))
        class_map = clf.classify_scene(prepared, model)
    except (ScanWheelError, OSError, json.JSONDecodeError) as exc:
        return _fail(f"classification failed: {exc}")
    clf.write_class_map(class_map, args.out)
    _emit({
        "out": str(args.out),
        "coverage": class_map.coverage,
        "class_counts": class_map.class_counts,
        "clamped_ratio_pixels": class_map.clamped_ratio_pixels,
    })
    return 0


def cmd_report(args) -> int:
    store = DocumentStore(args.store)
    try:
        if args.overview:
            report = overview_report(
                store,
                timeframe=(args.time_from, args.time_to),
                run_id=args.run,
            )
        else:
            if not args.scene or not args.run:
                return _fail("report needs --scene and --run (or --overview)")
            report = scene_report(store, args.scene, args.run)
    except ScanWheelError as exc:
        return _fail(f"report failed: {exc}")
    _emit(report)
    return 0


def cmd_query(args) -> int:
    store = DocumentStore(args.store)
    try:
        docs = store.query(
            scene_id=args.scene,
            analytic_id=args.analytic,
            run_id=args.run,
            produced_from=args.time_from,
            produced_to=args.time_to,
        )
    except ScanWheelError as exc:
        return _fail(f"query failed: {exc}")
    for doc in docs:
        sys.stdout.write(json.dumps(doc.as_dict(), sort_keys=True) + "\n")
    return 0


def cmd_validate_scene(args) -> int:
    try:
        scene = load_scene(args.scene)
    except ScanWheelError as exc:
        return _fail(f"cannot load scene: {exc}")
    report = validate_scene(scene)
    _emit(report.as_dict())
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scanwheel",
        description="Single-pass scanning analytics over scene bundles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the wheel over a batch directory")
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--run-id", default=None)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("train", help="build a training set and train the classifier")
    p.add_argument("--manifest", required=True,
                   help="JSON list of {scene, rect, class} labeled regions")
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-training", default=None,
                   help="optional JSONL training-set output")
    p.add_argument("--ali-bands", default=None, help="band-interval JSON file")
    p.add_argument("--C", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify one scene bundle")
    p.add_argument("--scene", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ali-bands", default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("report", help="generate scene or overview reports")
    p.add_argument("--store", required=True)
    p.add_argument("--scene", default=None)
    p.add_argument("--run", default=None)
    p.add_argument("--overview", action="store_true")
    p.add_argument("--from", dest="time_from", default=None)
    p.add_argument("--to", dest="time_to", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("query", help="stream stored documents as JSON lines")
    p.add_argument("--store", required=True)
    p.add_argument("--scene", default=None)
    p.add_argument("--analytic", default=None)
    p.add_argument("--run", default=None)
    p.add_argument("--from", dest="time_from", default=None)
    p.add_argument("--to", dest="time_to", default=None)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("validate-scene", help="check one scene bundle")
    p.add_argument("--scene", required=True)
    p.set_defaults(func=cmd_validate_scene)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
