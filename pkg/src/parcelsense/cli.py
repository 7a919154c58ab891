"""Command-line pipeline driver.

Commands: synth | train-labeler | sample | label | featurize | train-rf |
classify | evaluate | compare | sweep.  Stage outputs are files in the
documented formats so external labelers and partial reruns compose.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import forest as forest_mod
from . import labeler as labeler_mod
from . import sampler as sampler_mod
from . import semantics, synthcity
from .errors import ParcelSenseError
from .evaluation import (
    PipelineConfig,
    Scene,
    accuracy_report,
    compare_methods,
    confusion_matrix,
    format_report_table,
    plot_sweep,
    report_to_json,
    wmin_sweep,
    write_sweep_csv,
)
from .forest import ForestConfig
from .geodata import load_labels, load_raster
from .sampler import SamplerConfig

USAGE_ERROR = 1
DATA_ERROR = 2

CONFIG_KEYS = {
    "wmin": int,
    "attempts": int,
    "threshold": float,
    "seed": int,
    "threads": int,
    "trees": int,
    "features_per_split": int,
    "min_samples_leaf": int,
    "train_fraction": float,
    "repetitions": int,
    "labeler_lr": float,
    "labeler_iterations": int,
    "labeler_batch": int,
    "crops_per_image": int,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def load_config_file(path: str | Path) -> dict:
    """Parse a flat ``key = value`` config file ('#' starts a comment)."""
    values = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParcelSenseError(f"{path}:{line_no}: expected 'key = value'")
        key, _, value = (part.strip() for part in line.partition("="))
        if key not in CONFIG_KEYS:
            raise ParcelSenseError(f"{path}:{line_no}: unknown config key {key!r}")
        try:
            values[key] = CONFIG_KEYS[key](value)
        except ValueError as exc:
            raise ParcelSenseError(f"{path}:{line_no}: bad value for {key}: {value!r}") from exc
    return values


def _settings(args) -> dict:
    values = {
        "wmin": 20,
        "attempts": 300,
        "threshold": 0.80,
        "seed": 0,
        "threads": int(os.environ.get("PARCELSENSE_THREADS", "1")),
        "trees": 100,
        "features_per_split": 0,
        "min_samples_leaf": 1,
        "train_fraction": 0.60,
        "repetitions": 100,
        "labeler_lr": 0.001,
        "labeler_iterations": 10_000,
        "labeler_batch": 100,
        "crops_per_image": 10,
    }
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    for key in ("wmin", "attempts", "seed", "threads", "reps"):
        flag = getattr(args, key, None)
        if flag is not None:
            values["repetitions" if key == "reps" else key] = flag
    return values


def _sampler_config(values: dict) -> SamplerConfig:
    return SamplerConfig(
        w_min=values["wmin"],
        attempts=values["attempts"],
        membership_threshold=values["threshold"],
        seed=values["seed"],
    )


def _forest_config(values: dict) -> ForestConfig:
    return ForestConfig(
        n_trees=values["trees"],
        features_per_split=values["features_per_split"] or None,
        min_samples_leaf=values["min_samples_leaf"],
        seed=values["seed"],
    )


def _make_labeler(spec: str):
    if spec.startswith("native:"):
        return labeler_mod.NativeSoftmaxLabeler(labeler_mod.load_model(spec[len("native:") :]))
    if spec.startswith("exec:"):
        import shlex

        return labeler_mod.ExternalLabeler(shlex.split(spec[len("exec:") :]))
    raise ParcelSenseError(f"labeler must be 'native:<model.json>' or 'exec:<command>', got {spec!r}")


def _load_scene(path: str | Path) -> Scene:
    scene = Scene.from_dir(Path(path))
    if not scene.labeled_records():
        raise ParcelSenseError(f"scene at {path} has no labeled parcels")
    return scene


def cmd_synth(args) -> int:
    values = _settings(args)
    spec = synthcity.sweep_benchmark(values["seed"]) if args.benchmark == "sweep" else synthcity.default_benchmark(values["seed"])
    generated = synthcity.generate_scene(spec)
    synthcity.export_scene(generated, args.out)
    print(f"scene written to {args.out} ({len(generated.records)} parcels, "
          f"{len(generated.vocabulary)} words)")
    return 0


def cmd_train_labeler(args) -> int:
    values = _settings(args)
    root = Path(args.data)
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if len(class_dirs) < 2:
        raise ParcelSenseError(f"expected >= 2 class directories under {root}")
    rng = np.random.default_rng(values["seed"])
    features, words = [], []
    for class_dir in class_dirs:
        for image_path in sorted(class_dir.glob("*.png")):
            raster = load_raster(image_path)
            crops = sampler_mod.multiscale_crops(raster, values["crops_per_image"], rng=rng)
            for crop in crops:
                features.append(labeler_mod.featurize_patch(crop))
                words.append(class_dir.name)
    if not features:
        raise ParcelSenseError(f"no PNG training images found under {root}")
    pairs = list(zip(features, words))
    train, val, _test = labeler_mod.split_dataset(pairs, rng=rng)
    result = labeler_mod.train_softmax(
        np.stack([f for f, _ in train]),
        [w for _, w in train],
        learning_rate=values["labeler_lr"],
        iterations=values["labeler_iterations"],
        batch_size=values["labeler_batch"],
        rng=rng,
        validation=(np.stack([f for f, _ in val]), [w for _, w in val]) if val else None,
    )
    labeler_mod.save_model(result.model, args.out)
    val_text = "n/a" if result.validation_accuracy is None else f"{result.validation_accuracy:.3f}"
    print(f"labeler saved to {args.out} (train acc {result.train_accuracy:.3f}, val acc {val_text})")
    return 0


def cmd_sample(args) -> int:
    values = _settings(args)
    scene = _load_scene(args.scene)
    config = _sampler_config(values)
    samples = []
    for record in scene.labeled_records():
        samples.extend(sampler_mod.sample_parcel(scene.raster, scene.parcel_map, record, config))
    manifest = sampler_mod.export_patches(samples, args.out)
    print(f"{len(samples)} patches written, manifest at {manifest}")
    return 0


def cmd_label(args) -> int:
    out_dir = Path(args.samples)
    manifest = out_dir / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"sample manifest not found: {manifest}")
    worker = _make_labeler(args.labeler)
    with open(manifest, newline="") as fh:
        rows = list(csv.DictReader(fh))
    patches = [
        sampler_mod.PatchSample(
            parcel_id=int(row["parcel_id"]),
            x=int(row["x"]),
            y=int(row["y"]),
            pixels=load_raster(out_dir / row["path"]).pixels,
        )
        for row in rows
    ]
    words = worker.label_batch(patches)
    if hasattr(worker, "close"):
        worker.close()
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_id", "x", "y", "w", "word"])
        for row, word in zip(rows, words):
            writer.writerow([row["parcel_id"], row["x"], row["y"], row["w"], word])
    print(f"{len(words)} patch labels written to {args.out}")
    return 0


def cmd_featurize(args) -> int:
    per_parcel: dict[int, list[str]] = {}
    with open(args.words, newline="") as fh:
        for row in csv.DictReader(fh):
            per_parcel.setdefault(int(row["parcel_id"]), []).append(row["word"])
    vocabulary = sorted({w for words in per_parcel.values() for w in words})
    table = semantics.count_words(per_parcel, vocabulary)
    features = semantics.tfidf_features(table, semantics.corpus_stats(table))
    semantics.export_features_csv(args.out, table, features)
    print(f"features for {len(per_parcel)} parcels written to {args.out}")
    return 0


def cmd_train_rf(args) -> int:
    values = _settings(args)
    if args.trees_flag is not None:
        values["trees"] = args.trees_flag
    _vocab, parcel_ids, features = semantics.load_features_csv(args.features)
    labels = load_labels(args.labels)
    keep = [i for i, pid in enumerate(parcel_ids) if pid in labels]
    if not keep:
        raise ParcelSenseError("no labeled parcels among the feature rows")
    model = forest_mod.train_forest(
        features[keep],
        [labels[parcel_ids[i]] for i in keep],
        _forest_config(values),
        threads=values["threads"],
    )
    forest_mod.save_model(model, args.out)
    print(f"forest saved to {args.out} (oob error {model.oob_error:.3f})")
    return 0


def cmd_classify(args) -> int:
    model = forest_mod.load_model(args.model)
    _vocab, parcel_ids, features = semantics.load_features_csv(args.features)
    predictions = forest_mod.predict_batch(model, features)
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["parcel_id", "label"])
        for pid, label in zip(parcel_ids, predictions):
            writer.writerow([pid, label])
    print(f"{len(predictions)} predictions written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    truth = load_labels(args.truth)
    pred = load_labels(args.pred)
    common = sorted(set(truth) & set(pred))
    if not common:
        raise ParcelSenseError("no parcels common to truth and prediction tables")
    classes = forest_mod.class_order([truth[i] for i in common])
    report = accuracy_report(
        confusion_matrix([truth[i] for i in common], [pred[i] for i in common], classes)
    )
    if args.out:
        Path(args.out).write_text(report_to_json(report))
    print(format_report_table(report))
    return 0


def cmd_compare(args) -> int:
    values = _settings(args)
    scene = _load_scene(args.scene)
    labeler = _make_labeler(args.labeler)
    config = PipelineConfig(
        sampler=_sampler_config(values),
        forest=_forest_config(values),
        train_fraction=values["train_fraction"],
    )
    results = compare_methods(
        scene,
        labeler,
        config,
        repetitions=values["repetitions"],
        master_seed=values["seed"],
        threads=values["threads"],
    )
    if hasattr(labeler, "close"):
        labeler.close()
    print("method      mean OA   mean kappa")
    for result in results:
        print(f"{result.method:<10} {result.mean_oa:8.4f}   {result.mean_kappa:10.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {
            r.method: {"mean_oa": r.mean_oa, "mean_kappa": r.mean_kappa, "runs": [run.oa for run in r.runs]}
            for r in results
        }
        (out / "compare.json").write_text(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    values = _settings(args)
    scene = _load_scene(args.scene)
    labeler = _make_labeler(args.labeler)
    config = PipelineConfig(
        sampler=_sampler_config(values),
        forest=_forest_config(values),
        train_fraction=values["train_fraction"],
    )
    points = wmin_sweep(
        scene,
        labeler,
        config,
        repetitions=values["repetitions"],
        master_seed=values["seed"],
        threads=values["threads"],
    )
    if hasattr(labeler, "close"):
        labeler.close()
    write_sweep_csv(points, args.out)
    if args.plot:
        plot_sweep(points, args.plot)
    for p in points:
        print(f"w={p.w_min:<4d} oa={p.mean_oa:.4f} kappa={p.mean_kappa:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parcelsense", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--wmin", type=int, default=None)
        p.add_argument("--attempts", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic benchmark scene")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--benchmark", choices=["default", "sweep"], default="default")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-labeler", help="train the native softmax labeler on class folders")
    common(p)
    p.add_argument("--data", required=True, help="directory with one sub-directory per word")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_labeler)

    p = sub.add_parser("sample", help="random-patch sample every labeled parcel")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("label", help="assign words to exported patches")
    common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--labeler", required=True, help="native:<model.json> or exec:<command>")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("featurize", help="word counts -> TF-IDF feature matrix")
    common(p)
    p.add_argument("--words", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train-rf", help="train the random forest on features + labels")
    common(p)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trees", type=int, dest="trees_flag", default=None)
    p.set_defaults(func=cmd_train_rf)

    p = sub.add_parser("classify", help="predict land-use classes for feature rows")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="accuracy report from predictions vs truth")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="RECT vs RAND vs PROPOSED with repetitions")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--labeler", required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="overall accuracy vs minimum window size")
    common(p)
    p.add_argument("--scene", required=True)
    p.add_argument("--labeler", required=True)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", default=None)
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParcelSenseError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
