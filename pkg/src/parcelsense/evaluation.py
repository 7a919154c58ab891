"""Accuracy assessment and the RECT / RAND / PROPOSED comparison harness.

The report mirrors the usual remote-sensing accuracy table: overall
accuracy, Cohen's kappa, and per-class commission error, omission error,
producer's accuracy (1 - omission) and user's accuracy (1 - commission).
Per-class ratios whose denominator is zero are reported as None.

Methods (each run on a fresh train/test split of the labeled parcels):
  PROPOSED  sample -> label -> TF-IDF -> random forest
  RAND      sample -> label -> majority-word vote mapped to a class
  RECT      bounding-box patch -> single word mapped to a class
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import forest as forest_mod
from . import sampler as sampler_mod
from . import semantics
from .forest import ForestConfig
from .geodata import (
    ParcelMap,
    ParcelRecord,
    RasterGrid,
    build_parcel_records,
    load_labels,
    load_parcel_map,
    load_raster,
)
from .sampler import SamplerConfig

METHODS = ("RECT", "RAND", "PROPOSED")


@dataclass(frozen=True)
class ConfusionMatrix:
    """counts[r][c] = parcels of reference class r predicted as class c."""

    classes: tuple[str, ...]
    counts: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = len(self.classes)
        if self.counts.shape != (k, k):
            raise ValueError("counts must be a square matrix over classes")
        if self.counts.size and self.counts.min() < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class ClassAccuracy:
    commission: float | None
    omission: float | None
    pa: float | None
    ua: float | None


@dataclass(frozen=True)
class AccuracyReport:
    oa: float
    kappa: float | None
    per_class: dict[str, ClassAccuracy]
    matrix: ConfusionMatrix
    empty_parcels: int = 0


def confusion_matrix(
    truth: Sequence[str], pred: Sequence[str], classes: Sequence[str]
) -> ConfusionMatrix:
    if len(truth) != len(pred):
        raise ValueError("truth and prediction lists must have equal length")
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for t, p in zip(truth, pred):
        if t not in index or p not in index:
            raise ValueError(f"label outside class list: {t!r} / {p!r}")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(classes=classes, counts=counts)


def accuracy_report(cm: ConfusionMatrix, empty_parcels: int = 0) -> AccuracyReport:
    """OA, Cohen's kappa and the per-class commission/omission/PA/UA table."""
    total = cm.total
    if total == 0:
        raise ValueError("confusion matrix is empty")
    diag = np.diag(cm.counts)
    row_sums = cm.counts.sum(axis=1)
    col_sums = cm.counts.sum(axis=0)
    oa = float(diag.sum() / total)
    p_e = float((row_sums * col_sums).sum() / total**2)
    if p_e == 1.0:
        kappa = 1.0 if oa == 1.0 else None
    else:
        kappa = float((oa - p_e) / (1.0 - p_e))

    per_class: dict[str, ClassAccuracy] = {}
    for i, cls in enumerate(cm.classes):
        pa = float(diag[i] / row_sums[i]) if row_sums[i] else None
        ua = float(diag[i] / col_sums[i]) if col_sums[i] else None
        per_class[cls] = ClassAccuracy(
            commission=None if ua is None else 1.0 - ua,
            omission=None if pa is None else 1.0 - pa,
            pa=pa,
            ua=ua,
        )
    return AccuracyReport(oa=oa, kappa=kappa, per_class=per_class, matrix=cm, empty_parcels=empty_parcels)


def _vote_word(counts: np.ndarray, vocabulary: Sequence[str]) -> str:
    """Most frequent word; ties keep vocabulary order."""
    if counts.size == 0 or counts.sum() == 0:
        raise ValueError("vote requires at least one counted word")
    return vocabulary[int(np.argmax(counts))]


def rand_vote(
    counts: Sequence[int] | np.ndarray,
    vocabulary: Sequence[str],
    word_class_map: Mapping[str, str],
) -> str:
    """Land-use class of the most frequent word; ties keep vocabulary order."""
    word = _vote_word(np.asarray(counts), vocabulary)
    if word not in word_class_map:
        raise ValueError(f"word {word!r} has no land-use mapping")
    return word_class_map[word]


@dataclass(frozen=True)
class Scene:
    """Everything a pipeline run needs: raster, parcel map and labeled records."""

    raster: RasterGrid
    parcel_map: ParcelMap
    records: tuple[ParcelRecord, ...]
    word_class_map: dict[str, str] | None = None

    @classmethod
    def from_dir(cls, path: str | Path) -> "Scene":
        path = Path(path)
        raster = load_raster(path / "raster.png")
        parcel_map = load_parcel_map(path / "parcels.png", raster)
        labels = load_labels(path / "labels.csv")
        records = tuple(build_parcel_records(parcel_map, labels))
        word_class_map = None
        map_file = path / "word_class_map.csv"
        if map_file.exists():
            word_class_map = {}
            for line in map_file.read_text().splitlines()[1:]:
                if line.strip():
                    word, cls_ = line.split(",", 1)
                    word_class_map[word] = cls_.strip()
        return cls(raster=raster, parcel_map=parcel_map, records=records, word_class_map=word_class_map)

    def labeled_records(self) -> list[ParcelRecord]:
        return [r for r in self.records if r.label is not None]


@dataclass(frozen=True)
class PipelineConfig:
    sampler: SamplerConfig = SamplerConfig()
    forest: ForestConfig = ForestConfig()
    train_fraction: float = 0.60

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly between 0 and 1")


def _majority_label(labels: Sequence[str]) -> str:
    order = forest_mod.class_order(labels)
    counts = {c: 0 for c in order}
    for label in labels:
        counts[label] += 1
    return max(order, key=lambda c: counts[c])  # ties keep canonical order


def run_pipeline(
    scene: Scene,
    labeler,
    config: PipelineConfig,
    method: str,
    rng: np.random.Generator,
    word_class_map: Mapping[str, str] | None = None,
) -> AccuracyReport:
    """One end-to-end run of a method on a fresh train/test split."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    labeled = scene.labeled_records()
    if not labeled:
        raise ValueError("scene has no labeled parcels")
    word_class_map = word_class_map or scene.word_class_map

    order = rng.permutation(len(labeled))
    n_train = int(len(labeled) * config.train_fraction)
    train_recs = [labeled[i] for i in order[:n_train]]
    test_recs = [labeled[i] for i in order[n_train:]]
    if not train_recs or not test_recs:
        raise ValueError("split produced an empty train or test set")
    classes = forest_mod.class_order([r.label for r in labeled])
    fallback = _majority_label([r.label for r in train_recs])
    vocabulary = tuple(labeler.vocabulary)

    truth = [r.label for r in test_recs]
    empty = 0

    if method == "RECT":
        if word_class_map is None:
            raise ValueError("RECT requires a word -> land-use class map")
        patches = [sampler_mod.rect_patch(scene.raster, r) for r in test_recs]
        words = labeler.label_batch(patches)
        pred = [word_class_map.get(w, fallback) for w in words]
        return accuracy_report(confusion_matrix(truth, pred, classes))

    def parcel_words(records: Sequence[ParcelRecord]) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for record in records:
            samples = sampler_mod.sample_parcel(scene.raster, scene.parcel_map, record, config.sampler)
            out[record.id] = labeler.label_batch(samples)
        return out

    if method == "RAND":
        if word_class_map is None:
            raise ValueError("RAND requires a word -> land-use class map")
        words_by_parcel = parcel_words(test_recs)
        table = semantics.count_words(words_by_parcel, vocabulary)
        pred = []
        for record, counts in zip(test_recs, table.counts):
            if counts.sum() == 0:
                empty += 1
                pred.append(fallback)
            else:
                # words without a configured mapping fall back like empty parcels
                pred.append(word_class_map.get(_vote_word(counts, vocabulary), fallback))
        return accuracy_report(confusion_matrix(truth, pred, classes), empty_parcels=empty)

    # PROPOSED
    words_by_parcel = parcel_words(labeled)
    table = semantics.count_words(words_by_parcel, vocabulary)
    empty_ids = set(table.empty_parcel_ids())

    train_ids = [r.id for r in train_recs if r.id not in empty_ids]
    train_labels = [r.label for r in train_recs if r.id not in empty_ids]
    if len(set(train_labels)) < 2:
        # degenerate run (e.g. huge w_min leaves nothing to train on):
        # every test parcel falls back to the majority training class
        empty = sum(1 for r in labeled if r.id in empty_ids)
        pred = [fallback for _ in test_recs]
        return accuracy_report(confusion_matrix(truth, pred, classes), empty_parcels=empty)
    stats = semantics.corpus_stats(table)
    features = semantics.tfidf_features(table, stats)
    feature_of = {pid: features[i] for i, pid in enumerate(table.parcel_ids)}
    model = forest_mod.train_forest(
        np.stack([feature_of[i] for i in train_ids]), train_labels, config.forest, classes=classes
    )

    pred = []
    non_empty_test = [r for r in test_recs if r.id not in empty_ids]
    predictions = iter(
        forest_mod.predict_batch(model, np.stack([feature_of[r.id] for r in non_empty_test]))
        if non_empty_test
        else []
    )
    for record in test_recs:
        if record.id in empty_ids:
            empty += 1
            pred.append(fallback)
        else:
            pred.append(next(predictions))
    empty += sum(1 for r in train_recs if r.id in empty_ids)
    return accuracy_report(confusion_matrix(truth, pred, classes), empty_parcels=empty)


@dataclass(frozen=True)
class MethodResult:
    method: str
    mean_oa: float
    mean_kappa: float
    runs: tuple[AccuracyReport, ...]


def compare_methods(
    scene: Scene,
    labeler,
    config: PipelineConfig,
    repetitions: int = 100,
    master_seed: int = 0,
    methods: Sequence[str] = METHODS,
    threads: int = 1,
) -> list[MethodResult]:
    """Mean (OA, kappa) per method over repeated fresh splits and samplings.

    Repetition r of method m runs with seeds derived from
    (master_seed, r, m), so results are independent of thread count.
    """
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")

    jobs = [(m_i, method, rep) for m_i, method in enumerate(methods) for rep in range(repetitions)]

    def run_one(job):
        m_i, method, rep = job
        rng = np.random.default_rng([master_seed, rep, m_i])
        rep_config = replace(
            config, sampler=replace(config.sampler, seed=(master_seed, rep, m_i))
        )
        return run_pipeline(scene, labeler, rep_config, method, rng)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(run_one, jobs))
    else:
        reports = [run_one(job) for job in jobs]

    results = []
    for m_i, method in enumerate(methods):
        runs = tuple(reports[m_i * repetitions : (m_i + 1) * repetitions])
        kappas = [r.kappa for r in runs if r.kappa is not None]
        results.append(
            MethodResult(
                method=method,
                mean_oa=float(np.mean([r.oa for r in runs])),
                mean_kappa=float(np.mean(kappas)) if kappas else float("nan"),
                runs=runs,
            )
        )
    return results


@dataclass(frozen=True)
class SweepPoint:
    w_min: int
    mean_oa: float
    mean_kappa: float


def wmin_sweep(
    scene: Scene,
    labeler,
    config: PipelineConfig,
    w_values: Sequence[int] = tuple(range(10, 101, 10)),
    repetitions: int = 5,
    master_seed: int = 0,
    threads: int = 1,
) -> list[SweepPoint]:
    """Mean PROPOSED accuracy per minimum window size, all else fixed."""
    points = []
    for w in w_values:
        cfg = replace(config, sampler=replace(config.sampler, w_min=int(w)))
        (result,) = compare_methods(
            scene,
            labeler,
            cfg,
            repetitions=repetitions,
            master_seed=master_seed,
            methods=("PROPOSED",),
            threads=threads,
        )
        points.append(SweepPoint(w_min=int(w), mean_oa=result.mean_oa, mean_kappa=result.mean_kappa))
    return points


def report_to_dict(report: AccuracyReport) -> dict:
    return {
        "oa": report.oa,
        "kappa": report.kappa,
        "empty_parcels": report.empty_parcels,
        "classes": list(report.matrix.classes),
        "matrix": report.matrix.counts.tolist(),
        "per_class": {
            cls: {
                "commission": acc.commission,
                "omission": acc.omission,
                "pa": acc.pa,
                "ua": acc.ua,
            }
            for cls, acc in report.per_class.items()
        },
    }


def report_to_json(report: AccuracyReport) -> str:
    return json.dumps(report_to_dict(report), indent=2, sort_keys=True)


def format_report_table(report: AccuracyReport) -> str:
    """Human-readable per-class table (commission, omission, PA, UA)."""

    def fmt(v: float | None) -> str:
        return "   n/a" if v is None else f"{v:6.3f}"

    lines = [
        f"overall accuracy: {report.oa:.3f}",
        f"kappa:            {'n/a' if report.kappa is None else f'{report.kappa:.3f}'}",
        f"empty parcels:    {report.empty_parcels}",
        "class  commission  omission        pa        ua",
    ]
    for cls, acc in report.per_class.items():
        lines.append(
            f"{cls:>5}      {fmt(acc.commission)}    {fmt(acc.omission)}    {fmt(acc.pa)}    {fmt(acc.ua)}"
        )
    return "\n".join(lines)


def write_sweep_csv(points: Sequence[SweepPoint], path: str | Path) -> None:
    with open(Path(path), "w", newline="") as fh:
        fh.write("w,oa,kappa\n")
        for p in points:
            fh.write(f"{p.w_min},{p.mean_oa:.12g},{p.mean_kappa:.12g}\n")


def plot_sweep(points: Sequence[SweepPoint], path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([p.w_min for p in points], [p.mean_oa for p in points], marker="o")
    ax.set_xlabel("minimum window size (pixels)")
    ax.set_ylabel("mean overall accuracy")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120)
    plt.close(fig)
