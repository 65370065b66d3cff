"""Late fusion of CNN and indicator-classifier probabilities, plus evaluation."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .classifiers import (
    TRAINABLE_KINDS,
    Hyperparams,
    LabeledDataset,
    TrainedClassifier,
    fit_classifier,
    train,
)
from .errors import DimensionMismatch, EmptyInput, InvalidProbabilityRow, MissingProbabilities, SplitError

ROW_SUM_TOL = 1e-4
FUSION_SPLITS = ("train", "valid")


class CnnProbabilityTable:
    """Externally produced CNN class probabilities keyed by image id.

    Rows are validated on construction: non-negative, finite, summing to 1
    within ``ROW_SUM_TOL``; accepted rows are renormalised.
    """

    def __init__(self, label_names, probs: dict, provenance: str = ""):
        self.label_names = tuple(label_names)
        self.provenance = provenance
        K = len(self.label_names)
        self._rows = {}
        for image_id, row in probs.items():
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (K,):
                raise InvalidProbabilityRow(image_id, f"expected {K} probabilities, got {row.size}")
            if not np.all(np.isfinite(row)) or np.any(row < 0):
                raise InvalidProbabilityRow(image_id, "probabilities must be finite and non-negative")
            total = math.fsum(row)
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise InvalidProbabilityRow(image_id, f"row sums to {total:.6g}, outside 1 +/- {ROW_SUM_TOL:g}")
            self._rows[image_id] = row / total

    def __len__(self):
        return len(self._rows)

    def __contains__(self, image_id):
        return image_id in self._rows

    @property
    def image_ids(self):
        return list(self._rows)

    def matrix(self, image_ids) -> np.ndarray:
        missing = [i for i in image_ids if i not in self._rows]
        if missing:
            raise MissingProbabilities(missing)
        if not image_ids:
            return np.empty((0, len(self.label_names)))
        return np.vstack([self._rows[i] for i in image_ids])

    @classmethod
    def from_csv(cls, text: str, label_names=None, provenance=""):
        """Parse ``image_id,<label_0>,...`` CSV.

        When ``label_names`` is given the header must name exactly those
        labels in that order.
        """
        reader = csv.reader(io.StringIO(text))
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInput("CNN probability file is empty") from None
        if not header or header[0] != "image_id":
            raise InvalidProbabilityRow("<header>", "first column must be image_id")
        labels = tuple(header[1:])
        if label_names is not None and labels != tuple(label_names):
            raise InvalidProbabilityRow(
                "<header>", f"label columns {list(labels)} do not match manifest labels {list(label_names)}"
            )
        probs = {}
        for line in reader:
            if not line:
                continue
            image_id = line[0]
            if image_id in probs:
                raise InvalidProbabilityRow(image_id, "duplicate image_id")
            try:
                probs[image_id] = [float(v) for v in line[1:]]
            except ValueError:
                raise InvalidProbabilityRow(image_id, "non-numeric probability") from None
        return cls(labels, probs, provenance)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", *self.label_names])
        for image_id, row in self._rows.items():
            writer.writerow([image_id, *(format(v, ".17g") for v in row)])
        return buf.getvalue()


def fuse_average(p_cnn, p_feat) -> np.ndarray:
    """Elementwise mean of two probability vectors (or row-aligned matrices)."""
    a = np.asarray(p_cnn, dtype=np.float64)
    b = np.asarray(p_feat, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"cannot average shapes {a.shape} and {b.shape}")
    return (a + b) / 2.0


def fusion_inputs(p_cnn, p_feat) -> np.ndarray:
    """Concatenate CNN and feature-classifier probabilities row-wise (CNN first)."""
    p_cnn = np.atleast_2d(np.asarray(p_cnn, dtype=np.float64))
    p_feat = np.atleast_2d(np.asarray(p_feat, dtype=np.float64))
    if p_cnn.shape != p_feat.shape:
        raise DimensionMismatch(f"probability blocks differ in shape: {p_cnn.shape} vs {p_feat.shape}")
    return np.hstack([p_cnn, p_feat])


def train_fusion(kind, cnn_table: CnnProbabilityTable, feat_model: TrainedClassifier, dataset: LabeledDataset,
                 fusion_split="train", seed=0, hyperparams=None) -> TrainedClassifier:
    """Fit a fusion classifier on concatenated probabilities of ``fusion_split``."""
    if fusion_split not in FUSION_SPLITS:
        raise SplitError(f"fusion_split must be one of {FUSION_SPLITS}, got {fusion_split!r}")
    ids = dataset.ids(fusion_split)
    X, y = dataset.part(fusion_split)
    p_cnn = cnn_table.matrix(ids)
    missing_test = [i for i in dataset.ids("test") if i not in cnn_table]
    if missing_test:
        raise MissingProbabilities(missing_test)
    Z = fusion_inputs(p_cnn, feat_model.predict_proba(X)) if X.shape[0] else np.empty((0, 2 * dataset.n_classes))
    return fit_classifier(kind, Z, y, dataset.n_classes, hyperparams, seed, dataset.label_names)


# --------------------------------------------------------------------------
# metrics

def confusion_matrix(y_true, y_pred, n_classes) -> np.ndarray:
    """Counts with true labels on rows and predictions on columns."""
    y_true = np.asarray(y_true, dtype=np.intp)
    y_pred = np.asarray(y_pred, dtype=np.intp)
    if y_true.shape != y_pred.shape:
        raise DimensionMismatch("y_true and y_pred differ in length")
    if y_true.size == 0:
        raise EmptyInput("no labels to score")
    if min(y_true.min(), y_pred.min()) < 0 or max(y_true.max(), y_pred.max()) >= n_classes:
        raise DimensionMismatch("label out of range")
    return np.bincount(y_true * n_classes + y_pred, minlength=n_classes * n_classes).reshape(n_classes, n_classes)


def weighted_precision(y_true, y_pred, n_classes) -> float:
    """Support-weighted mean of per-class precision.

    A class that is never predicted contributes precision 0. Evaluated in
    exact rational arithmetic, then rounded once.
    """
    cm = confusion_matrix(y_true, y_pred, n_classes)
    n = int(cm.sum())
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    total = Fraction(0)
    for c in range(n_classes):
        if predicted[c]:
            total += Fraction(int(support[c]), n) * Fraction(int(cm[c, c]), int(predicted[c]))
    return float(total)


def per_class_scores(cm):
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    diag = np.diag(cm)
    precision = np.divide(diag, predicted, out=np.zeros(len(diag)), where=predicted > 0)
    recall = np.divide(diag, support, out=np.zeros(len(diag)), where=support > 0)
    return precision, recall, support


# --------------------------------------------------------------------------
# evaluation

def _mean_std(values):
    values = [float(v) for v in values]
    if all(v == values[0] for v in values):
        return values[0], 0.0
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


@dataclass
class MethodResult:
    name: str
    per_seed: list
    accuracy_per_seed: list
    confusion: np.ndarray  # from the first seed
    mean: float = 0.0
    std: float = 0.0
    accuracy: float = 0.0

    def __post_init__(self):
        self.mean, self.std = _mean_std(self.per_seed)
        self.accuracy = _mean_std(self.accuracy_per_seed)[0]

    def to_dict(self, label_names):
        precision, recall, support = per_class_scores(self.confusion)
        return {
            "weighted_precision_mean": self.mean,
            "weighted_precision_std": self.std,
            "weighted_precision_per_seed": list(self.per_seed),
            "accuracy_mean": self.accuracy,
            "per_class": [
                {"label": name, "precision": float(p), "recall": float(r), "support": int(s)}
                for name, p, r, s in zip(label_names, precision, recall, support)
            ],
            "confusion_matrix": self.confusion.tolist(),
        }


@dataclass
class Timing:
    """Wall-clock seconds per stage; reported in minutes."""

    feature_extraction: float = 0.0
    feature_classifier_training: float = 0.0
    fusion_training: float = 0.0
    cnn: str = "external/ingested"

    def to_dict(self):
        return {
            "feature_extraction_minutes": self.feature_extraction / 60.0,
            "feature_classifier_training_minutes": self.feature_classifier_training / 60.0,
            "fusion_training_minutes": self.fusion_training / 60.0,
            "cnn_training": self.cnn,
        }


@dataclass
class EvaluationReport:
    label_names: tuple
    seeds: list
    n_test: int
    methods: dict  # name -> MethodResult, insertion-ordered
    timing: Timing = field(default_factory=Timing)
    config: dict = field(default_factory=dict)
    input_hash: str = ""

    def __getitem__(self, method):
        return self.methods[method]

    def to_dict(self, include_timing=True):
        d = {
            "schema": "statfusion.report/v1",
            "config": self.config,
            "input_hash": self.input_hash,
            "labels": list(self.label_names),
            "seeds": list(self.seeds),
            "n_test": self.n_test,
            "methods": {name: r.to_dict(self.label_names) for name, r in self.methods.items()},
        }
        if include_timing:
            d["timing"] = self.timing.to_dict()
        return d

    def to_json(self, include_timing=True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, allow_nan=False) + "\n"

    def to_text(self) -> str:
        rows = [("method", "w.precision", "std", "accuracy")]
        for name, r in self.methods.items():
            rows.append((name, f"{100 * r.mean:.2f}%", f"{100 * r.std:.2f}", f"{100 * r.accuracy:.2f}%"))
        widths = [max(len(row[i]) for row in rows) for i in range(4)]
        lines = []
        for i, row in enumerate(rows):
            lines.append("  ".join(cell.ljust(widths[0]) if j == 0 else cell.rjust(widths[j]) for j, cell in enumerate(row)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        t = self.timing.to_dict()
        lines.append("")
        lines.append(f"feature extraction: {t['feature_extraction_minutes']:.3f} min")
        lines.append(f"feature classifier training: {t['feature_classifier_training_minutes']:.3f} min")
        lines.append(f"fusion training: {t['fusion_training_minutes']:.3f} min")
        lines.append(f"cnn training: {t['cnn_training']}")
        return "\n".join(lines) + "\n"


def method_names(fusion_kinds):
    return ["cnn_alone", "features_alone", "avg_fusion"] + [f"fused_{k}" for k in fusion_kinds]


def evaluate(dataset: LabeledDataset, cnn_table: CnnProbabilityTable, seeds, feature_kind="rf",
             fusion_kinds=TRAINABLE_KINDS, fusion_split="train", hyperparams=None, methods=None,
             extraction_seconds=0.0, config=None, input_hash="") -> EvaluationReport:
    """Score every method on the test split for each seed.

    Methods: ``cnn_alone``, ``features_alone``, ``avg_fusion`` and
    ``fused_<kind>`` for each fusion kind. Only rf consumes the seed, so
    other models are trained once and reused across seeds.
    """
    seeds = list(seeds)
    if not seeds:
        raise EmptyInput("seed list is empty")
    hp = hyperparams if isinstance(hyperparams, Hyperparams) else Hyperparams.from_dict(hyperparams)
    wanted = methods or method_names(fusion_kinds)
    fusion_kinds = [m[len("fused_"):] for m in wanted if m.startswith("fused_")]

    K = dataset.n_classes
    test_ids = dataset.ids("test")
    X_test, y_test = dataset.part("test")
    if not test_ids:
        raise EmptyInput("test split is empty")
    p_cnn_test = cnn_table.matrix(test_ids)
    timing = Timing(feature_extraction=float(extraction_seconds))

    scores = {m: [] for m in wanted}
    accs = {m: [] for m in wanted}
    confusions = {}
    feat_cache = {}
    fusion_cache = {}
    for seed in seeds:
        feat_key = seed if feature_kind == "rf" else None
        if feat_key not in feat_cache:
            t0 = time.perf_counter()
            feat_model = train(feature_kind, dataset, hp, seed)
            timing.feature_classifier_training += time.perf_counter() - t0
            feat_cache[feat_key] = (feat_model, feat_model.predict_proba(X_test))
        feat_model, p_feat_test = feat_cache[feat_key]

        probs = {}
        if "cnn_alone" in scores:
            probs["cnn_alone"] = p_cnn_test
        if "features_alone" in scores:
            probs["features_alone"] = p_feat_test
        if "avg_fusion" in scores:
            probs["avg_fusion"] = fuse_average(p_cnn_test, p_feat_test)
        z_test = fusion_inputs(p_cnn_test, p_feat_test)
        for kind in fusion_kinds:
            key = (kind, feat_key, seed if kind == "rf" else None)
            if key not in fusion_cache:
                t0 = time.perf_counter()
                fmodel = train_fusion(kind, cnn_table, feat_model, dataset, fusion_split, seed, hp)
                timing.fusion_training += time.perf_counter() - t0
                fusion_cache[key] = fmodel.predict_proba(z_test)
            probs[f"fused_{kind}"] = fusion_cache[key]

        for m in wanted:
            y_pred = np.argmax(probs[m], axis=1)
            scores[m].append(weighted_precision(y_test, y_pred, K))
            accs[m].append(float(np.mean(y_pred == y_test)))
            confusions.setdefault(m, confusion_matrix(y_test, y_pred, K))

    results = {m: MethodResult(m, scores[m], accs[m], confusions[m]) for m in wanted}
    return EvaluationReport(dataset.label_names, seeds, len(test_ids), results, timing, config or {}, input_hash)
