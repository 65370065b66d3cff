"""Manifests, splits, configuration, file formats, synthetic data and the
extract -> train -> fuse -> evaluate -> ablate orchestration."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .ablation import ablation_matrix
from .classifiers import TRAINABLE_KINDS, Hyperparams, LabeledDataset, dumps_model, train
from .errors import BadSpec, ClassTooSmall, ConfigError, ManifestError, EmptyInput
from .fusion import CnnProbabilityTable, evaluate, train_fusion, weighted_precision
from .imageio import ImageRgb, encode_png, load_image
from .indicators import FEATURE_NAMES, N_FEATURES, ExtractionConfig, extract_batch

SPLITS = ("train", "valid", "test")
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


# --------------------------------------------------------------------------
# manifest

@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    path: str
    label: str
    split: str | None = None


@dataclass
class DatasetManifest:
    entries: list
    root: Path = Path(".")

    def __post_init__(self):
        ids = [e.image_id for e in self.entries]
        if len(ids) != len(set(ids)):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise ManifestError(f"duplicate image_id {dup!r}")
        for e in self.entries:
            if e.split is not None and e.split not in SPLITS:
                raise ManifestError(f"image_id={e.image_id}: unknown split {e.split!r}")

    @property
    def labels(self):
        seen = {}
        for e in self.entries:
            seen.setdefault(e.label, None)
        return tuple(seen)

    @property
    def has_splits(self):
        return bool(self.entries) and all(e.split is not None for e in self.entries)

    def resolve(self, entry):
        p = Path(entry.path)
        return p if p.is_absolute() else self.root / p

    def validate_for_training(self):
        if not self.has_splits:
            raise ManifestError("manifest has no split assignment")
        train_labels = {e.label for e in self.entries if e.split == "train"}
        missing = [lab for lab in self.labels if lab not in train_labels]
        if missing:
            raise ManifestError(f"labels without training images: {missing}")
        for s in SPLITS:
            if not any(e.split == s for e in self.entries):
                raise ManifestError(f"{s} split is empty")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    return parse_manifest(path.read_text(encoding="utf-8"), root=path.parent)


def parse_manifest(text, root=Path(".")) -> DatasetManifest:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or header[:3] != ["image_id", "path", "label"] or len(header) not in (3, 4) \
            or (len(header) == 4 and header[3] != "split"):
        raise ManifestError("manifest header must be image_id,path,label[,split]")
    entries = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ManifestError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        split = row[3] if len(row) == 4 and row[3] else None
        entries.append(ManifestEntry(row[0], row[1], row[2], split))
    if not entries:
        raise EmptyInput("manifest has no entries")
    return DatasetManifest(entries, Path(root))


def manifest_to_csv(manifest: DatasetManifest) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image_id", "path", "label", "split"])
    for e in manifest.entries:
        writer.writerow([e.image_id, e.path, e.label, e.split or ""])
    return buf.getvalue()


def auto_split(manifest: DatasetManifest, ratios=DEFAULT_RATIOS, seed=0) -> DatasetManifest:
    """Stratified train/valid/test assignment.

    Per label, ``floor(n * ratio)`` items (at least one) go to valid and to
    test; the remainder goes to train.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    assignment = {}
    for label in manifest.labels:
        members = [e.image_id for e in manifest.entries if e.label == label]
        n = len(members)
        if n < 3:
            raise ClassTooSmall(f"label {label!r} has {n} instance(s); at least 3 are needed")
        n_valid = max(1, math.floor(round(n * ratios[1], 9))) if ratios[1] > 0 else 0
        n_test = max(1, math.floor(round(n * ratios[2], 9))) if ratios[2] > 0 else 0
        order = rng.permutation(n)
        for rank, idx in enumerate(order):
            if rank < n_valid:
                split = "valid"
            elif rank < n_valid + n_test:
                split = "test"
            else:
                split = "train"
            assignment[members[idx]] = split
    entries = [replace(e, split=assignment[e.image_id]) for e in manifest.entries]
    return DatasetManifest(entries, manifest.root)


# --------------------------------------------------------------------------
# configuration

@dataclass
class RunConfig:
    """Every knob of a run. Serialised into each report."""

    levels: int = 32
    resize: bool = True
    side: int = 224
    feature_classifier: str = "rf"
    fusion_kinds: list = field(default_factory=lambda: list(TRAINABLE_KINDS))
    fusion_split: str = "train"
    seeds: list = field(default_factory=lambda: list(range(10)))
    hyperparams: dict = field(default_factory=lambda: asdict(Hyperparams()))
    histogram_families: str = "coarse"
    split_ratios: list = field(default_factory=lambda: list(DEFAULT_RATIOS))
    split_seed: int = 0
    workers: int = 1
    output_dir: str = "."

    def __post_init__(self):
        if not 2 <= int(self.levels) <= 256:
            raise ConfigError("levels must lie in [2, 256]")
        if int(self.side) < 2:
            raise ConfigError("side must be >= 2")
        if self.feature_classifier not in TRAINABLE_KINDS:
            raise ConfigError(f"feature_classifier must be one of {TRAINABLE_KINDS}")
        bad = [k for k in self.fusion_kinds if k not in TRAINABLE_KINDS]
        if bad:
            raise ConfigError(f"unknown fusion kinds {bad}")
        if self.fusion_split not in ("train", "valid"):
            raise ConfigError("fusion_split must be 'train' or 'valid'")
        if self.histogram_families not in ("coarse", "fine"):
            raise ConfigError("histogram_families must be 'coarse' or 'fine'")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        self.hyperparams = asdict(Hyperparams.from_dict({**asdict(Hyperparams()), **(self.hyperparams or {})}))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields {sorted(unknown)}")
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self):
        return asdict(self)

    def extraction(self):
        return ExtractionConfig(levels=int(self.levels), resize=bool(self.resize), side=int(self.side))

    def hp(self):
        return Hyperparams.from_dict(self.hyperparams)


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig.from_dict(data)


# --------------------------------------------------------------------------
# file I/O

def atomic_write(path, data):
    """Write text or bytes to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(v):
    return format(float(v), ".17g")


def features_to_csv(image_ids, labels, X) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["image_id", "label", *FEATURE_NAMES])
    for image_id, label, row in zip(image_ids, labels, X):
        writer.writerow([image_id, label, *map(_fmt, row)])
    return buf.getvalue()


@dataclass
class FeatureTable:
    image_ids: list
    labels: list
    X: np.ndarray


def parse_features_csv(text) -> FeatureTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or header[:2] != ["image_id", "label"] or tuple(header[2:]) != FEATURE_NAMES:
        raise ManifestError("features CSV header must be image_id,label followed by the 54 indicator names")
    ids, labels, rows = [], [], []
    for row in reader:
        if not row:
            continue
        if len(row) != N_FEATURES + 2:
            raise ManifestError(f"image_id={row[0]}: expected {N_FEATURES + 2} fields")
        ids.append(row[0])
        labels.append(row[1])
        rows.append([float(v) for v in row[2:]])
    X = np.asarray(rows, dtype=np.float64).reshape(len(rows), N_FEATURES)
    return FeatureTable(ids, labels, X)


def read_features(path) -> FeatureTable:
    return parse_features_csv(Path(path).read_text(encoding="utf-8"))


def read_cnn_probs(path, label_names=None) -> CnnProbabilityTable:
    path = Path(path)
    return CnnProbabilityTable.from_csv(path.read_text(encoding="utf-8"), label_names, provenance=path.name)


def build_dataset(manifest: DatasetManifest, table: FeatureTable) -> LabeledDataset:
    """Join features with manifest labels and splits (manifest order)."""
    row_of = {i: r for r, i in enumerate(table.image_ids)}
    missing = [e.image_id for e in manifest.entries if e.image_id not in row_of]
    if missing:
        raise ManifestError(f"features missing for image_id={','.join(missing[:5])}")
    labels = manifest.labels
    index = {lab: k for k, lab in enumerate(labels)}
    rows = [row_of[e.image_id] for e in manifest.entries]
    return LabeledDataset(
        table.X[rows],
        [index[e.label] for e in manifest.entries],
        labels,
        [e.split for e in manifest.entries],
        [e.image_id for e in manifest.entries],
    )


def content_hash(*parts) -> str:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            h.update(np.ascontiguousarray(part, dtype=np.float64).tobytes())
        elif isinstance(part, bytes):
            h.update(part)
        else:
            h.update(str(part).encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


# --------------------------------------------------------------------------
# synthetic data

@dataclass
class SynthSpec:
    """Procedural dataset with controllable colour/texture signal.

    ``informative`` selects which cues depend on the class: ``"color"``
    (class-specific hue) and/or ``"texture"`` (class-specific checkerboard
    period from ``texture_periods``, 0 meaning smooth). With probability
    ``texture_confusion[c]`` an image of class ``c`` is drawn with another
    class's texture. The CNN table is correct on class ``c`` with probability
    ``cnn_accuracy[c]``; correct rows put U(0.55, 1) on the predicted class,
    wrong rows U(0.55, 0.8); both bands are configurable.
    """

    n_per_class: int = 50
    n_classes: int = 2
    informative: tuple = ("color", "texture")
    cnn_accuracy: list = None
    texture_periods: list = None
    texture_confusion: list = None
    cnn_confidence_correct: tuple = (0.55, 1.0)
    cnn_confidence_wrong: tuple = (0.55, 0.8)
    texture_amplitude: float = 60.0
    color_strength: float = 60.0
    noise: float = 8.0
    image_size: int = 32
    split_ratios: tuple = DEFAULT_RATIOS
    seed: int = 0

    def __post_init__(self):
        K = self.n_classes
        if K < 2:
            raise BadSpec("n_classes must be >= 2")
        if self.n_per_class < 3:
            raise BadSpec("n_per_class must be >= 3")
        if self.image_size < 2:
            raise BadSpec("image_size must be >= 2")
        bad = set(self.informative) - {"color", "texture"}
        if bad:
            raise BadSpec(f"unknown informative cues {sorted(bad)}")
        self.informative = tuple(self.informative)
        self.cnn_accuracy = self._per_class(self.cnn_accuracy, 0.8, "cnn_accuracy")
        self.texture_periods = [int(p) for p in (self.texture_periods or range(K))]
        self.texture_confusion = self._per_class(self.texture_confusion, 0.0, "texture_confusion")
        if len(self.texture_periods) != K or any(p < 0 for p in self.texture_periods):
            raise BadSpec("texture_periods needs one non-negative period per class")
        for name in ("cnn_confidence_correct", "cnn_confidence_wrong"):
            lo, hi = getattr(self, name)
            if not 0.5 < lo <= hi <= 1.0:
                raise BadSpec(f"{name} must satisfy 0.5 < low <= high <= 1")
            setattr(self, name, (float(lo), float(hi)))
        for name in ("cnn_accuracy", "texture_confusion"):
            if any(not 0.0 <= v <= 1.0 for v in getattr(self, name)):
                raise BadSpec(f"{name} values must lie in [0, 1]")

    def _per_class(self, value, default, name):
        if value is None:
            value = default
        if isinstance(value, (int, float)):
            return [float(value)] * self.n_classes
        value = [float(v) for v in value]
        if len(value) != self.n_classes:
            raise BadSpec(f"{name} needs {self.n_classes} values")
        return value

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise BadSpec(f"unknown synth spec fields {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["informative"] = list(self.informative)
        d["split_ratios"] = list(self.split_ratios)
        d["cnn_confidence_correct"] = list(self.cnn_confidence_correct)
        d["cnn_confidence_wrong"] = list(self.cnn_confidence_wrong)
        return d


def _render(rng, spec: SynthSpec, label):
    s = spec.image_size
    if "color" in spec.informative:
        hue = 2 * math.pi * label / spec.n_classes + rng.normal(0, 0.15)
    else:
        hue = rng.uniform(0, 2 * math.pi)
    base = 128 + spec.color_strength * np.cos(hue + np.array([0.0, -2 * math.pi / 3, 2 * math.pi / 3]))
    img = np.broadcast_to(base, (s, s, 3)).astype(np.float64)

    tex_class = label
    if "texture" in spec.informative and rng.random() < spec.texture_confusion[label]:
        others = [c for c in range(spec.n_classes) if spec.texture_periods[c] != spec.texture_periods[label]]
        if others:
            tex_class = others[rng.integers(len(others))]
    if "texture" in spec.informative:
        period = spec.texture_periods[tex_class]
    else:
        period = spec.texture_periods[rng.integers(spec.n_classes)]
    if period > 0:
        r = np.arange(s)
        checker = ((r[:, None] // period + r[None, :] // period) % 2) * 2.0 - 1.0
        img = img + 0.5 * spec.texture_amplitude * checker[:, :, None]
    img = img + rng.normal(0, spec.noise, size=img.shape)
    return ImageRgb(np.clip(np.floor(img + 0.5), 0, 255).astype(np.uint8))


def synthetic_cnn_probs(labels, n_classes, accuracy, rng, correct_band=(0.55, 1.0), wrong_band=(0.55, 0.8)):
    """Probability rows whose argmax is correct with per-class ``accuracy``.

    The predicted class receives a confidence drawn uniformly from
    ``correct_band`` or ``wrong_band``; the rest is spread over the other
    classes with a flat Dirichlet draw.
    """
    rows = np.empty((len(labels), n_classes))
    for i, y in enumerate(labels):
        correct = rng.random() < accuracy[y]
        if correct:
            pred, conf = y, rng.uniform(*correct_band)
        else:
            pred = [c for c in range(n_classes) if c != y][rng.integers(n_classes - 1)]
            conf = rng.uniform(*wrong_band)
        rest = rng.dirichlet(np.ones(n_classes - 1)) * (1.0 - conf)
        rows[i] = np.insert(rest, pred, conf)
    return rows


@dataclass
class SyntheticDataset:
    images: list
    manifest: DatasetManifest
    cnn_table: CnnProbabilityTable
    spec: SynthSpec


def generate_synthetic(spec: SynthSpec) -> SyntheticDataset:
    if isinstance(spec, dict):
        spec = SynthSpec.from_dict(spec)
    rng = np.random.default_rng(spec.seed)
    labels = [c for c in range(spec.n_classes) for _ in range(spec.n_per_class)]
    names = [f"class_{c}" for c in range(spec.n_classes)]
    images, entries = [], []
    for i, y in enumerate(labels):
        image_id = f"img_{i:05d}"
        images.append(_render(rng, spec, y))
        entries.append(ManifestEntry(image_id, f"images/{image_id}.png", names[y]))
    manifest = auto_split(DatasetManifest(entries), spec.split_ratios, spec.seed)
    probs = synthetic_cnn_probs(labels, spec.n_classes, spec.cnn_accuracy, rng,
                                spec.cnn_confidence_correct, spec.cnn_confidence_wrong)
    table = CnnProbabilityTable(names, {e.image_id: p for e, p in zip(entries, probs)},
                                provenance=f"synthetic(seed={spec.seed})")
    return SyntheticDataset(images, manifest, table, spec)


def write_synthetic(data: SyntheticDataset, out_dir):
    out = Path(out_dir)
    for e, img in zip(data.manifest.entries, data.images):
        atomic_write(out / e.path, encode_png(img))
    atomic_write(out / "manifest.csv", manifest_to_csv(data.manifest))
    atomic_write(out / "cnn_probs.csv", data.cnn_table.to_csv())
    atomic_write(out / "synth_spec.json", json.dumps(data.spec.to_dict(), indent=2) + "\n")
    return out


def synthetic_indicator_dataset(n_per_class=500, n_classes=2, informative="tex_contrast", separation=10.0,
                                noise_columns=True, cnn_accuracy=0.8, seed=0):
    """Indicator-level dataset where a single family carries the class.

    The informative family's columns are ``separation * class + N(0, 1)``.
    Every other column is N(0, 1) noise, or constant zero when
    ``noise_columns`` is False. Returns ``(LabeledDataset, CnnProbabilityTable)``.
    """
    from .ablation import get_family

    rng = np.random.default_rng(seed)
    n = n_per_class * n_classes
    y = np.repeat(np.arange(n_classes), n_per_class)
    X = rng.normal(size=(n, N_FEATURES)) if noise_columns else np.zeros((n, N_FEATURES))
    cols = list(get_family(informative).columns)
    X[:, cols] = separation * y[:, None] + rng.normal(size=(n, len(cols)))
    names = [f"class_{c}" for c in range(n_classes)]
    ids = [f"row_{i:06d}" for i in range(n)]
    entries = [ManifestEntry(i, "", names[c]) for i, c in zip(ids, y)]
    manifest = auto_split(DatasetManifest(entries), DEFAULT_RATIOS, seed)
    acc = [cnn_accuracy] * n_classes if isinstance(cnn_accuracy, (int, float)) else list(cnn_accuracy)
    probs = synthetic_cnn_probs(y, n_classes, acc, rng)
    table = CnnProbabilityTable(names, dict(zip(ids, probs)), provenance=f"synthetic(seed={seed})")
    ds = LabeledDataset(X, y, names, [e.split for e in manifest.entries], ids)
    return ds, table


# --------------------------------------------------------------------------
# orchestration

def extract_manifest(manifest: DatasetManifest, config: RunConfig):
    """Indicator matrix for every manifest image, plus elapsed seconds."""
    loaders = [(lambda p=manifest.resolve(e): load_image(p)) for e in manifest.entries]
    t0 = time.perf_counter()
    X = extract_batch(loaders, config.extraction(), workers=int(config.workers))
    return X, time.perf_counter() - t0


def run_extract(manifest_path, config: RunConfig, out_path):
    manifest = read_manifest(manifest_path)
    X, seconds = extract_manifest(manifest, config)
    text = features_to_csv([e.image_id for e in manifest.entries], [e.label for e in manifest.entries], X)
    atomic_write(out_path, text)
    return X, seconds


def prepare_manifest(manifest_path, config: RunConfig) -> DatasetManifest:
    manifest = read_manifest(manifest_path)
    if not manifest.has_splits:
        manifest = auto_split(manifest, config.split_ratios, config.split_seed)
    manifest.validate_for_training()
    return manifest


def load_dataset(manifest_path, features_path, config: RunConfig):
    manifest = prepare_manifest(manifest_path, config)
    if features_path is not None:
        table = read_features(features_path)
        seconds = 0.0
    else:
        X, seconds = extract_manifest(manifest, config)
        table = FeatureTable([e.image_id for e in manifest.entries], [e.label for e in manifest.entries], X)
    return build_dataset(manifest, table), seconds


def run_train_features(manifest_path, features_path, config: RunConfig, out_path, seed=None):
    ds, _ = load_dataset(manifest_path, features_path, config)
    seed = config.seeds[0] if seed is None else seed
    model = train(config.feature_classifier, ds, config.hp(), seed)
    metrics = {}
    for split in SPLITS:
        X, y = ds.part(split)
        if len(y):
            metrics[split] = weighted_precision(y, model.predict(X), ds.n_classes)
    atomic_write(out_path, dumps_model(model) + "\n")
    return model, metrics


def run_fuse(manifest_path, features_path, cnn_path, config: RunConfig, out_path, seed=None):
    ds, _ = load_dataset(manifest_path, features_path, config)
    cnn = read_cnn_probs(cnn_path, ds.label_names)
    seed = config.seeds[0] if seed is None else seed
    feat_model = train(config.feature_classifier, ds, config.hp(), seed)
    fusion = {kind: train_fusion(kind, cnn, feat_model, ds, config.fusion_split, seed, config.hp())
              for kind in config.fusion_kinds}
    doc = {
        "schema": "statfusion.fusion-model/v1",
        "labels": list(ds.label_names),
        "config": config.to_dict(),
        "feature_model": json.loads(dumps_model(feat_model)),
        "fusion_models": {k: json.loads(dumps_model(m)) for k, m in fusion.items()},
    }
    atomic_write(out_path, json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n")
    return feat_model, fusion


def _inputs_hash(ds: LabeledDataset, cnn: CnnProbabilityTable):
    ids = list(ds.image_ids)
    return content_hash(ds.X, ds.y.astype(np.float64), "|".join(ids), "|".join(map(str, ds.splits)),
                        "|".join(ds.label_names), cnn.matrix(ids))


def run_evaluate(manifest_path, features_path, cnn_path, config: RunConfig):
    ds, seconds = load_dataset(manifest_path, features_path, config)
    cnn = read_cnn_probs(cnn_path, ds.label_names)
    return evaluate(
        ds, cnn, config.seeds,
        feature_kind=config.feature_classifier,
        fusion_kinds=config.fusion_kinds,
        fusion_split=config.fusion_split,
        hyperparams=config.hp(),
        extraction_seconds=seconds,
        config=config.to_dict(),
        input_hash=_inputs_hash(ds, cnn),
    )


def run_ablate(manifest_path, features_path, cnn_path, config: RunConfig):
    ds, _ = load_dataset(manifest_path, features_path, config)
    cnn = read_cnn_probs(cnn_path, ds.label_names)
    return ablation_matrix(
        ds, cnn, config.seeds,
        feature_kind=config.feature_classifier,
        fusion_kinds=config.fusion_kinds,
        fusion_split=config.fusion_split,
        hyperparams=config.hp(),
        histogram=config.histogram_families,
    )
