"""Probabilistic classifiers used for the indicator stage and the fusion stage.

Every model standardises its inputs with statistics from its own training
rows, exposes ``predict_proba`` returning rows that sum to one, and can be
serialised to a JSON-compatible dict that round-trips bit-exactly.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_softmax, logsumexp, softmax

from .errors import (
    DimensionMismatch,
    EmptySplit,
    ModelFormatError,
    NonFiniteFeature,
    SingleClassSplit,
    UnknownClassifier,
)

SCHEMA_ID = "statfusion.model/v1"
KINDS = ("knn", "lda", "logreg", "rf", "average")
TRAINABLE_KINDS = ("knn", "lda", "logreg", "rf")
SPLITS = ("train", "valid", "test")


@dataclass
class Hyperparams:
    knn_k: int = 5
    logreg_c: float = 1.0
    logreg_max_iter: int = 1000
    logreg_tol: float = 1e-6
    lda_reg: float = 1e-6
    rf_trees: int = 500
    rf_max_features: int | None = None  # None -> ceil(sqrt(d))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in (d or {}).items() if k in known})


@dataclass(eq=False)
class LabeledDataset:
    """Feature matrix with class indices, label names and per-row split tags."""

    X: np.ndarray
    y: np.ndarray
    label_names: tuple
    splits: np.ndarray = None
    image_ids: tuple = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.intp)
        self.label_names = tuple(self.label_names)
        if self.X.ndim != 2 or self.X.shape[1] == 0:
            raise DimensionMismatch(f"X must be a non-empty 2-D matrix, got shape {self.X.shape}")
        if self.y.shape != (self.X.shape[0],):
            raise DimensionMismatch("y length does not match X rows")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= len(self.label_names)):
            raise DimensionMismatch("class index out of range for label_names")
        if self.splits is None:
            self.splits = np.full(self.X.shape[0], "train")
        self.splits = np.asarray(self.splits, dtype=object)
        if self.image_ids is None:
            self.image_ids = tuple(str(i) for i in range(self.X.shape[0]))
        self.image_ids = tuple(self.image_ids)

    @property
    def n_classes(self):
        return len(self.label_names)

    def mask(self, split):
        return self.splits == split

    def part(self, split):
        m = self.mask(split)
        return self.X[m], self.y[m]

    def ids(self, split):
        m = self.mask(split)
        return [i for i, keep in zip(self.image_ids, m) if keep]

    def select_columns(self, columns):
        return LabeledDataset(self.X[:, list(columns)], self.y, self.label_names, self.splits, self.image_ids)


# --------------------------------------------------------------------------
# standardisation

@dataclass(eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


def standardize_fit(X_train) -> Standardizer:
    """Per-feature mean and population std; zero-variance columns get scale 1."""
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySplit("cannot fit a standardizer on an empty training split")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    tiny = 1e-12 * np.maximum(1.0, np.abs(mean))
    scale = np.where(std > tiny, std, 1.0)
    return Standardizer(mean, scale)


def standardize_apply(st: Standardizer, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != st.mean.shape[0]:
        raise DimensionMismatch(f"expected {st.mean.shape[0]} columns, got shape {X.shape}")
    return (X - st.mean) / st.scale


# --------------------------------------------------------------------------
# models

class TrainedClassifier:
    kind = None

    def __init__(self, standardizer, n_classes, seed=0, hyperparams=None, label_names=None):
        self.standardizer = standardizer
        self.n_classes = int(n_classes)
        self.seed = int(seed)
        self.hyperparams = hyperparams or Hyperparams()
        self.label_names = tuple(label_names) if label_names is not None else tuple(str(i) for i in range(n_classes))

    @property
    def n_features(self):
        return int(self.standardizer.mean.shape[0])

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionMismatch(f"{self.kind} model expects {self.n_features} columns, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise NonFiniteFeature("input contains NaN or infinite values")
        return standardize_apply(self.standardizer, X)

    def predict_proba(self, X) -> np.ndarray:
        return self._proba(self._prepare(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def _proba(self, Z):
        raise NotImplementedError

    def _params(self):
        raise NotImplementedError

    def to_dict(self):
        return {
            "schema": SCHEMA_ID,
            "kind": self.kind,
            "n_classes": self.n_classes,
            "seed": self.seed,
            "label_names": list(self.label_names),
            "hyperparams": asdict(self.hyperparams),
            "standardizer": self.standardizer.to_dict(),
            "params": self._params(),
        }

    @classmethod
    def _from_params(cls, params, **common):
        raise NotImplementedError


class KnnClassifier(TrainedClassifier):
    """k-nearest neighbours with vote-fraction posteriors.

    Distance ties are resolved in favour of the lower training row index.
    """

    kind = "knn"

    def __init__(self, X_train, y_train, **common):
        super().__init__(**common)
        self.X_train = np.asarray(X_train, dtype=np.float64)
        self.y_train = np.asarray(y_train, dtype=np.intp)

    def _proba(self, Z):
        k = min(self.hyperparams.knn_k, self.X_train.shape[0])
        out = np.empty((Z.shape[0], self.n_classes))
        for start in range(0, Z.shape[0], 256):
            block = Z[start:start + 256]
            d2 = np.zeros((block.shape[0], self.X_train.shape[0]))
            for j in range(block.shape[1]):
                diff = block[:, j, None] - self.X_train[None, :, j]
                d2 += diff * diff
            nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
            labels = self.y_train[nearest]
            for c in range(self.n_classes):
                out[start:start + block.shape[0], c] = np.count_nonzero(labels == c, axis=1) / k
        return out

    def _params(self):
        return {"X_train": self.X_train.tolist(), "y_train": self.y_train.tolist()}

    @classmethod
    def _from_params(cls, params, **common):
        X = np.asarray(params["X_train"], dtype=np.float64).reshape(len(params["y_train"]), -1)
        return cls(X, np.asarray(params["y_train"], dtype=np.intp), **common)


class LdaClassifier(TrainedClassifier):
    """Gaussian classes with a shared, ridge-regularised covariance."""

    kind = "lda"

    def __init__(self, coef, intercept, **common):
        super().__init__(**common)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = np.asarray(intercept, dtype=np.float64)

    @classmethod
    def fit(cls, Z, y, **common):
        n, d = Z.shape
        K = common["n_classes"]
        hp = common["hyperparams"]
        counts = np.bincount(y, minlength=K)
        means = np.zeros((K, d))
        for c in range(K):
            if counts[c]:
                means[c] = Z[y == c].mean(axis=0)
        centred = Z - means[y]
        cov = centred.T @ centred / n
        trace = float(np.trace(cov))
        lam = hp.lda_reg * trace / d if trace > 0 else hp.lda_reg
        cov[np.diag_indices(d)] += lam
        coef = np.linalg.solve(cov, means.T)  # d x K
        with np.errstate(divide="ignore"):
            log_prior = np.log(counts / n)
        intercept = -0.5 * np.einsum("kd,dk->k", means, coef) + log_prior
        return cls(coef, intercept, **common)

    def _proba(self, Z):
        return softmax(Z @ self.coef + self.intercept, axis=1)

    def _params(self):
        # -inf marks classes absent from training
        return {"coef": self.coef.tolist(), "intercept": [x if np.isfinite(x) else None for x in self.intercept.tolist()]}

    @classmethod
    def _from_params(cls, params, **common):
        intercept = [(-np.inf if x is None else x) for x in params["intercept"]]
        coef = np.asarray(params["coef"], dtype=np.float64).reshape(-1, len(intercept))
        return cls(coef, intercept, **common)


class LogregClassifier(TrainedClassifier):
    """Multinomial logistic regression, L2-penalised, fitted with L-BFGS.

    Objective: ``C * sum(cross_entropy) + 0.5 * ||W||^2``; the intercept is
    not penalised.
    """

    kind = "logreg"

    def __init__(self, coef, intercept, n_iter=0, **common):
        super().__init__(**common)
        self.coef = np.asarray(coef, dtype=np.float64)
        self.intercept = np.asarray(intercept, dtype=np.float64)
        self.n_iter = int(n_iter)

    @classmethod
    def fit(cls, Z, y, **common):
        n, d = Z.shape
        K = common["n_classes"]
        hp = common["hyperparams"]
        onehot = np.zeros((n, K))
        onehot[np.arange(n), y] = 1.0
        C = float(hp.logreg_c)

        def objective(theta):
            W = theta[: d * K].reshape(d, K)
            b = theta[d * K:]
            logits = Z @ W + b
            lse = logsumexp(logits, axis=1)
            loss = C * float(np.sum(lse - np.sum(logits * onehot, axis=1))) + 0.5 * float(np.sum(W * W))
            resid = C * (np.exp(logits - lse[:, None]) - onehot)
            grad = np.concatenate([(Z.T @ resid + W).ravel(), resid.sum(axis=0)])
            return loss, grad

        res = minimize(
            objective,
            np.zeros(d * K + K),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": hp.logreg_max_iter, "gtol": hp.logreg_tol, "ftol": 0.0, "maxcor": 20},
        )
        theta = res.x
        if not np.all(np.isfinite(theta)):
            raise NonFiniteFeature("logistic regression diverged")
        return cls(theta[: d * K].reshape(d, K), theta[d * K:], n_iter=res.nit, **common)

    def _proba(self, Z):
        return softmax(Z @ self.coef + self.intercept, axis=1)

    def _params(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept.tolist(), "n_iter": self.n_iter}

    @classmethod
    def _from_params(cls, params, **common):
        intercept = params["intercept"]
        coef = np.asarray(params["coef"], dtype=np.float64).reshape(-1, len(intercept))
        return cls(coef, intercept, n_iter=params.get("n_iter", 0), **common)


@dataclass(eq=False)
class Tree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # (n_nodes, K) class frequencies

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
        }

    @classmethod
    def from_dict(cls, d, n_classes):
        return cls(
            np.asarray(d["feature"], dtype=np.intp),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.intp),
            np.asarray(d["right"], dtype=np.intp),
            np.asarray(d["value"], dtype=np.float64).reshape(-1, n_classes),
        )


def _best_split(Xn, yn, features, n_classes):
    """Lowest weighted-Gini split over ``features``; None if no feature varies."""
    n = Xn.shape[0]
    cols = Xn[:, features]
    order = np.argsort(cols, axis=0, kind="stable")
    xs = np.take_along_axis(cols, order, axis=0)
    ys = yn[order]
    left = np.cumsum(ys[:, :, None] == np.arange(n_classes), axis=0)[:-1].astype(np.float64)
    total = left[-1] + (ys[-1][:, None] == np.arange(n_classes))
    right = total[None] - left
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    n_right = n - n_left
    score = (n_left - np.sum(left * left, axis=2) / n_left) + (n_right - np.sum(right * right, axis=2) / n_right)
    valid = xs[:-1] < xs[1:]
    if not valid.any():
        return None
    score = np.where(valid, score, np.inf)
    # column-major search so ties go to the earlier candidate feature
    flat = int(np.argmin(score.T))
    j, i = divmod(flat, n - 1)
    lo, hi = xs[i, j], xs[i + 1, j]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return int(features[j]), float(thr)


def grow_tree(X, y, n_classes, max_features, rng) -> Tree:
    """Grow one unpruned Gini tree on a bootstrap sample of ``(X, y)``."""
    n, d = X.shape
    sample = rng.integers(0, n, size=n)
    Xb, yb = X[sample], y[sample]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(idx):
        counts = np.bincount(yb[idx], minlength=n_classes)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1, counts

    root, root_counts = new_node(np.arange(n))
    stack = [(root, np.arange(n), root_counts)]
    while stack:
        node, idx, counts = stack.pop()
        if idx.size < 2 or np.count_nonzero(counts) <= 1:
            continue
        perm = rng.permutation(d)
        split = _best_split(Xb[idx], yb[idx], perm[:max_features], n_classes)
        if split is None and max_features < d:
            split = _best_split(Xb[idx], yb[idx], perm[max_features:], n_classes)
        if split is None:
            continue
        f, thr = split
        go_left = Xb[idx, f] <= thr
        l_idx, r_idx = idx[go_left], idx[~go_left]
        l_node, l_counts = new_node(l_idx)
        r_node, r_counts = new_node(r_idx)
        feature[node], threshold[node], left[node], right[node] = f, thr, l_node, r_node
        stack.append((r_node, r_idx, r_counts))
        stack.append((l_node, l_idx, l_counts))
    return Tree(
        np.asarray(feature, dtype=np.intp),
        np.asarray(threshold, dtype=np.float64),
        np.asarray(left, dtype=np.intp),
        np.asarray(right, dtype=np.intp),
        np.vstack(value),
    )


def tree_rng(seed, tree_index):
    return np.random.default_rng([int(seed), int(tree_index)])


class ForestClassifier(TrainedClassifier):
    """Bagged Gini trees; the posterior is the mean of leaf class frequencies."""

    kind = "rf"

    def __init__(self, trees, **common):
        super().__init__(**common)
        self.trees = list(trees)
        self._pack()

    def _pack(self):
        offsets = np.cumsum([0] + [t.feature.size for t in self.trees[:-1]])
        self._roots = offsets.astype(np.intp)
        self._feature = np.concatenate([t.feature for t in self.trees])
        self._threshold = np.concatenate([t.threshold for t in self.trees])
        self._left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offsets)])
        self._right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offsets)])
        self._value = np.vstack([t.value for t in self.trees])

    @classmethod
    def fit(cls, Z, y, **common):
        hp = common["hyperparams"]
        d = Z.shape[1]
        m = hp.rf_max_features or math.ceil(math.sqrt(d))
        m = max(1, min(int(m), d))
        trees = [grow_tree(Z, y, common["n_classes"], m, tree_rng(common["seed"], t)) for t in range(hp.rf_trees)]
        return cls(trees, **common)

    def _proba(self, Z):
        n = Z.shape[0]
        node = np.broadcast_to(self._roots, (n, self._roots.size)).copy()
        rows = np.arange(n)[:, None]
        while True:
            f = self._feature[node]
            internal = f >= 0
            if not internal.any():
                break
            go_left = Z[rows, np.where(internal, f, 0)] <= self._threshold[node]
            node = np.where(internal, np.where(go_left, self._left[node], self._right[node]), node)
        return self._value[node].mean(axis=1)

    def _params(self):
        return {"trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def _from_params(cls, params, **common):
        return cls([Tree.from_dict(t, common["n_classes"]) for t in params["trees"]], **common)


class AverageClassifier(TrainedClassifier):
    """Untrained fusion rule: mean of the two probability halves of each row."""

    kind = "average"

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != 2 * self.n_classes:
            raise DimensionMismatch(f"average fusion expects {2 * self.n_classes} columns, got shape {X.shape}")
        return X

    def _proba(self, Z):
        K = self.n_classes
        return fuse_rows(Z[:, :K], Z[:, K:])

    def _params(self):
        return {}

    @classmethod
    def _from_params(cls, params, **common):
        return cls(**common)


def fuse_rows(p_a, p_b):
    return (np.asarray(p_a, dtype=np.float64) + np.asarray(p_b, dtype=np.float64)) / 2.0


_MODEL_CLASSES = {cls.kind: cls for cls in (KnnClassifier, LdaClassifier, LogregClassifier, ForestClassifier, AverageClassifier)}


# --------------------------------------------------------------------------
# public training / persistence API

def _validate_training(X, y, n_classes):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptySplit("training split is empty")
    if X.shape[1] == 0:
        raise DimensionMismatch("training data has no feature columns")
    if y.shape != (X.shape[0],):
        raise DimensionMismatch("y length does not match X rows")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise NonFiniteFeature(f"non-finite training value at row {bad[0]}, column {bad[1]}")
    if y.min() < 0 or y.max() >= n_classes:
        raise DimensionMismatch("class index out of range")
    if np.unique(y).size < 2:
        raise SingleClassSplit("training split contains fewer than two classes")
    return X, y


def fit_classifier(kind, X, y, n_classes, hyperparams=None, seed=0, label_names=None) -> TrainedClassifier:
    """Train a classifier of ``kind`` on raw (unstandardised) features."""
    if kind not in _MODEL_CLASSES:
        raise UnknownClassifier(f"unknown classifier kind {kind!r}; expected one of {KINDS}")
    hp = hyperparams if isinstance(hyperparams, Hyperparams) else Hyperparams.from_dict(hyperparams)
    common = dict(n_classes=n_classes, seed=seed, hyperparams=hp, label_names=label_names)
    if kind == "average":
        X = np.asarray(X, dtype=np.float64)
        d = X.shape[1]
        return AverageClassifier(standardizer=Standardizer(np.zeros(d), np.ones(d)), **common)
    X, y = _validate_training(X, y, n_classes)
    st = standardize_fit(X)
    Z = standardize_apply(st, X)
    common["standardizer"] = st
    if kind == "knn":
        return KnnClassifier(Z, y, **common)
    return _MODEL_CLASSES[kind].fit(Z, y, **common)


def train(kind, dataset: LabeledDataset, hyperparams=None, seed=0, split="train") -> TrainedClassifier:
    X, y = dataset.part(split)
    if X.shape[0] == 0:
        raise EmptySplit(f"{split} split is empty")
    return fit_classifier(kind, X, y, dataset.n_classes, hyperparams, seed, dataset.label_names)


def predict_proba(model: TrainedClassifier, X) -> np.ndarray:
    return model.predict_proba(X)


def model_from_dict(d) -> TrainedClassifier:
    if d.get("schema") != SCHEMA_ID:
        raise ModelFormatError(f"unsupported model schema {d.get('schema')!r}")
    kind = d.get("kind")
    if kind not in _MODEL_CLASSES:
        raise UnknownClassifier(f"unknown classifier kind {kind!r}")
    common = dict(
        standardizer=Standardizer.from_dict(d["standardizer"]),
        n_classes=d["n_classes"],
        seed=d["seed"],
        hyperparams=Hyperparams.from_dict(d["hyperparams"]),
        label_names=d["label_names"],
    )
    return _MODEL_CLASSES[kind]._from_params(d["params"], **common)


def dumps_model(model: TrainedClassifier) -> str:
    return json.dumps(model.to_dict(), allow_nan=False, separators=(",", ":"))


def loads_model(text: str) -> TrainedClassifier:
    try:
        return model_from_dict(json.loads(text))
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
