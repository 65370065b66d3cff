import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reference import weighted_precision_ref
from statfusion.classifiers import Hyperparams, LabeledDataset, fit_classifier, train
from statfusion.errors import (
    DimensionMismatch,
    EmptyInput,
    InvalidProbabilityRow,
    MissingProbabilities,
    SingleClassSplit,
    SplitError,
)
from statfusion.fusion import (
    CnnProbabilityTable,
    confusion_matrix,
    evaluate,
    fuse_average,
    fusion_inputs,
    train_fusion,
    weighted_precision,
)

FAST = Hyperparams(rf_trees=10)


def test_fuse_average_examples():
    np.testing.assert_array_equal(fuse_average([1, 0], [0, 1]), [0.5, 0.5])
    p = np.array([0.2, 0.3, 0.5])
    np.testing.assert_array_equal(fuse_average(p, p), p)
    np.testing.assert_allclose(fuse_average([0.8, 0.2], [0.4, 0.6]), [0.6, 0.4], rtol=0, atol=1e-15)
    with pytest.raises(DimensionMismatch):
        fuse_average([1, 0], [1, 0, 0])


prob_vectors = st.integers(2, 8).flatmap(
    lambda k: st.tuples(
        st.lists(st.floats(0, 1), min_size=k, max_size=k).filter(lambda v: sum(v) > 0),
        st.lists(st.floats(0, 1), min_size=k, max_size=k).filter(lambda v: sum(v) > 0),
    )
)


@given(prob_vectors)
def test_fuse_average_valid(pair):
    a, b = (np.asarray(v) / sum(v) for v in pair)
    out = fuse_average(a, b)
    assert np.all(out >= 0)
    assert abs(out.sum() - 1) <= 1e-12


def test_weighted_precision_examples():
    assert weighted_precision([0, 1, 2], [0, 1, 2], 3) == 1.0
    assert weighted_precision([0, 0, 1, 1], [0, 1, 1, 1], 2) == 5 / 6
    assert weighted_precision([0, 0, 1, 1], [0, 0, 0, 0], 2) == 0.25
    with pytest.raises(EmptyInput):
        weighted_precision([], [], 2)


labels = st.integers(1, 6).flatmap(
    lambda k: st.integers(1, 50).flatmap(
        lambda n: st.tuples(
            st.just(k),
            st.lists(st.integers(0, k - 1), min_size=n, max_size=n),
            st.lists(st.integers(0, k - 1), min_size=n, max_size=n),
        )
    )
)


@given(labels)
@settings(max_examples=300)
def test_weighted_precision_matches_brute_force(case):
    k, y_true, y_pred = case
    assert weighted_precision(y_true, y_pred, k) == weighted_precision_ref(y_true, y_pred, k)


def test_confusion_orientation():
    cm = confusion_matrix([0, 0, 1], [1, 0, 1], 2)
    assert cm.tolist() == [[1, 1], [0, 1]]


def _table_text(rows, labels=("a", "b")):
    lines = ["image_id," + ",".join(labels)]
    lines += [f"{i}," + ",".join(str(v) for v in r) for i, r in rows]
    return "\n".join(lines) + "\n"


def test_cnn_table_parse_and_renormalise():
    t = CnnProbabilityTable.from_csv(_table_text([("x", [0.7, 0.30005]), ("y", [0.0, 1.0])]), ["a", "b"])
    m = t.matrix(["x", "y"])
    assert abs(m[0].sum() - 1) <= 1e-15
    assert m[0].argmax() == 0
    assert m[1].tolist() == [0.0, 1.0]


def test_cnn_table_rejects_bad_rows():
    with pytest.raises(InvalidProbabilityRow, match="image_id=x"):
        CnnProbabilityTable.from_csv(_table_text([("x", [0.5, 0.3])]), ["a", "b"])
    with pytest.raises(InvalidProbabilityRow):
        CnnProbabilityTable.from_csv(_table_text([("x", [1.2, -0.2])]), ["a", "b"])
    with pytest.raises(InvalidProbabilityRow, match="do not match"):
        CnnProbabilityTable.from_csv(_table_text([("x", [0.5, 0.5])], ("b", "a")), ["a", "b"])
    with pytest.raises(InvalidProbabilityRow, match="duplicate"):
        CnnProbabilityTable.from_csv(_table_text([("x", [0.5, 0.5]), ("x", [0.5, 0.5])]), ["a", "b"])
    with pytest.raises(MissingProbabilities) as err:
        CnnProbabilityTable(["a", "b"], {"x": [0.5, 0.5]}).matrix(["x", "q"])
    assert err.value.image_ids == ["q"]


@given(st.lists(st.lists(st.floats(0.01, 1), min_size=3, max_size=3), min_size=1, max_size=20),
       st.floats(-9e-5, 9e-5))
def test_renormalisation_keeps_argmax(rows, wobble):
    rows = [np.asarray(r) / sum(r) for r in rows]
    probs = {str(i): r * (1 + wobble) for i, r in enumerate(rows)}
    table = CnnProbabilityTable(["a", "b", "c"], probs)
    m = table.matrix(list(probs))
    assert np.array_equal(m.argmax(axis=1), np.array([r.argmax() for r in rows]))


def _dataset(rng, n=120, k=2):
    y = np.arange(n) % k
    X = rng.normal(size=(n, 5)) + y[:, None] * 0.5
    splits = np.array(["train"] * int(0.7 * n) + ["valid"] * int(0.1 * n) + ["test"] * (n - int(0.8 * n)))
    ids = [f"i{j}" for j in range(n)]
    return LabeledDataset(X, y, [f"c{c}" for c in range(k)], splits, ids)


def _onehot_table(ds, labels=None):
    labels = ds.y if labels is None else labels
    eye = np.eye(ds.n_classes)
    return CnnProbabilityTable(ds.label_names, {i: eye[c] for i, c in zip(ds.image_ids, labels)})


def test_fusion_inputs_layout():
    z = fusion_inputs([[0.9, 0.1]], [[0.2, 0.8]])
    assert z.tolist() == [[0.9, 0.1, 0.2, 0.8]]


@pytest.mark.parametrize("kind", ["knn", "lda", "logreg", "rf"])
def test_identical_oracles_fuse_perfectly(kind, rng):
    ds = _dataset(rng)
    # a feature "model" that is itself an oracle: features = one-hot labels
    oracle_ds = LabeledDataset(np.eye(2)[ds.y] + 0.0, ds.y, ds.label_names, ds.splits, ds.image_ids)
    feat = train("knn", oracle_ds, Hyperparams(knn_k=1))
    fused = train_fusion(kind, _onehot_table(ds), feat, oracle_ds, "train", 0, FAST)
    X_te, y_te = oracle_ds.part("test")
    z = fusion_inputs(_onehot_table(ds).matrix(ds.ids("test")), feat.predict_proba(X_te))
    assert weighted_precision(y_te, fused.predict(z), 2) == 1.0


def test_collinear_halves_stay_finite(rng):
    ds = _dataset(rng)
    feat = train("lda", ds)
    X_te, _ = ds.part("test")
    # CNN table equal to the feature model's own output: both halves identical
    table_full = CnnProbabilityTable(
        ds.label_names, {i: q for i, q in zip(ds.image_ids, feat.predict_proba(ds.X))})
    for kind in ("lda", "logreg"):
        fused = train_fusion(kind, table_full, feat, ds, "train", 0)
        out = fused.predict_proba(fusion_inputs(table_full.matrix(ds.ids("test")), feat.predict_proba(X_te)))
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out.sum(axis=1), 1, atol=1e-9)


def test_dominant_cnn_not_lost(rng):
    ds = _dataset(rng)
    noise = LabeledDataset(rng.normal(size=ds.X.shape), ds.y, ds.label_names, ds.splits, ds.image_ids)
    table = _onehot_table(ds)
    feat = train("lda", noise)
    X_te, y_te = noise.part("test")
    cnn_only = weighted_precision(y_te, table.matrix(ds.ids("test")).argmax(axis=1), 2)
    for kind in ("knn", "lda", "logreg", "rf"):
        fused = train_fusion(kind, table, feat, noise, "train", 0, FAST)
        z = fusion_inputs(table.matrix(ds.ids("test")), feat.predict_proba(X_te))
        assert weighted_precision(y_te, fused.predict(z), 2) >= cnn_only - 0.01


def test_train_fusion_errors(rng):
    ds = _dataset(rng)
    feat = train("lda", ds)
    partial = CnnProbabilityTable(ds.label_names, {i: [0.5, 0.5] for i in ds.ids("train")})
    with pytest.raises(MissingProbabilities):
        train_fusion("lda", partial, feat, ds, "train")
    with pytest.raises(SplitError):
        train_fusion("lda", _onehot_table(ds), feat, ds, "test")
    single = LabeledDataset(ds.X, np.where(ds.splits == "valid", 0, ds.y), ds.label_names, ds.splits, ds.image_ids)
    with pytest.raises(SingleClassSplit):
        train_fusion("lda", _onehot_table(single), feat, single, "valid")


def test_evaluate_cnn_oracle_and_consistency(rng):
    ds = _dataset(rng)
    report = evaluate(ds, _onehot_table(ds), [0, 1, 2], feature_kind="logreg", hyperparams=FAST)
    assert report["cnn_alone"].mean == 1.0 and report["cnn_alone"].std == 0.0
    for name in ("features_alone", "avg_fusion", "fused_knn", "fused_lda", "fused_logreg"):
        assert report[name].std == 0.0
    X_te, y_te = ds.part("test")
    direct = weighted_precision(y_te, train("logreg", ds).predict(X_te), 2)
    assert report["features_alone"].per_seed == [direct] * 3
    d = report.to_dict()
    for name, m in d["methods"].items():
        assert sum(c["support"] for c in m["per_class"]) == report.n_test
        assert 0 <= m["weighted_precision_mean"] <= 1
    assert all(v >= 0 for k, v in d["timing"].items() if k.endswith("minutes"))
    assert "timing" not in report.to_dict(include_timing=False)


def test_evaluate_rf_varies_with_seed(rng):
    ds = _dataset(rng, n=200)
    report = evaluate(ds, _onehot_table(ds), [0, 1, 2], feature_kind="rf", fusion_kinds=("rf",), hyperparams=FAST)
    assert len(set(report["features_alone"].per_seed)) >= 1
    assert report["fused_rf"].mean == pytest.approx(np.mean(report["fused_rf"].per_seed))


def test_evaluate_requires_seeds(rng):
    ds = _dataset(rng)
    with pytest.raises(EmptyInput):
        evaluate(ds, _onehot_table(ds), [])
