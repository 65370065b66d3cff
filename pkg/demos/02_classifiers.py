"""The four trainable classifiers on a small Gaussian problem, plus persistence."""
# %%
import numpy as np

from statfusion import dumps_model, fit_classifier, loads_model

rng = np.random.default_rng(1)

# %% Three classes in 6 dimensions, one column constant on purpose.
n = 300
y = np.repeat([0, 1, 2], n // 3)
X = rng.normal(size=(n, 6))
X[:, 0] += 2.5 * y
X[:, 1] -= 1.5 * (y == 2)
X[:, 5] = 7.0
perm = rng.permutation(n)
tr, te = perm[:200], perm[200:]

# %% Every model standardises internally; the constant column is harmless.
hp = {"rf_trees": 100}
for kind in ("knn", "lda", "logreg", "rf"):
    model = fit_classifier(kind, X[tr], y[tr], 3, hp, seed=0)
    acc = np.mean(model.predict(X[te]) == y[te])
    print(f"{kind:<7} test accuracy {acc:.3f}")

# %% Models round-trip through JSON bit for bit.
text = dumps_model(model)
again = loads_model(text)
same = np.array_equal(again.predict_proba(X[te]), model.predict_proba(X[te]))
print(f"rf JSON is {len(text) / 1024:.0f} KiB; reloaded predictions identical: {same}")
