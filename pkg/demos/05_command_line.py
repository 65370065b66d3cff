"""The full command-line workflow on a generated dataset, in a temp directory."""
# %%
import json
import tempfile
from pathlib import Path

from statfusion.cli import main

work = Path(tempfile.mkdtemp(prefix="statfusion-demo-"))
(work / "spec.json").write_text(json.dumps({"n_per_class": 20, "n_classes": 3, "image_size": 24, "cnn_accuracy": 0.7}))
(work / "config.json").write_text(json.dumps({"resize": False, "seeds": [0, 1], "hyperparams": {"rf_trees": 50}}))
data = work / "data"

# %% Generate images, a manifest and CNN probabilities.
main(["synth", "--spec", str(work / "spec.json"), "--out", str(data)])

# %% Extract once and reuse the features for every later step.
common = ["--manifest", str(data / "manifest.csv"), "--config", str(work / "config.json")]
main(["extract", *common, "--out", str(work / "features.csv")])
common += ["--features", str(work / "features.csv")]
main(["train-features", *common, "--out", str(work / "feature_model.json")])

cnn = ["--cnn-probs", str(data / "cnn_probs.csv")]
main(["fuse", *common, *cnn, "--out", str(work / "fusion_model.json")])
main(["evaluate", *common, *cnn, "--out", str(work / "report.json")])
main(["ablate", *common, *cnn, "--out", str(work / "ablation.csv")])

print("outputs in", work)
for p in sorted(work.iterdir()):
    print("  ", p.name)
