"""Turning an image into its 54 statistical indicators."""
# %%
import numpy as np

from statfusion import ExtractionConfig, ImageRgb, build_glcm, extract_indicators
from statfusion.indicators import textural_features

rng = np.random.default_rng(0)

# %% A striped red image with a little noise.
stripes = (np.arange(64) // 4 % 2) * 120 + 60
arr = np.zeros((64, 64, 3))
arr[..., 0] = stripes[None, :]
arr[..., 1] = 80
arr[..., 2] = 30
arr += rng.normal(0, 6, arr.shape)
img = ImageRgb(np.clip(arr, 0, 255).astype(np.uint8))

# %% Extraction resizes to 224x224 by default, then computes every family.
vec = extract_indicators(img, ExtractionConfig())
print(f"{len(vec.values)} indicators")
for name in ("R_mean", "R_std", "R_skewness", "G_mean", "ratio_R_G", "diff_R_B"):
    print(f"  {name:<14} {vec[name]:10.4f}")

# %% Histograms are fractions, so every channel sums to one.
hist = [vec[f"R_hist_bin_{b}"] for b in range(1, 6)]
print("R histogram", np.round(hist, 3), "sum", sum(hist))

# %% Texture: vertical stripes give strong horizontal contrast in R only.
for c in "RGB":
    print(f"  {c}_tex_contrast = {vec[f'{c}_tex_contrast']:.3f}   {c}_tex_entropy = {vec[f'{c}_tex_entropy']:.3f}")

# %% The co-occurrence matrix can also be inspected directly.
grid = np.array([[0, 0, 1, 1], [0, 0, 1, 1], [0, 2, 2, 2], [2, 2, 3, 3]])
g = build_glcm(grid, levels=4)
print(np.round(g.p * 24, 3))  # 12 horizontal pairs, counted both ways
names = ["average", "variance", "homogeneity", "contrast", "dissimilarity", "entropy", "second_moment", "correlation"]
print({n: round(float(v), 4) for n, v in zip(names, textural_features(g))})
