"""The 54 spectral and textural indicators of an RGB image.

Layout: for each channel R, G, B the sixteen per-channel features
(mean, std, skewness, five histogram fractions, eight GLCM textures), then
the three channel-mean differences and the three channel-mean ratios for the
pairs (R,G), (R,B), (G,B).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import BadChannelIndex
from .glcm import DEFAULT_LEVELS, HORIZONTAL, Glcm, channel_glcm
from .imageio import WORKING_SIDE, ImageRgb, resize_bilinear

CHANNELS = ("R", "G", "B")
CHANNEL_PAIRS = ((0, 1), (0, 2), (1, 2))
HIST_BINS = 5
TEXTURE_NAMES = (
    "tex_average",
    "tex_variance",
    "tex_homogeneity",
    "tex_contrast",
    "tex_dissimilarity",
    "tex_entropy",
    "tex_second_moment",
    "tex_correlation",
)
PER_CHANNEL = ("mean", "std", "skewness") + tuple(f"hist_bin_{i}" for i in range(1, HIST_BINS + 1)) + TEXTURE_NAMES


def _feature_names():
    names = [f"{c}_{feat}" for c in CHANNELS for feat in PER_CHANNEL]
    names += [f"diff_{CHANNELS[a]}_{CHANNELS[b]}" for a, b in CHANNEL_PAIRS]
    names += [f"ratio_{CHANNELS[a]}_{CHANNELS[b]}" for a, b in CHANNEL_PAIRS]
    return tuple(names)


FEATURE_NAMES = _feature_names()
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 54


@dataclass(frozen=True)
class ExtractionConfig:
    levels: int = DEFAULT_LEVELS
    resize: bool = True
    side: int = WORKING_SIDE
    offsets: tuple = HORIZONTAL


@dataclass(frozen=True, eq=False)
class IndicatorVector:
    values: np.ndarray
    names: tuple = FEATURE_NAMES

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def as_dict(self):
        return dict(zip(self.names, self.values.tolist()))


def _check_channel(channel):
    if channel not in (0, 1, 2):
        raise BadChannelIndex(f"channel must be 0, 1 or 2, got {channel!r}")


def spectral_stats(img: ImageRgb, channel: int):
    """Population mean, standard deviation and skewness of one channel.

    Skewness is 0 for a constant channel.
    """
    _check_channel(channel)
    x = img.channel(channel).astype(np.float64).ravel()
    mean = x.mean()
    dev = x - mean
    sq = dev * dev
    var = np.mean(sq)
    std = float(np.sqrt(var))
    if std == 0.0:
        return float(mean), 0.0, 0.0
    skew = float(np.mean(sq * dev) / std ** 3)
    return float(mean), std, skew


def histogram5(img: ImageRgb, channel: int) -> np.ndarray:
    """Fractions of pixels in five equal-width bins over [0, 256).

    Bin of value v is ``min(floor(v * 5 / 256), 4)``: [0,51], [52,102],
    [103,153], [154,204], [205,255].
    """
    _check_channel(channel)
    x = img.channel(channel).astype(np.int64).ravel()
    bins = np.minimum(x * HIST_BINS // 256, HIST_BINS - 1)
    return np.bincount(bins, minlength=HIST_BINS) / x.size


def channel_difference(img: ImageRgb, c1: int, c2: int) -> float:
    return spectral_stats(img, c1)[0] - spectral_stats(img, c2)[0]


def channel_ratio(img: ImageRgb, c1: int, c2: int) -> float:
    """Ratio of channel means; 0 when the denominator mean is 0."""
    num = spectral_stats(img, c1)[0]
    den = spectral_stats(img, c2)[0]
    return num / den if den != 0 else 0.0


def textural_features(g: Glcm) -> np.ndarray:
    """Eight GLCM texture statistics, evaluated with grey values 1..Z.

    Returns sum average, variance, homogeneity, contrast, dissimilarity,
    entropy (natural log), angular second moment and correlation.
    """
    p = np.asarray(g.p, dtype=np.float64)
    z = g.levels
    values = np.arange(1, z + 1, dtype=np.float64)
    a = values[:, None]
    b = values[None, :]

    # sum average: sum over k = a + b in 2..2Z of k * P(a + b = k)
    k_index = (a + b).astype(np.intp).ravel()
    p_sum = np.bincount(k_index, weights=p.ravel(), minlength=2 * z + 1)
    f1 = float(np.arange(2 * z + 1) @ p_sum)

    mu_x = g.mu_x + 1.0
    mu_y = g.mu_y + 1.0
    f2 = float(np.sum((a - mu_x) ** 2 * p))
    diff = a - b
    f3 = float(np.sum(p / (1.0 + diff * diff)))
    f4 = float(np.sum(p * diff * diff))
    f5 = float(np.sum(p * np.abs(diff)))
    nz = p[p > 0]
    f6 = float(-np.sum(nz * np.log(nz)))
    f7 = float(np.sum(p * p))
    denom = g.sigma_x * g.sigma_y
    if denom <= 1e-12:
        f8 = 0.0
    else:
        f8 = float(np.clip((np.sum(a * b * p) - mu_x * mu_y) / denom, -1.0, 1.0))
    return np.array([f1, f2, f3, f4, f5, f6, f7, f8])


def extract_indicators(img: ImageRgb, config: ExtractionConfig | None = None) -> IndicatorVector:
    config = config or ExtractionConfig()
    if config.resize:
        img = resize_bilinear(img, config.side)
    out = np.empty(N_FEATURES)
    means = []
    pos = 0
    for c in range(3):
        mean, std, skew = spectral_stats(img, c)
        means.append(mean)
        out[pos:pos + 3] = (mean, std, skew)
        out[pos + 3:pos + 8] = histogram5(img, c)
        out[pos + 8:pos + 16] = textural_features(channel_glcm(img, c, config.levels, config.offsets))
        pos += 16
    for a, b in CHANNEL_PAIRS:
        out[pos] = means[a] - means[b]
        pos += 1
    for a, b in CHANNEL_PAIRS:
        out[pos] = means[a] / means[b] if means[b] != 0 else 0.0
        pos += 1
    out.setflags(write=False)
    return IndicatorVector(out)


def extract_batch(images, config: ExtractionConfig | None = None, workers: int = 1) -> np.ndarray:
    """Indicator matrix of shape ``(len(images), 54)``, rows in input order.

    ``images`` may hold ImageRgb objects or zero-argument loaders returning one.
    """
    config = config or ExtractionConfig()

    def one(item):
        img = item() if callable(item) else item
        return extract_indicators(img, config).values

    items = list(images)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, items))
    else:
        rows = [one(item) for item in items]
    if not rows:
        return np.empty((0, N_FEATURES))
    return np.vstack(rows)
