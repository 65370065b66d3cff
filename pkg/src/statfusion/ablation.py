"""Leave-one-indicator-family-out ablation."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .classifiers import TRAINABLE_KINDS, LabeledDataset
from .errors import EmptyInput, UnknownFamily
from .fusion import EvaluationReport, evaluate, method_names
from .indicators import FEATURE_NAMES, HIST_BINS, N_FEATURES, TEXTURE_NAMES


@dataclass(frozen=True)
class IndicatorFamily:
    name: str
    columns: tuple


def _cols(pred):
    return tuple(i for i, name in enumerate(FEATURE_NAMES) if pred(name))


def indicator_families(histogram="coarse"):
    """Canonical families over the 54 indicator columns.

    ``histogram="coarse"`` groups all 15 histogram columns into one family;
    ``"fine"`` makes one family per bin (3 columns each).
    """
    if histogram not in ("coarse", "fine"):
        raise ValueError("histogram granularity must be 'coarse' or 'fine'")
    fams = [IndicatorFamily(stat, _cols(lambda n, s=stat: n[2:] == s)) for stat in ("mean", "std", "skewness")]
    if histogram == "coarse":
        fams.append(IndicatorFamily("histogram", _cols(lambda n: n[2:].startswith("hist_bin_"))))
    else:
        for b in range(1, HIST_BINS + 1):
            fams.append(IndicatorFamily(f"hist_bin_{b}", _cols(lambda n, s=f"hist_bin_{b}": n[2:] == s)))
    fams.append(IndicatorFamily("difference", _cols(lambda n: n.startswith("diff_"))))
    fams.append(IndicatorFamily("ratio", _cols(lambda n: n.startswith("ratio_"))))
    for tex in TEXTURE_NAMES:
        fams.append(IndicatorFamily(tex, _cols(lambda n, s=tex: n[2:] == s)))
    check_partition(fams)
    return fams


def check_partition(families, n_columns=N_FEATURES):
    seen = [c for f in families for c in f.columns]
    if len(seen) != len(set(seen)):
        raise AssertionError("indicator families overlap")
    if sorted(seen) != list(range(n_columns)):
        raise AssertionError("indicator families do not cover every column")


def get_family(name, histogram="coarse"):
    for fam in indicator_families(histogram):
        if fam.name == name:
            return fam
    fine = {f.name: f for f in indicator_families("fine" if histogram == "coarse" else "coarse")}
    if name in fine:
        return fine[name]
    raise UnknownFamily(f"unknown indicator family {name!r}")


def ablated_methods(fusion_kinds):
    return [m for m in method_names(fusion_kinds) if m != "cnn_alone"]


@dataclass
class AblationResult:
    family: str
    deltas: dict  # method -> ablated mean - baseline mean
    report: EvaluationReport


def ablate(dataset: LabeledDataset, cnn_table, family, seeds, baseline: EvaluationReport = None,
           feature_kind="rf", fusion_kinds=TRAINABLE_KINDS, fusion_split="train", hyperparams=None,
           histogram="coarse") -> AblationResult:
    """Retrain without ``family`` and report weighted-precision deltas.

    A negative delta means the family helped. ``family`` is a name or an
    IndicatorFamily (custom families may index extra columns).
    """
    seeds = list(seeds)
    if not seeds:
        raise EmptyInput("seed list is empty")
    if isinstance(family, str):
        family = get_family(family, histogram)
    drop = set(family.columns)
    if any(c >= dataset.X.shape[1] for c in drop):
        raise UnknownFamily(f"family {family.name!r} indexes columns beyond the dataset")
    keep = [c for c in range(dataset.X.shape[1]) if c not in drop]
    if not keep:
        raise UnknownFamily(f"removing {family.name!r} would leave no columns")
    methods = ablated_methods(fusion_kinds)
    kwargs = dict(feature_kind=feature_kind, fusion_split=fusion_split, hyperparams=hyperparams, methods=methods)
    if baseline is None:
        baseline = evaluate(dataset, cnn_table, seeds, **kwargs)
    elif list(baseline.seeds) != seeds:
        raise ValueError("baseline was computed with a different seed list")
    reduced = evaluate(dataset.select_columns(keep), cnn_table, seeds, **kwargs)
    deltas = {m: reduced[m].mean - baseline[m].mean for m in methods}
    return AblationResult(family.name, deltas, reduced)


@dataclass
class AblationMatrix:
    families: list
    methods: list
    deltas: np.ndarray  # (n_families, n_methods)
    baseline: EvaluationReport

    def to_csv(self) -> str:
        """Deltas in percentage points, two decimals."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["family", *self.methods])
        for name, row in zip(self.families, self.deltas):
            writer.writerow([name, *(f"{100 * v:.2f}" for v in row)])
        return buf.getvalue()


def ablation_matrix(dataset: LabeledDataset, cnn_table, seeds, feature_kind="rf", fusion_kinds=TRAINABLE_KINDS,
                    fusion_split="train", hyperparams=None, histogram="coarse", families=None) -> AblationMatrix:
    seeds = list(seeds)
    if not seeds:
        raise EmptyInput("seed list is empty")
    families = families or indicator_families(histogram)
    methods = ablated_methods(fusion_kinds)
    baseline = evaluate(dataset, cnn_table, seeds, feature_kind=feature_kind, fusion_split=fusion_split,
                        hyperparams=hyperparams, methods=methods)
    grid = np.zeros((len(families), len(methods)))
    for i, fam in enumerate(families):
        res = ablate(dataset, cnn_table, fam, seeds, baseline, feature_kind, fusion_kinds, fusion_split,
                     hyperparams, histogram)
        grid[i] = [res.deltas[m] for m in methods]
    return AblationMatrix([f.name for f in families], methods, grid, baseline)
