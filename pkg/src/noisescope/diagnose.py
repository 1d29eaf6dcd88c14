"""Cluster-conditional annotation-noise diagnostic.

Given annotations, true labels, and a clustering, this module measures
whether annotation accuracy varies across feature-space clusters within
each class: per-(cluster, class) accuracy cells, the within-class
max-min gap, a per-class one-way ANOVA F over cell correctness
indicators, and Fisher's combined p-value. A synthetic class-conditional
null control checks that the statistics stay calibrated when no cluster
structure is planted.

F and chi-square tail probabilities are computed here via regularized
incomplete beta/gamma functions so the statistics stay auditable and
dependency-light.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cluster import ClusterModel
from .errors import ArgumentError, FormatError, IoError
from .rng import rng_for

__all__ = [
    "DiagnosticReport",
    "CellStat",
    "per_cluster_accuracy",
    "anova_f",
    "fisher_combine",
    "diagnose",
    "null_control",
    "chi2_sf",
    "f_sf",
    "regularized_beta",
    "regularized_gamma_q",
    "save_diagnostic",
    "load_diagnostic",
]

P_FLOOR = 5e-324  # smallest positive double; keeps p in (0, 1]
_EPS = 1e-300
_MAX_ITER = 500


# ---------------------------------------------------------------------------
# Tail probabilities via regularized incomplete beta / gamma.


def _gamma_p_series(a: float, x: float) -> float:
    # series for P(a, x), reliable when x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_q_cf(a: float, x: float) -> float:
    # modified Lentz continued fraction for Q(a, x), reliable when x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / 1e-308
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < 1e-308:
            d = 1e-308
        c = b + an / c
        if abs(c) < 1e-308:
            c = 1e-308
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def regularized_gamma_q(a: float, x: float) -> float:
    """Upper regularized incomplete gamma Q(a, x)."""
    if a <= 0:
        raise ArgumentError(f"gamma shape must be positive, got {a}")
    if x < 0:
        raise ArgumentError(f"gamma argument must be non-negative, got {x}")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return min(1.0, max(0.0, 1.0 - _gamma_p_series(a, x)))
    return min(1.0, max(0.0, _gamma_q_cf(a, x)))


def chi2_sf(x: float, df: float) -> float:
    """Chi-square survival function P(X > x)."""
    if df <= 0:
        raise ArgumentError(f"chi-square df must be positive, got {df}")
    if x <= 0:
        return 1.0
    if not math.isfinite(x):
        return P_FLOOR
    return max(P_FLOOR, regularized_gamma_q(df / 2.0, x / 2.0))


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz for the incomplete beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < 1e-308:
        d = 1e-308
    d = 1.0 / d
    h = d
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-308:
            d = 1e-308
        c = 1.0 + aa / c
        if abs(c) < 1e-308:
            c = 1e-308
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < 1e-308:
            d = 1e-308
        c = 1.0 + aa / c
        if abs(c) < 1e-308:
            c = 1e-308
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def regularized_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ArgumentError(f"beta parameters must be positive, got a={a}, b={b}")
    if not (0.0 <= x <= 1.0):
        raise ArgumentError(f"beta argument must be in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        val = front * _beta_cf(a, b, x) / a
    else:
        val = 1.0 - front * _beta_cf(b, a, 1.0 - x) / b
    return min(1.0, max(0.0, val))


def f_sf(f: float, d1: float, d2: float) -> float:
    """F-distribution survival function with (d1, d2) degrees of freedom."""
    if d1 <= 0 or d2 <= 0:
        raise ArgumentError(f"F dof must be positive, got ({d1}, {d2})")
    if f <= 0:
        return 1.0
    if not math.isfinite(f):
        return P_FLOOR
    x = d2 / (d2 + d1 * f)
    return max(P_FLOOR, regularized_beta(d2 / 2.0, d1 / 2.0, x))


# ---------------------------------------------------------------------------
# Statistics.


def anova_f(groups: Sequence[np.ndarray]) -> tuple[float, float]:
    """One-way ANOVA F and upper-tail p over the given sample groups.

    Identical values everywhere (and, more generally, identical group
    means) give F = 0, p = 1. Zero within-group variance with distinct
    means gives F = inf with p at the floor.
    """
    if len(groups) < 2:
        raise ArgumentError(f"ANOVA needs >= 2 groups, got {len(groups)}")
    arrs = [np.asarray(grp, dtype=np.float64).ravel() for grp in groups]
    for i, arr in enumerate(arrs):
        if arr.size < 2:
            raise ArgumentError(f"ANOVA group {i} has {arr.size} samples, need >= 2")
    all_vals = np.concatenate(arrs)
    grand = float(all_vals.mean())
    n_total = int(all_vals.size)
    g = len(arrs)
    ssb = float(sum(a.size * (a.mean() - grand) ** 2 for a in arrs))
    ssw = float(sum(((a - a.mean()) ** 2).sum() for a in arrs))
    scale = float((all_vals**2).sum()) + 1.0
    if ssb <= scale * 1e-15:
        return 0.0, 1.0
    df1 = g - 1
    df2 = n_total - g
    if ssw <= scale * 1e-15:
        return math.inf, P_FLOOR
    f = (ssb / df1) / (ssw / df2)
    return f, f_sf(f, df1, df2)


def fisher_combine(ps: Sequence[float]) -> float:
    """Fisher's method: combined p from chi2 = -2 sum(ln p) with 2m dof."""
    if len(ps) == 0:
        raise ArgumentError("cannot combine an empty p-value list")
    total = 0.0
    for i, p in enumerate(ps):
        if not (0.0 < p <= 1.0):
            raise ArgumentError(f"p-values must lie in (0, 1], got ps[{i}]={p}")
        total += math.log(p)
    chi2 = -2.0 * total
    return chi2_sf(chi2, 2 * len(ps))


# ---------------------------------------------------------------------------
# Report assembly.


@dataclass
class CellStat:
    cluster: int
    cls: int
    accuracy: float
    support: int
    deviation: float  # cell accuracy minus the class's global accuracy

    def to_dict(self) -> dict:
        return {
            "cluster": self.cluster,
            "cls": self.cls,
            "accuracy": self.accuracy,
            "support": self.support,
            "deviation": self.deviation,
        }


@dataclass
class DiagnosticReport:
    """All diagnostic statistics for one (annotations, truth, clustering)."""

    num_classes: int
    num_clusters: int
    min_cell: int
    n_annotated: int
    cells: list[CellStat]
    per_class_accuracy: list[float | None]
    t_ii: float | None
    delta_bar: float | None
    per_class_f: list[float | None]
    per_class_p: list[float | None]
    f_bar: float | None
    fisher_p: float | None

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "num_clusters": self.num_clusters,
            "min_cell": self.min_cell,
            "n_annotated": self.n_annotated,
            "cells": [c.to_dict() for c in self.cells],
            "per_class_accuracy": self.per_class_accuracy,
            "t_ii": self.t_ii,
            "delta_bar": self.delta_bar,
            "per_class_f": self.per_class_f,
            "per_class_p": self.per_class_p,
            "f_bar": self.f_bar,
            "fisher_p": self.fisher_p,
        }

    @staticmethod
    def from_dict(payload: dict) -> "DiagnosticReport":
        try:
            cells = [
                CellStat(
                    cluster=int(c["cluster"]),
                    cls=int(c["cls"]),
                    accuracy=float(c["accuracy"]),
                    support=int(c["support"]),
                    deviation=float(c["deviation"]),
                )
                for c in payload["cells"]
            ]
            return DiagnosticReport(
                num_classes=int(payload["num_classes"]),
                num_clusters=int(payload["num_clusters"]),
                min_cell=int(payload["min_cell"]),
                n_annotated=int(payload["n_annotated"]),
                cells=cells,
                per_class_accuracy=list(payload["per_class_accuracy"]),
                t_ii=payload["t_ii"],
                delta_bar=payload["delta_bar"],
                per_class_f=list(payload["per_class_f"]),
                per_class_p=list(payload["per_class_p"]),
                f_bar=payload["f_bar"],
                fisher_p=payload["fisher_p"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed diagnostic report: {exc}") from exc


def _label_map(annotations) -> dict[int, int]:
    if hasattr(annotations, "labels"):
        return dict(annotations.labels())
    if isinstance(annotations, Mapping):
        return {int(v): int(y) for v, y in annotations.items()}
    arr = np.asarray(annotations)
    if arr.ndim != 1:
        raise ArgumentError("annotations must be a set, mapping, or 1-d array")
    return {int(v): int(arr[v]) for v in range(arr.size) if arr[v] >= 0}


def per_cluster_accuracy(
    annotations,
    truth: np.ndarray,
    cm: ClusterModel,
    min_cell: int = 20,
) -> list[tuple[int, int, float, int]]:
    """(cluster, class, accuracy, support) for cells with enough examples.

    Support counts annotated nodes whose true class matches the cell;
    accuracy is the fraction annotated with that same class. Cells below
    min_cell are omitted.
    """
    if truth is None:
        raise ArgumentError("per-cluster accuracy needs a truth vector")
    labels = _label_map(annotations)
    if min_cell < 1:
        raise ArgumentError(f"min_cell must be >= 1, got {min_cell}")
    truth = np.asarray(truth)
    buckets: dict[tuple[int, int], list[int]] = {}
    for v, y_hat in labels.items():
        k = int(cm.assignment[v])
        i = int(truth[v])
        buckets.setdefault((k, i), []).append(1 if y_hat == i else 0)
    out = []
    for (k, i), hits in sorted(buckets.items()):
        if len(hits) >= min_cell:
            out.append((k, i, float(np.mean(hits)), len(hits)))
    return out


def diagnose(
    annotations,
    truth: np.ndarray,
    cm: ClusterModel,
    min_cell: int = 20,
) -> DiagnosticReport:
    """Assemble the full cluster-conditional noise report.

    T_ii is the unweighted mean of per-class annotation accuracies.
    delta_bar averages the max-min cell-accuracy gap over classes with
    at least two supported cells; per-class F applies the same min_cell
    rule to its groups and needs at least two of them.
    """
    if truth is None:
        raise ArgumentError("diagnose needs a truth vector")
    truth = np.asarray(truth)
    labels = _label_map(annotations)
    num_classes = int(truth.max()) + 1 if truth.size else 0
    for v, y_hat in labels.items():
        num_classes = max(num_classes, y_hat + 1)

    per_class_acc: list[float | None] = [None] * num_classes
    hits_by_class: dict[int, list[int]] = {}
    for v, y_hat in labels.items():
        i = int(truth[v])
        hits_by_class.setdefault(i, []).append(1 if y_hat == i else 0)
    for i, hits in hits_by_class.items():
        per_class_acc[i] = float(np.mean(hits))
    have_acc = [a for a in per_class_acc if a is not None]
    t_ii = float(np.mean(have_acc)) if have_acc else None

    raw_cells = per_cluster_accuracy(labels, truth, cm, min_cell=min_cell)
    cells = [
        CellStat(
            cluster=k,
            cls=i,
            accuracy=acc,
            support=cnt,
            deviation=acc - (per_class_acc[i] if per_class_acc[i] is not None else 0.0),
        )
        for k, i, acc, cnt in raw_cells
    ]

    # correctness indicator groups per supported cell, keyed by class
    groups_by_class: dict[int, list[np.ndarray]] = {}
    indicators: dict[tuple[int, int], list[int]] = {}
    for v, y_hat in labels.items():
        key = (int(cm.assignment[v]), int(truth[v]))
        indicators.setdefault(key, []).append(1 if y_hat == int(truth[v]) else 0)
    for cell in cells:
        groups_by_class.setdefault(cell.cls, []).append(
            np.asarray(indicators[(cell.cluster, cell.cls)], dtype=np.float64)
        )

    per_class_f: list[float | None] = [None] * num_classes
    per_class_p: list[float | None] = [None] * num_classes
    for i, groups in groups_by_class.items():
        if len(groups) >= 2:
            f, p = anova_f(groups)
            per_class_f[i] = f
            per_class_p[i] = p

    gaps = []
    for i in range(num_classes):
        accs = [c.accuracy for c in cells if c.cls == i]
        if len(accs) >= 2:
            gaps.append(max(accs) - min(accs))
    delta_bar = float(np.mean(gaps)) if gaps else None

    fs = [f for f in per_class_f if f is not None]
    ps = [p for p in per_class_p if p is not None]
    f_bar = float(np.mean(fs)) if fs else None
    fisher_p = fisher_combine(ps) if ps else None

    return DiagnosticReport(
        num_classes=num_classes,
        num_clusters=cm.K,
        min_cell=min_cell,
        n_annotated=len(labels),
        cells=cells,
        per_class_accuracy=per_class_acc,
        t_ii=t_ii,
        delta_bar=delta_bar,
        per_class_f=per_class_f,
        per_class_p=per_class_p,
        f_bar=f_bar,
        fisher_p=fisher_p,
    )


def null_control(
    truth: np.ndarray,
    cm: ClusterModel,
    diag: float,
    seed: int,
    min_cell: int = 20,
) -> DiagnosticReport:
    """Diagnose labels drawn from a purely class-conditional annotator.

    Every node's label is replaced by a draw with P(correct) = diag and
    the remaining mass uniform over other classes, independent of the
    node's cluster. A calibrated diagnostic should then find no cluster
    effect (F near 1, combined p well above rejection levels).
    """
    if truth is None:
        raise ArgumentError("null control needs a truth vector")
    truth = np.asarray(truth)
    num_classes = int(truth.max()) + 1
    if not (1.0 / num_classes < diag <= 1.0):
        raise ArgumentError(
            f"diagonal fraction must lie in (1/{num_classes}, 1], got {diag}"
        )
    off = (1.0 - diag) / max(num_classes - 1, 1)
    row_cum = {}
    for c in range(num_classes):
        row = np.full(num_classes, off)
        row[c] = diag
        row_cum[c] = np.cumsum(row)
    labels = {}
    for v in range(truth.size):
        u = rng_for(seed, "null", v).random()
        labels[v] = int(
            np.searchsorted(row_cum[int(truth[v])], u, side="right").clip(
                0, num_classes - 1
            )
        )
    return diagnose(labels, truth, cm, min_cell=min_cell)


def save_diagnostic(report: DiagnosticReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True)
        fh.write("\n")


def load_diagnostic(path: str | Path) -> DiagnosticReport:
    p = Path(path)
    if not p.exists():
        raise IoError(f"missing file: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p.name} is not valid JSON: {exc}") from exc
    return DiagnosticReport.from_dict(payload)
