"""Cluster-conditional annotator-reliability estimation from probe agreement.

No ground truth enters here. The estimator looks at how often a probe
node's annotated label matches the labels of its annotated neighbors
(graph neighbors plus nearest feature-space neighbors), averages that
agreement per (cluster, annotated-class) cell, and backs off to the
cluster and then the global mean when a cell has too little support.
The diagonal of each row is that agreement; the remaining mass is
spread uniformly off-diagonal.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .annotate import AnnotationSet
from .cluster import ClusterModel
from .errors import ArgumentError, FormatError, IoError, NoNeighborEvidence
from .graphio import Graph

__all__ = [
    "TransitionTensor",
    "AgreementRecord",
    "neighbor_set",
    "agreement",
    "agreement_records",
    "tensor_from_agreements",
    "estimate_tc",
    "collapse_to_global",
    "agreement_bias_report",
    "AgreementBiasReport",
    "save_tensor",
    "load_tensor",
]

DIAG_LO_FRACTION = 1.0  # lower clamp is 1/C
DIAG_HI = 0.999
ROW_SUM_TOL = 1e-9


@dataclass
class TransitionTensor:
    """Per-cluster row-stochastic confusion estimates with provenance.

    tensor[k, i, j] estimates P(annotated j | class i, cluster k). Only
    the diagonal is estimated from data; off-diagonal mass is uniform.
    support[k, c] counts the probe nodes whose agreement fed cell (k, c);
    backoff[k, c] records which level supplied the value.
    """

    tensor: np.ndarray  # (K, C, C) float64
    support: np.ndarray  # (K, C) int64
    backoff: np.ndarray  # (K, C) object: "cell" | "cluster" | "global"
    min_support: int

    @property
    def K(self) -> int:
        return int(self.tensor.shape[0])

    @property
    def C(self) -> int:
        return int(self.tensor.shape[1])

    def diag(self, k: int, c: int) -> float:
        """Self-trust of cell (k, c); a K=1 tensor answers for every k."""
        kk = k if self.K > 1 else 0
        return float(self.tensor[kk, c, c])

    def global_matrix(self) -> np.ndarray:
        """The class-conditional collapse (1/K) sum_k tensor[k]."""
        return self.tensor.mean(axis=0)

    def validate(self) -> None:
        if np.any(self.tensor < 0) or np.any(self.tensor > 1):
            raise ArgumentError("tensor entries must lie in [0, 1]")
        sums = self.tensor.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            raise ArgumentError("tensor rows must sum to 1")
        for k in range(self.K):
            for c in range(self.C):
                tag = self.backoff[k, c]
                if tag not in ("cell", "cluster", "global"):
                    raise ArgumentError(f"unknown backoff tag {tag!r}")
                if (tag == "cell") != (self.support[k, c] >= self.min_support):
                    raise ArgumentError(
                        f"cell ({k},{c}): backoff tag inconsistent with support"
                    )


@dataclass
class AgreementRecord:
    node: int
    neighbors: np.ndarray
    a: float  # fraction of neighbors sharing the node's annotated label


def neighbor_set(
    v: int,
    ann: AnnotationSet,
    g: Graph,
    emb: np.ndarray,
    k_feat: int = 5,
) -> np.ndarray:
    """Annotated graph neighbors of v, plus its k_feat nearest annotated
    nodes in embedding space (L2, ties broken by lower node id).

    May be empty; callers skip such nodes.
    """
    if v not in ann:
        raise ArgumentError(f"node {v} is not annotated")
    annotated = np.array([u for u in ann.nodes() if u != v], dtype=np.int64)
    graph_nbrs = g.adjacency_lists()[v]
    out = set(int(u) for u in graph_nbrs if u in ann)
    if k_feat > 0 and annotated.size:
        emb = np.asarray(emb, dtype=np.float64)
        diff = emb[annotated] - emb[v]
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        order = np.lexsort((annotated, dist))
        out.update(int(annotated[i]) for i in order[:k_feat])
    return np.array(sorted(out), dtype=np.int64)


def agreement(v: int, nbrs: np.ndarray, ann: AnnotationSet) -> float:
    """Fraction of neighbors whose annotated label matches v's."""
    nbrs = np.asarray(nbrs, dtype=np.int64)
    if nbrs.size == 0:
        raise NoNeighborEvidence(f"node {v} has no annotated neighbors")
    labels = ann.labels()
    mine = labels[v]
    same = sum(1 for u in nbrs.tolist() if labels[u] == mine)
    return same / nbrs.size


def agreement_records(
    ann: AnnotationSet,
    g: Graph,
    emb: np.ndarray,
    k_feat: int = 5,
) -> list[AgreementRecord]:
    """Agreement for every annotated node that has neighbor evidence."""
    records = []
    for v in ann.nodes():
        nbrs = neighbor_set(v, ann, g, emb, k_feat)
        if nbrs.size == 0:
            continue
        records.append(AgreementRecord(node=v, neighbors=nbrs, a=agreement(v, nbrs, ann)))
    return records


def tensor_from_agreements(
    records: list[AgreementRecord],
    labels: dict[int, int],
    assignment: np.ndarray,
    K: int,
    C: int,
    min_support: int,
) -> TransitionTensor:
    """Aggregate agreement records into the backed-off transition tensor.

    Split out from estimate_tc so properties of the aggregation (e.g.
    monotonicity in the agreements) can be tested directly.
    """
    if C < 2:
        raise ArgumentError("need at least 2 classes")
    cell_sum = np.zeros((K, C))
    cell_cnt = np.zeros((K, C), dtype=np.int64)
    for rec in records:
        k = int(assignment[rec.node])
        c = labels[rec.node]
        cell_sum[k, c] += rec.a
        cell_cnt[k, c] += 1
    cluster_sum = cell_sum.sum(axis=1)
    cluster_cnt = cell_cnt.sum(axis=1)
    total_sum = float(cluster_sum.sum())
    total_cnt = int(cluster_cnt.sum())
    global_mean = total_sum / total_cnt if total_cnt else 1.0 / C

    lo = DIAG_LO_FRACTION / C
    tensor = np.zeros((K, C, C))
    backoff = np.empty((K, C), dtype=object)
    for k in range(K):
        for c in range(C):
            if cell_cnt[k, c] >= min_support:
                value = cell_sum[k, c] / cell_cnt[k, c]
                backoff[k, c] = "cell"
            elif cluster_cnt[k] > 0:
                value = cluster_sum[k] / cluster_cnt[k]
                backoff[k, c] = "cluster"
            else:
                value = global_mean
                backoff[k, c] = "global"
            d = float(np.clip(value, lo, DIAG_HI))
            row = np.full(C, (1.0 - d) / (C - 1))
            row[c] = d
            tensor[k, c] = row
    out = TransitionTensor(
        tensor=tensor, support=cell_cnt, backoff=backoff, min_support=min_support
    )
    out.validate()
    return out


def estimate_tc(
    probe: AnnotationSet,
    cm: ClusterModel,
    g: Graph,
    emb: np.ndarray,
    min_support: int = 3,
    k_feat: int = 5,
) -> TransitionTensor:
    """Estimate the cluster-conditional reliability tensor from the probe.

    The diagonal of cell (k, c) is the mean agreement over probe nodes in
    cluster k annotated c, when at least min_support such nodes have
    neighbor evidence; otherwise the cluster mean; otherwise the global
    mean. Diagonals are clamped to [1/C, 0.999] and rows filled uniformly
    off-diagonal. Ground truth is deliberately absent from the signature.
    """
    if len(probe) == 0:
        raise ArgumentError("probe annotation set is empty")
    if min_support < 1:
        raise ArgumentError(f"min_support must be >= 1, got {min_support}")
    records = agreement_records(probe, g, emb, k_feat)
    return tensor_from_agreements(
        records, probe.labels(), cm.assignment, cm.K, g.num_classes, min_support
    )


def collapse_to_global(t: TransitionTensor) -> TransitionTensor:
    """Average the cluster slices into a single class-conditional matrix."""
    collapsed = t.tensor.mean(axis=0, keepdims=True)
    support = t.support.sum(axis=0, keepdims=True)
    backoff = np.empty((1, t.C), dtype=object)
    for c in range(t.C):
        backoff[0, c] = "cell" if support[0, c] >= t.min_support else "global"
    out = TransitionTensor(
        tensor=collapsed, support=support, backoff=backoff, min_support=t.min_support
    )
    out.validate()
    return out


@dataclass
class AgreementBiasReport:
    """Do correctly-annotated probe nodes agree with neighbors more often
    than mislabeled ones? Groups are reported raw so callers can bootstrap."""

    agree_correct: list[float]
    agree_wrong: list[float]
    mean_correct: float | None
    mean_wrong: float | None
    gap: float | None


def agreement_bias_report(
    probe: AnnotationSet,
    truth: np.ndarray,
    g: Graph,
    emb: np.ndarray,
    k_feat: int = 5,
) -> AgreementBiasReport:
    """Split probe agreement by annotation correctness (evaluation-side op)."""
    truth = np.asarray(truth, dtype=np.int64)
    labels = probe.labels()
    correct: list[float] = []
    wrong: list[float] = []
    for rec in agreement_records(probe, g, emb, k_feat):
        if labels[rec.node] == truth[rec.node]:
            correct.append(rec.a)
        else:
            wrong.append(rec.a)
    mean_c = float(np.mean(correct)) if correct else None
    mean_w = float(np.mean(wrong)) if wrong else None
    gap = mean_c - mean_w if correct and wrong else None
    return AgreementBiasReport(
        agree_correct=correct,
        agree_wrong=wrong,
        mean_correct=mean_c,
        mean_wrong=mean_w,
        gap=gap,
    )


def save_tensor(t: TransitionTensor, path: str | Path) -> None:
    payload = {
        "K": t.K,
        "C": t.C,
        "min_support": t.min_support,
        "tensor": t.tensor.tolist(),
        "support": t.support.tolist(),
        "backoff": [[t.backoff[k, c] for c in range(t.C)] for k in range(t.K)],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_tensor(path: str | Path) -> TransitionTensor:
    p = Path(path)
    if not p.exists():
        raise IoError(f"missing file: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p.name} is not valid JSON: {exc}") from exc
    for key in ("K", "C", "min_support", "tensor", "support", "backoff"):
        if key not in payload:
            raise FormatError(f"{p.name} missing key {key!r}")
    backoff = np.array(payload["backoff"], dtype=object)
    t = TransitionTensor(
        tensor=np.asarray(payload["tensor"], dtype=np.float64),
        support=np.asarray(payload["support"], dtype=np.int64),
        backoff=backoff,
        min_support=int(payload["min_support"]),
    )
    try:
        t.validate()
    except ArgumentError as exc:
        raise FormatError(f"{p.name}: {exc}") from exc
    return t
