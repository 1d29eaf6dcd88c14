"""Embedding choice, deterministic k-means, and cluster purity reporting.

k-means is Lloyd's algorithm with k-means++ seeding, re-run nowhere:
one seeded pass, bit-reproducible on the same platform. Empty clusters
are re-seeded from the point currently farthest from its centroid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArgumentError, FormatError, IoError
from .graphio import Graph, normalize_adjacency

__all__ = [
    "ClusterModel",
    "PurityReport",
    "kmeans",
    "choose_embedding",
    "purity",
    "save_clusters",
    "load_clusters",
]


@dataclass
class ClusterModel:
    """A hard partition of points into K clusters.

    inertia is the sum of squared L2 distances from each point to its
    assigned centroid.
    """

    K: int
    assignment: np.ndarray  # (n,) int64 in [0, K)
    centroids: np.ndarray  # (K, e) float64
    inertia: float
    seed: int

    @property
    def n(self) -> int:
        return int(self.assignment.shape[0])

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == k)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.K)


@dataclass
class PurityReport:
    """Per-cluster dominant-class composition against a truth vector."""

    sizes: list[int]
    dominant_class: list[int]
    dominant_fraction: list[float]
    weighted_purity: float
    majority_single_class_frac: float
    # Fraction of clusters whose modal annotated label equals the dominant
    # true class; None when no annotations were supplied.
    modal_label_match_frac: float | None


def _dist2(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x||^2 - 2 x.c + ||c||^2, clipped at 0 against rounding
    d2 = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _kmeanspp_init(
    points: np.ndarray, K: int, rng: np.random.Generator
) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((K, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = points[first]
    closest = _dist2(points, centroids[0:1])[:, 0]
    for k in range(1, K):
        total = closest.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(closest), r, side="right"))
            idx = min(idx, n - 1)
        centroids[k] = points[idx]
        closest = np.minimum(closest, _dist2(points, centroids[k : k + 1])[:, 0])
    return centroids


def kmeans(points: np.ndarray, K: int, seed: int, max_iter: int = 300) -> ClusterModel:
    """Cluster points into K groups with seeded k-means++ / Lloyd iterations.

    Args:
        points: (n, e) array, treated as float64.
        K: number of clusters, 1 <= K <= n.
        seed: RNG seed; the same seed reproduces the model bit for bit.
        max_iter: Lloyd iteration cap; convergence is declared when no
            assignment changes.

    Returns:
        ClusterModel with every cluster id in [0, K) used or empty-free
        (re-seeding guarantees no empty cluster survives an iteration).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ArgumentError("points must be a non-empty 2-d array")
    if not np.all(np.isfinite(points)):
        raise ArgumentError("points contain non-finite values")
    n = points.shape[0]
    if K < 1 or K > n:
        raise ArgumentError(f"K must be in [1, n={n}], got {K}")
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, K, rng)
    assignment = np.full(n, -1, dtype=np.int64)
    prev_inertia = np.inf
    for _ in range(max_iter):
        d2 = _dist2(points, centroids)
        new_assignment = np.argmin(d2, axis=1).astype(np.int64)
        point_d2 = d2[np.arange(n), new_assignment]
        # Lloyd never increases the objective; tiny slack for rounding.
        inertia = float(point_d2.sum())
        assert inertia <= prev_inertia * (1.0 + 1e-12) + 1e-9
        prev_inertia = inertia
        for k in range(K):
            if not np.any(new_assignment == k):
                far = int(np.argmax(point_d2))
                centroids[k] = points[far]
                new_assignment[far] = k
                point_d2[far] = 0.0
        if np.array_equal(new_assignment, assignment):
            break
        assignment = new_assignment
        for k in range(K):
            members = points[assignment == k]
            if members.shape[0]:
                centroids[k] = members.mean(axis=0)
    final_d2 = _dist2(points, centroids)
    inertia = float(final_d2[np.arange(n), assignment].sum())
    return ClusterModel(
        K=K,
        assignment=assignment,
        centroids=centroids,
        inertia=inertia,
        seed=seed,
    )


def choose_embedding(
    g: Graph, external: np.ndarray | None = None, hops: int = 2
) -> np.ndarray:
    """Pick the clustering space: external embeddings or propagated features.

    With no external matrix, features are smoothed hops times through the
    normalized adjacency (hops=0 returns the raw features). Output is
    always float64 with one row per node.
    """
    if external is not None:
        emb = np.asarray(external, dtype=np.float64)
        if emb.ndim != 2 or emb.shape[0] != g.n:
            raise ArgumentError(
                f"external embeddings must have {g.n} rows, got shape {emb.shape}"
            )
        if not np.all(np.isfinite(emb)):
            raise ArgumentError("external embeddings contain non-finite values")
        return emb
    if hops < 0:
        raise ArgumentError(f"hops must be >= 0, got {hops}")
    emb = np.asarray(g.features, dtype=np.float64)
    if hops:
        ahat = normalize_adjacency(g)
        for _ in range(hops):
            emb = ahat.propagate(emb)
    return emb


def purity(
    cm: ClusterModel,
    truth: np.ndarray,
    annotations: Mapping[int, int] | None = None,
) -> PurityReport:
    """Measure how single-class each cluster is under the truth vector.

    Args:
        cm: the partition to score.
        truth: (n,) class ids.
        annotations: optional node -> annotated label map; when given,
            the report also says how often a cluster's modal annotated
            label matches its dominant true class.
    """
    truth = np.asarray(truth, dtype=np.int64)
    if truth.shape != (cm.n,):
        raise ArgumentError("truth must assign a class to every clustered point")
    if annotations is not None and hasattr(annotations, "labels"):
        annotations = annotations.labels()  # type: ignore[union-attr]
    sizes: list[int] = []
    dominant_class: list[int] = []
    dominant_fraction: list[float] = []
    matches = 0
    clusters_with_ann = 0
    weighted = 0.0
    majority = 0
    nonempty = 0
    for k in range(cm.K):
        members = cm.members(k)
        sizes.append(int(members.size))
        if members.size == 0:
            dominant_class.append(-1)
            dominant_fraction.append(0.0)
            continue
        nonempty += 1
        counts = np.bincount(truth[members])
        dom = int(np.argmax(counts))
        frac = float(counts[dom] / members.size)
        dominant_class.append(dom)
        dominant_fraction.append(frac)
        weighted += frac * members.size
        if frac > 0.5:
            majority += 1
        if annotations is not None:
            ann_labels = [annotations[v] for v in members.tolist() if v in annotations]
            if ann_labels:
                clusters_with_ann += 1
                modal = int(np.argmax(np.bincount(np.array(ann_labels))))
                if modal == dom:
                    matches += 1
    modal_match = (
        matches / clusters_with_ann
        if annotations is not None and clusters_with_ann
        else None
    )
    return PurityReport(
        sizes=sizes,
        dominant_class=dominant_class,
        dominant_fraction=dominant_fraction,
        weighted_purity=weighted / cm.n,
        majority_single_class_frac=majority / nonempty if nonempty else 0.0,
        modal_label_match_frac=modal_match,
    )


def save_clusters(cm: ClusterModel, path: str | Path) -> None:
    payload = {
        "K": cm.K,
        "assignment": cm.assignment.tolist(),
        "centroids": cm.centroids.tolist(),
        "inertia": cm.inertia,
        "seed": cm.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_clusters(path: str | Path) -> ClusterModel:
    p = Path(path)
    if not p.exists():
        raise IoError(f"missing file: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p.name} is not valid JSON: {exc}") from exc
    for key in ("K", "assignment", "centroids"):
        if key not in payload:
            raise FormatError(f"{p.name} missing key {key!r}")
    assignment = np.asarray(payload["assignment"], dtype=np.int64)
    K = int(payload["K"])
    if assignment.size and (assignment.min() < 0 or assignment.max() >= K):
        raise FormatError(f"{p.name}: assignment out of range for K={K}")
    return ClusterModel(
        K=K,
        assignment=assignment,
        centroids=np.asarray(payload["centroids"], dtype=np.float64),
        inertia=float(payload.get("inertia", 0.0)),
        seed=int(payload.get("seed", 0)),
    )
