"""Synthetic attributed graphs with planted clusters, labels, and noise.

Edges follow a stochastic block model over K_true planted clusters.
Each cluster draws node classes from its own mixture row, features are
a class-mean Gaussian blob plus a cluster-mean offset (so the planted
partition is recoverable from features alone), and a planted confusion
tensor defines how a simulated annotator errs. Everything is
deterministic given the spec seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .annotate import PlantedNoiseModel, cluster_conditional_noise
from .cluster import ClusterModel
from .errors import ArgumentError, FormatError, IoError
from .graphio import Graph
from .rng import derive_seed

__all__ = [
    "SynthSpec",
    "generate",
    "mixture_rows",
    "default_noise_grid",
    "edge_homophily",
    "save_planted",
    "load_planted",
]


def mixture_rows(k_true: int, num_classes: int, dominant: float) -> np.ndarray:
    """Row-stochastic cluster-to-class mixtures.

    Cluster k favors class k % C with the given dominant mass; the rest
    is spread uniformly. dominant=1.0 gives pure single-class clusters.
    """
    if not (0.0 < dominant <= 1.0):
        raise ArgumentError(f"dominant mass must be in (0, 1], got {dominant}")
    rows = np.full((k_true, num_classes), (1.0 - dominant) / max(num_classes - 1, 1))
    for k in range(k_true):
        rows[k, k % num_classes] = dominant
    return rows


def default_noise_grid(
    k_true: int, num_classes: int, lo: float = 0.2, hi: float = 0.95, seed: int = 0
) -> PlantedNoiseModel:
    """Cluster-conditional diagonals on an even grid over [lo, hi].

    Cell (k, c) takes grid index k*C + c, so the clusters sharing a
    dominant class land on well-separated reliability levels.
    """
    grid = np.linspace(lo, hi, k_true * num_classes).reshape(k_true, num_classes)
    return cluster_conditional_noise(grid, seed=seed)


@dataclass
class SynthSpec:
    n: int = 2000
    num_classes: int = 4
    k_true: int = 8
    p_in: float = 0.02
    p_out: float = 0.002
    d: int = 16
    sep: float = 6.0
    mixture: np.ndarray | None = None  # None -> pure clusters
    noise: PlantedNoiseModel | None = None  # None -> default cluster grid
    seed: int = 0

    def validate(self) -> None:
        if not (self.n >= self.k_true >= self.num_classes >= 2):
            raise ArgumentError(
                f"need n >= K_true >= C >= 2, got {self.n}/{self.k_true}/{self.num_classes}"
            )
        if not (0.0 <= self.p_out < self.p_in <= 1.0):
            raise ArgumentError(
                f"need 0 <= p_out < p_in <= 1, got p_in={self.p_in}, p_out={self.p_out}"
            )
        if self.d < 1:
            raise ArgumentError(f"feature dim must be >= 1, got {self.d}")
        if self.sep < 0:
            raise ArgumentError(f"sep must be >= 0, got {self.sep}")
        if self.mixture is not None:
            mix = np.asarray(self.mixture, dtype=np.float64)
            if mix.shape != (self.k_true, self.num_classes):
                raise ArgumentError(
                    f"mixture must be ({self.k_true}, {self.num_classes})"
                )
            if np.any(mix < 0) or np.any(np.abs(mix.sum(axis=1) - 1.0) > 1e-9):
                raise ArgumentError("mixture rows must be non-negative and sum to 1")

    @staticmethod
    def from_dict(payload: dict) -> "SynthSpec":
        known = {
            "n",
            "num_classes",
            "k_true",
            "p_in",
            "p_out",
            "d",
            "sep",
            "mixture",
            "mix_dominant",
            "noise",
            "seed",
        }
        unknown = set(payload) - known
        if unknown:
            raise FormatError(f"unknown generator spec keys: {sorted(unknown)}")
        spec = SynthSpec(
            n=int(payload.get("n", 2000)),
            num_classes=int(payload.get("num_classes", 4)),
            k_true=int(payload.get("k_true", 8)),
            p_in=float(payload.get("p_in", 0.02)),
            p_out=float(payload.get("p_out", 0.002)),
            d=int(payload.get("d", 16)),
            sep=float(payload.get("sep", 6.0)),
            seed=int(payload.get("seed", 0)),
        )
        if "mixture" in payload and payload["mixture"] is not None:
            spec.mixture = np.asarray(payload["mixture"], dtype=np.float64)
        elif "mix_dominant" in payload:
            spec.mixture = mixture_rows(
                spec.k_true, spec.num_classes, float(payload["mix_dominant"])
            )
        if "noise" in payload and payload["noise"] is not None:
            noise = payload["noise"]
            kind = noise.get("kind", "cluster_conditional")
            if "tensor" in noise:
                spec.noise = PlantedNoiseModel(
                    kind=kind,
                    tensor=np.asarray(noise["tensor"], dtype=np.float64),
                    seed=int(noise.get("seed", spec.seed)),
                )
            elif kind == "cluster_conditional":
                grid = noise.get("grid", [0.2, 0.95])
                spec.noise = default_noise_grid(
                    spec.k_true,
                    spec.num_classes,
                    lo=float(grid[0]),
                    hi=float(grid[1]),
                    seed=int(noise.get("seed", spec.seed)),
                )
            else:
                diag = noise.get("diag", 0.62)
                diags = (
                    np.full(spec.num_classes, float(diag))
                    if np.isscalar(diag)
                    else np.asarray(diag, dtype=np.float64)
                )
                from .annotate import class_conditional_noise, global_noise

                if kind == "global":
                    spec.noise = global_noise(
                        float(np.asarray(diag).ravel()[0]),
                        spec.num_classes,
                        seed=int(noise.get("seed", spec.seed)),
                    )
                else:
                    spec.noise = class_conditional_noise(
                        diags, seed=int(noise.get("seed", spec.seed))
                    )
        return spec


def _block_sizes(n: int, k: int) -> np.ndarray:
    sizes = np.full(k, n // k, dtype=np.int64)
    sizes[: n % k] += 1
    return sizes


def _sbm_edges(
    sizes: np.ndarray, p_in: float, p_out: float, rng: np.random.Generator
) -> np.ndarray:
    """Sample block-model edges; blocks are contiguous id ranges."""
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    k = sizes.size
    chunks = []
    for i in range(k):
        si = int(sizes[i])
        if si >= 2 and p_in > 0:
            iu, iv = np.triu_indices(si, k=1)
            mask = rng.random(iu.size) < p_in
            if mask.any():
                chunks.append(
                    np.stack([iu[mask] + starts[i], iv[mask] + starts[i]], axis=1)
                )
        for j in range(i + 1, k):
            sj = int(sizes[j])
            if si == 0 or sj == 0 or p_out <= 0:
                continue
            mask = rng.random(si * sj) < p_out
            if mask.any():
                flat = np.flatnonzero(mask)
                u = flat // sj + starts[i]
                v = flat % sj + starts[j]
                chunks.append(np.stack([u, v], axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    edges = np.concatenate(chunks, axis=0).astype(np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return edges[order]


def generate(spec: SynthSpec) -> tuple[Graph, ClusterModel, PlantedNoiseModel]:
    """Produce (graph with truth, planted partition, planted noise model)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    K, C, n, d = spec.k_true, spec.num_classes, spec.n, spec.d

    sizes = _block_sizes(n, K)
    assignment = np.repeat(np.arange(K, dtype=np.int64), sizes)

    mixture = (
        np.asarray(spec.mixture, dtype=np.float64)
        if spec.mixture is not None
        else mixture_rows(K, C, 1.0)
    )
    # Per-node class draw from the cluster's mixture row, in node order.
    u = rng.random(n)
    cum = np.cumsum(mixture, axis=1)
    truth = np.empty(n, dtype=np.int64)
    for k in range(K):
        members = assignment == k
        truth[members] = np.searchsorted(cum[k], u[members], side="right").clip(0, C - 1)

    edges = _sbm_edges(sizes, spec.p_in, spec.p_out, rng)

    class_means = rng.normal(size=(C, d))
    class_means *= spec.sep / np.linalg.norm(class_means, axis=1, keepdims=True)
    cluster_offsets = rng.normal(size=(K, d))
    cluster_offsets *= spec.sep / np.linalg.norm(cluster_offsets, axis=1, keepdims=True)
    features = (
        class_means[truth] + cluster_offsets[assignment] + rng.normal(size=(n, d))
    ).astype(np.float32)

    g = Graph(n=n, edges=edges, features=features, num_classes=C, truth=truth)
    g.validate()

    feats64 = np.asarray(features, dtype=np.float64)
    centroids = np.stack(
        [
            feats64[assignment == k].mean(axis=0) if np.any(assignment == k) else np.zeros(d)
            for k in range(K)
        ]
    )
    inertia = float(
        np.sum((feats64 - centroids[assignment]) ** 2)
    )
    planted_cm = ClusterModel(
        K=K, assignment=assignment, centroids=centroids, inertia=inertia, seed=spec.seed
    )

    noise = spec.noise
    if noise is None:
        noise = default_noise_grid(K, C, seed=derive_seed(spec.seed, "noise"))
    if noise.num_classes != C:
        raise ArgumentError(
            f"noise tensor is over {noise.num_classes} classes, spec has {C}"
        )
    if noise.kind == "cluster_conditional" and noise.tensor.shape[0] != K:
        raise ArgumentError(
            f"cluster-conditional noise has {noise.tensor.shape[0]} slices, "
            f"spec plants {K} clusters"
        )
    return g, planted_cm, noise


def edge_homophily(g: Graph) -> float:
    """Fraction of edges whose endpoints share a true class."""
    if g.truth is None:
        raise ArgumentError("homophily needs a truth vector")
    if g.num_edges == 0:
        return 0.0
    return float(np.mean(g.truth[g.edges[:, 0]] == g.truth[g.edges[:, 1]]))


def save_planted(
    cm: ClusterModel, noise: PlantedNoiseModel, path: str | Path, mixture=None
) -> None:
    payload = {
        "assignment": cm.assignment.tolist(),
        "K": cm.K,
        "noise": noise.to_dict(),
    }
    if mixture is not None:
        payload["mixture"] = np.asarray(mixture).tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_planted(path: str | Path) -> tuple[np.ndarray, PlantedNoiseModel]:
    p = Path(path)
    if not p.exists():
        raise IoError(f"missing file: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p.name} is not valid JSON: {exc}") from exc
    if "assignment" not in payload or "noise" not in payload:
        raise FormatError(f"{p.name} must carry assignment and noise")
    assignment = np.asarray(payload["assignment"], dtype=np.int64)
    return assignment, PlantedNoiseModel.from_dict(payload["noise"])
