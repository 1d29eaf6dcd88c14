"""Graph container, on-disk formats, and adjacency normalization.

A graph directory holds:

* ``meta.json``: ``{"n": .., "d": .., "num_classes": ..}``
* ``edges.tsv``: one ``u<TAB>v`` pair per line, undirected
* ``features.f32`` (little-endian row-major float32) or ``features.tsv``
* ``labels.tsv`` (optional): one ``node<TAB>class`` pair per line
* ``embeddings.f32`` + ``embeddings.meta.json`` (optional)

Edges are symmetrized at load: (u, v) and (v, u) collapse to one
canonical (min, max) pair. Self loops and dangling endpoints are
rejected with the offending line number.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, FormatError, IoError

__all__ = [
    "Graph",
    "NormalizedAdjacency",
    "load_graph",
    "save_graph",
    "load_embeddings",
    "save_embeddings",
    "normalize_adjacency",
]


@dataclass
class Graph:
    """An undirected attributed graph with an optional held-out truth vector.

    Attributes:
        n: number of nodes, ids are 0..n-1.
        edges: (m, 2) int64 array, canonical u < v, unique, sorted.
        features: (n, d) float32 node feature matrix, all finite.
        num_classes: size of the label space, >= 2.
        truth: optional (n,) int64 array of class ids in [0, num_classes).
            Pipeline stages never read it; it exists for evaluation and
            for simulated annotators standing in for an external oracle.
    """

    n: int
    edges: np.ndarray
    features: np.ndarray
    num_classes: int
    truth: np.ndarray | None = None
    _adj: list[np.ndarray] | None = field(default=None, repr=False, compare=False)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def validate(self) -> None:
        """Raise FormatError/ArgumentError if any structural invariant fails."""
        if self.n <= 0:
            raise ArgumentError(f"graph must have at least one node, got n={self.n}")
        if self.num_classes < 2:
            raise ArgumentError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.features.shape != (self.n, self.features.shape[1]):
            raise FormatError("features must have one row per node")
        if self.features.shape[0] != self.n:
            raise FormatError(
                f"features have {self.features.shape[0]} rows for n={self.n}"
            )
        if not np.all(np.isfinite(self.features)):
            raise FormatError("features contain non-finite values")
        e = self.edges
        if e.size:
            if e.min() < 0 or e.max() >= self.n:
                raise FormatError("edge endpoint out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise FormatError("self loops are not allowed")
            if np.any(e[:, 0] > e[:, 1]):
                raise FormatError("edges must be stored with u < v")
            if np.unique(e, axis=0).shape[0] != e.shape[0]:
                raise FormatError("duplicate edges are not allowed")
        if self.truth is not None:
            if self.truth.shape != (self.n,):
                raise FormatError("truth must assign a class to every node")
            if self.truth.min() < 0 or self.truth.max() >= self.num_classes:
                raise FormatError("truth labels out of class range")

    def without_truth(self) -> "Graph":
        """A view of this graph with the truth vector dropped."""
        return Graph(
            n=self.n,
            edges=self.edges,
            features=self.features,
            num_classes=self.num_classes,
            truth=None,
        )

    def adjacency_lists(self) -> list[np.ndarray]:
        """Sorted neighbor id array per node (cached after first call)."""
        if self._adj is None:
            nbrs: list[list[int]] = [[] for _ in range(self.n)]
            for u, v in self.edges:
                nbrs[u].append(int(v))
                nbrs[v].append(int(u))
            self._adj = [np.array(sorted(a), dtype=np.int64) for a in nbrs]
        return self._adj


@dataclass
class NormalizedAdjacency:
    """Sparse symmetric D^{-1/2} (A + I) D^{-1/2} with self loops added.

    Degrees count the self loop, so an isolated node gets the single
    entry A_hat[v, v] = 1.
    """

    n: int
    mat: sp.csr_matrix

    def propagate(self, x: np.ndarray) -> np.ndarray:
        """Multiply A_hat @ x, accumulating in float64."""
        return self.mat @ np.asarray(x, dtype=np.float64)

    def to_dense(self) -> np.ndarray:
        return np.asarray(self.mat.todense(), dtype=np.float64)


def normalize_adjacency(
    g: Graph, edge_mask: np.ndarray | None = None
) -> NormalizedAdjacency:
    """Build the symmetric-normalized adjacency with self loops.

    Args:
        g: the graph.
        edge_mask: optional boolean array over g.edges rows; masked-out
            edges are dropped before normalizing (degrees shrink
            accordingly). Self loops are always kept.
    """
    edges = g.edges
    if edge_mask is not None:
        if edge_mask.shape != (edges.shape[0],):
            raise ArgumentError("edge_mask must have one entry per edge")
        edges = edges[edge_mask]
    u = edges[:, 0]
    v = edges[:, 1]
    deg = np.ones(g.n, dtype=np.float64)  # self loop
    np.add.at(deg, u, 1.0)
    np.add.at(deg, v, 1.0)
    inv_sqrt = 1.0 / np.sqrt(deg)
    loops = np.arange(g.n, dtype=np.int64)
    rows = np.concatenate([u, v, loops])
    cols = np.concatenate([v, u, loops])
    vals = inv_sqrt[rows] * inv_sqrt[cols]
    mat = sp.csr_matrix((vals, (rows, cols)), shape=(g.n, g.n), dtype=np.float64)
    return NormalizedAdjacency(n=g.n, mat=mat)


# ---------------------------------------------------------------------------
# on-disk formats
# ---------------------------------------------------------------------------


def _require(path: Path) -> Path:
    if not path.exists():
        raise IoError(f"missing file: {path}")
    return path


def _read_meta(d: Path) -> dict:
    with open(_require(d / "meta.json"), "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"meta.json is not valid JSON: {exc}") from exc
    for key in ("n", "d", "num_classes"):
        if key not in meta or not isinstance(meta[key], int) or meta[key] < 0:
            raise FormatError(f"meta.json must carry a non-negative int {key!r}")
    return meta


def _read_edges(path: Path, n: int) -> np.ndarray:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{path.name} line {lineno}: expected u<TAB>v")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise FormatError(
                    f"{path.name} line {lineno}: non-integer endpoint"
                ) from exc
            if u == v:
                raise FormatError(f"{path.name} line {lineno}: self loop ({u},{v})")
            if not (0 <= u < n) or not (0 <= v < n):
                raise FormatError(
                    f"{path.name} line {lineno}: endpoint out of range for n={n}"
                )
            pairs.append((min(u, v), max(u, v)))
    if not pairs:
        return np.zeros((0, 2), dtype=np.int64)
    edges = np.array(pairs, dtype=np.int64)
    edges = np.unique(edges, axis=0)
    return edges


def _read_features(d: Path, n: int, dim: int) -> np.ndarray:
    f32 = d / "features.f32"
    tsv = d / "features.tsv"
    if f32.exists():
        raw = np.fromfile(f32, dtype="<f4")
        if raw.size != n * dim:
            raise FormatError(
                f"features.f32 holds {raw.size} values, expected {n * dim}"
            )
        x = raw.reshape(n, dim)
    elif tsv.exists():
        rows = []
        with open(tsv, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != dim:
                    raise FormatError(
                        f"features.tsv line {lineno}: expected {dim} values, "
                        f"got {len(parts)}"
                    )
                try:
                    rows.append([float(p) for p in parts])
                except ValueError as exc:
                    raise FormatError(
                        f"features.tsv line {lineno}: non-numeric value"
                    ) from exc
        if len(rows) != n:
            raise FormatError(f"features.tsv has {len(rows)} rows, expected {n}")
        x = np.array(rows, dtype=np.float32)
    else:
        raise IoError(f"missing file: {f32} (or features.tsv)")
    x = np.asarray(x, dtype=np.float32)
    if not np.all(np.isfinite(x)):
        raise FormatError("features contain non-finite values")
    return x


def _read_labels(path: Path, n: int, num_classes: int) -> np.ndarray:
    truth = np.full(n, -1, dtype=np.int64)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"labels.tsv line {lineno}: expected node<TAB>class")
            try:
                node, cls = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise FormatError(
                    f"labels.tsv line {lineno}: non-integer field"
                ) from exc
            if not (0 <= node < n):
                raise FormatError(f"labels.tsv line {lineno}: node {node} out of range")
            if not (0 <= cls < num_classes):
                raise FormatError(f"labels.tsv line {lineno}: class {cls} out of range")
            if truth[node] != -1:
                raise FormatError(f"labels.tsv line {lineno}: node {node} repeated")
            truth[node] = cls
    missing = np.flatnonzero(truth < 0)
    if missing.size:
        raise FormatError(f"labels.tsv: node {int(missing[0])} has no label")
    return truth


def load_graph(directory: str | Path) -> Graph:
    """Load a graph directory, validating every format rule.

    Raises:
        IoError: a required file is missing.
        FormatError: a file exists but violates the format.
    """
    d = Path(directory)
    if not d.is_dir():
        raise IoError(f"graph directory does not exist: {d}")
    meta = _read_meta(d)
    n, dim, num_classes = meta["n"], meta["d"], meta["num_classes"]
    edges = _read_edges(_require(d / "edges.tsv"), n)
    features = _read_features(d, n, dim)
    truth = None
    if (d / "labels.tsv").exists():
        truth = _read_labels(d / "labels.tsv", n, num_classes)
    g = Graph(n=n, edges=edges, features=features, num_classes=num_classes, truth=truth)
    g.validate()
    return g


def save_graph(g: Graph, directory: str | Path) -> None:
    """Write meta.json, edges.tsv, features.f32, and labels.tsv (if truth)."""
    g.validate()
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    meta = {"n": g.n, "d": g.dim, "num_classes": g.num_classes}
    with open(d / "meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")
    with open(d / "edges.tsv", "w", encoding="utf-8") as fh:
        for u, v in g.edges:
            fh.write(f"{u}\t{v}\n")
    np.asarray(g.features, dtype="<f4").tofile(d / "features.f32")
    if g.truth is not None:
        with open(d / "labels.tsv", "w", encoding="utf-8") as fh:
            for node, cls in enumerate(g.truth):
                fh.write(f"{node}\t{cls}\n")


def save_embeddings(emb: np.ndarray, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    emb = np.asarray(emb)
    if emb.ndim != 2:
        raise ArgumentError("embeddings must be a 2-d array")
    np.asarray(emb, dtype="<f4").tofile(d / "embeddings.f32")
    meta = {"n": int(emb.shape[0]), "e": int(emb.shape[1])}
    with open(d / "embeddings.meta.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True)
        fh.write("\n")


def load_labels(path: str | Path) -> np.ndarray:
    """Read a standalone labels.tsv; node count inferred from coverage."""
    p = _require(Path(path))
    rows: dict[int, int] = {}
    with open(p, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"{p.name} line {lineno}: expected node<TAB>class")
            try:
                node, cls = int(parts[0]), int(parts[1])
            except ValueError as exc:
                raise FormatError(f"{p.name} line {lineno}: non-integer field") from exc
            if node < 0 or cls < 0:
                raise FormatError(f"{p.name} line {lineno}: negative field")
            if node in rows:
                raise FormatError(f"{p.name} line {lineno}: node {node} repeated")
            rows[node] = cls
    if not rows:
        raise FormatError(f"{p.name}: no label rows")
    n = max(rows) + 1
    if len(rows) != n:
        missing = next(v for v in range(n) if v not in rows)
        raise FormatError(f"{p.name}: node {missing} has no label")
    truth = np.empty(n, dtype=np.int64)
    for node, cls in rows.items():
        truth[node] = cls
    return truth


def load_embeddings(directory: str | Path) -> np.ndarray:
    d = Path(directory)
    with open(_require(d / "embeddings.meta.json"), "r", encoding="utf-8") as fh:
        try:
            meta = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"embeddings.meta.json is not valid JSON: {exc}") from exc
    if "n" not in meta or "e" not in meta:
        raise FormatError("embeddings.meta.json must carry n and e")
    n, e = int(meta["n"]), int(meta["e"])
    raw = np.fromfile(_require(d / "embeddings.f32"), dtype="<f4")
    if raw.size != n * e:
        raise FormatError(f"embeddings.f32 holds {raw.size} values, expected {n * e}")
    emb = raw.reshape(n, e)
    if not np.all(np.isfinite(emb)):
        raise FormatError("embeddings contain non-finite values")
    return emb
