"""Budgeted, label-blind seed selection with a cluster-interleaved probe prefix.

Every cluster gets a quota proportional to its size (largest-remainder
rounding, minimum 1 for nonempty clusters). Within a cluster, nodes are
ranked by centroid proximity plus local density, both z-normalized so
neither scale dominates. The final seed order interleaves clusters
round-robin, which guarantees the probe prefix covers every cluster
whenever it is long enough.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cluster import ClusterModel, choose_embedding
from .errors import ArgumentError, FormatError, IoError
from .graphio import Graph

__all__ = ["SeedPlan", "select_seeds", "budget_schedule", "save_plan", "load_plan"]

# Fractions of the full budget map to the per-class schedule 13/25/37/50.
_PER_CLASS_SCHEDULE = {0.25: 13, 0.5: 25, 0.75: 37, 1.0: 50}


@dataclass
class SeedPlan:
    """Ordered seed ids with the probe prefix marked off.

    seeds[:probe_size] is the probe set used for reliability estimation.
    """

    seeds: list[int]
    probe_size: int
    budget: int
    rho: float
    quotas: list[int]

    @property
    def probe(self) -> list[int]:
        return self.seeds[: self.probe_size]

    @property
    def rest(self) -> list[int]:
        return self.seeds[self.probe_size :]


def _quotas(sizes: np.ndarray, budget: int) -> np.ndarray:
    """Largest-remainder proportional quotas, min 1 per nonempty cluster."""
    n = int(sizes.sum())
    ideal = sizes * (budget / n)
    quotas = np.floor(ideal).astype(np.int64)
    quotas = np.minimum(quotas, sizes)
    nonempty = sizes > 0
    # Min 1 per nonempty cluster; only feasible while budget allows.
    if budget >= int(nonempty.sum()):
        quotas[nonempty & (quotas == 0)] = 1
    else:
        order = np.argsort(-sizes, kind="stable")
        quotas[:] = 0
        quotas[order[:budget]] = 1
        return quotas
    remainder = ideal - np.floor(ideal)
    while quotas.sum() < budget:
        room = nonempty & (quotas < sizes)
        if not np.any(room):
            break
        # Highest fractional remainder first; ties to the lower cluster id.
        cand = np.flatnonzero(room)
        k = cand[np.argmax(remainder[cand])]
        quotas[k] += 1
        remainder[k] -= 1.0
    while quotas.sum() > budget:
        cand = np.flatnonzero(quotas >= 2)
        if cand.size == 0:
            cand = np.flatnonzero(quotas >= 1)
        over = quotas[cand] - ideal[cand]
        k = cand[np.argmax(over)]
        quotas[k] -= 1
    return quotas


def _zscore(x: np.ndarray) -> np.ndarray:
    std = float(x.std())
    if std == 0.0:
        return np.zeros_like(x)
    return (x - x.mean()) / std


def select_seeds(
    g: Graph,
    cm: ClusterModel,
    budget: int,
    rho: float = 0.4,
    knn: int = 10,
    seed: int = 0,
    emb: np.ndarray | None = None,
) -> SeedPlan:
    """Pick the budgeted seed set S and its probe prefix.

    Args:
        g: the graph (only its size and features are consulted; labels are
            never read, so selection cannot leak supervision).
        cm: cluster partition whose centroids define "central".
        budget: number of seeds B; must not exceed n.
        rho: probe fraction in (0, 1); probe_size = ceil(rho * B).
        knn: neighborhood size for the density term.
        seed: accepted for interface stability; selection is fully
            deterministic (score ties break by lowest node id).
        emb: points the clustering was built on; defaults to the standard
            propagated-feature embedding of g.

    Returns:
        SeedPlan with round-robin cluster-interleaved seed order.
    """
    if budget > g.n:
        raise ArgumentError(f"budget {budget} exceeds node count {g.n}")
    if budget < 1:
        raise ArgumentError(f"budget must be >= 1, got {budget}")
    if not (0.0 < rho < 1.0):
        raise ArgumentError(f"rho must be in (0, 1), got {rho}")
    if cm.n != g.n:
        raise ArgumentError("cluster model does not match the graph")
    if emb is None:
        emb = choose_embedding(g)
    emb = np.asarray(emb, dtype=np.float64)
    if emb.shape[0] != g.n:
        raise ArgumentError("emb must have one row per node")

    sizes = np.bincount(cm.assignment, minlength=cm.K)
    quotas = _quotas(sizes, budget)

    ranked: list[list[int]] = []
    for k in range(cm.K):
        members = cm.members(k)
        q = int(quotas[k])
        if q == 0 or members.size == 0:
            ranked.append([])
            continue
        pts = emb[members]
        centroid_dist = np.linalg.norm(pts - cm.centroids[k], axis=1)
        if members.size > 1:
            pair = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
            np.fill_diagonal(pair, np.inf)
            kk = min(knn, members.size - 1)
            nearest = np.sort(pair, axis=1)[:, :kk]
            density = -nearest.mean(axis=1)
        else:
            density = np.zeros(1)
        score = _zscore(-centroid_dist) + _zscore(density)
        # Descending score; ties go to the lowest node id.
        order = np.lexsort((members, -score))
        ranked.append([int(members[i]) for i in order[:q]])

    seeds: list[int] = []
    depth = 0
    while len(seeds) < int(quotas.sum()):
        for k in range(cm.K):
            if depth < len(ranked[k]):
                seeds.append(ranked[k][depth])
        depth += 1
    probe_size = min(math.ceil(rho * budget), len(seeds))
    return SeedPlan(
        seeds=seeds,
        probe_size=probe_size,
        budget=budget,
        rho=rho,
        quotas=quotas.tolist(),
    )


def budget_schedule(full_budget: int, fraction: float) -> int:
    """Map a budget fraction onto the per-class schedule 13/25/37/50.

    full_budget must be the full 50-per-class budget (50 * C); the result
    is the scheduled per-class count times C.
    """
    if fraction not in _PER_CLASS_SCHEDULE:
        raise ArgumentError(
            f"fraction must be one of {sorted(_PER_CLASS_SCHEDULE)}, got {fraction}"
        )
    if full_budget % 50 != 0 or full_budget <= 0:
        raise ArgumentError(
            f"full budget must be a positive multiple of 50, got {full_budget}"
        )
    num_classes = full_budget // 50
    return _PER_CLASS_SCHEDULE[fraction] * num_classes


def save_plan(plan: SeedPlan, path: str | Path) -> None:
    payload = {
        "seeds": [int(v) for v in plan.seeds],
        "probe_size": plan.probe_size,
        "budget": plan.budget,
        "rho": plan.rho,
        "quotas": [int(q) for q in plan.quotas],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_plan(path: str | Path) -> SeedPlan:
    p = Path(path)
    if not p.exists():
        raise IoError(f"missing file: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p.name} is not valid JSON: {exc}") from exc
    for key in ("seeds", "probe_size", "budget", "rho", "quotas"):
        if key not in payload:
            raise FormatError(f"{p.name} must carry {key!r}")
    return SeedPlan(
        seeds=[int(v) for v in payload["seeds"]],
        probe_size=int(payload["probe_size"]),
        budget=int(payload["budget"]),
        rho=float(payload["rho"]),
        quotas=[int(q) for q in payload["quotas"]],
    )
