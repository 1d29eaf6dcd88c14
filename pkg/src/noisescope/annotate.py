"""Noisy label acquisition through pluggable annotators.

Two annotators implement the same interface: a simulated oracle that
draws labels from a planted confusion tensor (optionally conditioned on
a cluster partition), and an HTTP client for a chat-completions-style
LLM endpoint with self-consistency voting. Downstream stages consume
only the resulting AnnotationSet and never care which one produced it.
"""

from __future__ import annotations

import ast
import json
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .cluster import ClusterModel
from .errors import AnnotationError, ArgumentError, FormatError, IoError
from .rng import rng_for
from .seeds import SeedPlan

__all__ = [
    "Annotation",
    "AnnotationSet",
    "PlantedNoiseModel",
    "global_noise",
    "class_conditional_noise",
    "cluster_conditional_noise",
    "simulate_annotations",
    "llm_annotate",
    "probe_split",
    "SimulatedAnnotator",
    "LlmAnnotator",
    "save_annotations",
    "load_annotations",
    "majority_label",
    "build_prompt",
    "parse_answer",
]

ROW_SUM_TOL = 1e-9

PROMPT_TEMPLATE = (
    "You are a model that is especially good at classifying a paper's "
    "category. I will first give you all the possible categories and their "
    "explanation. Please answer the following question: What is the "
    "category of this paper?\n\n"
    "Categories:\n{categories}\n\n"
    "Target paper:\n{text}\n\n"
    "Answer format:\n"
    "Analyze the question step by step. Output your answer together with a "
    "confidence ranging from 0 to 100, as a single-element list of Python "
    "dicts, and output only the one answer you think is most likely:\n"
    '[{{"answer": <answer>, "confidence": <confidence>}}]'
)


@dataclass
class Annotation:
    node: int
    label: int
    is_probe: bool
    votes: list[tuple[int, float]]
    source: str = "simulated"


@dataclass
class AnnotationSet:
    """Node-keyed annotations plus the ids that failed acquisition."""

    records: dict[int, Annotation] = field(default_factory=dict)
    failed: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, node: int) -> bool:
        return node in self.records

    def nodes(self) -> list[int]:
        return sorted(self.records)

    def labels(self) -> dict[int, int]:
        return {v: a.label for v, a in self.records.items()}

    def probe_nodes(self) -> list[int]:
        return sorted(v for v, a in self.records.items() if a.is_probe)

    def merge(self, other: "AnnotationSet") -> "AnnotationSet":
        merged = dict(self.records)
        merged.update(other.records)
        return AnnotationSet(
            records=merged, failed=sorted(set(self.failed) | set(other.failed))
        )

    def validate(self, num_classes: int) -> None:
        for v, a in self.records.items():
            if not (0 <= a.label < num_classes):
                raise FormatError(f"node {v}: label {a.label} out of range")
            if not a.votes:
                raise FormatError(f"node {v}: annotation carries no votes")
            counts: dict[int, int] = {}
            for lab, _ in a.votes:
                counts[lab] = counts.get(lab, 0) + 1
            top = max(counts.values())
            if counts.get(a.label, 0) != top:
                raise FormatError(f"node {v}: label is not a majority vote")


@dataclass
class PlantedNoiseModel:
    """A row-stochastic confusion tensor the simulated annotator draws from.

    kind selects how the first axis is indexed: cluster_conditional uses
    the node's cluster id, the other kinds collapse it to a single slice.
    """

    kind: str  # global | class_conditional | cluster_conditional
    tensor: np.ndarray  # (K, C, C)
    seed: int

    def __post_init__(self) -> None:
        self.tensor = np.asarray(self.tensor, dtype=np.float64)
        if self.kind not in ("global", "class_conditional", "cluster_conditional"):
            raise ArgumentError(f"unknown noise kind: {self.kind!r}")
        if self.tensor.ndim != 3 or self.tensor.shape[1] != self.tensor.shape[2]:
            raise ArgumentError("tensor must be (K, C, C)")
        if self.kind != "cluster_conditional" and self.tensor.shape[0] != 1:
            raise ArgumentError(f"kind {self.kind!r} requires a single slice")
        if np.any(self.tensor < 0):
            raise ArgumentError("tensor entries must be >= 0")
        sums = self.tensor.sum(axis=2)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOL):
            raise ArgumentError("tensor rows must sum to 1")

    @property
    def num_classes(self) -> int:
        return int(self.tensor.shape[1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "tensor": self.tensor.tolist(), "seed": self.seed}

    @staticmethod
    def from_dict(payload: dict) -> "PlantedNoiseModel":
        for key in ("kind", "tensor", "seed"):
            if key not in payload:
                raise FormatError(f"noise model missing key {key!r}")
        return PlantedNoiseModel(
            kind=payload["kind"],
            tensor=np.asarray(payload["tensor"], dtype=np.float64),
            seed=int(payload["seed"]),
        )


def _rows_from_diag(diag: np.ndarray) -> np.ndarray:
    """Rows with the given diagonal and the rest spread uniformly."""
    C = diag.shape[-1]
    if C < 2:
        raise ArgumentError("need at least 2 classes")
    if np.any(diag < 0) or np.any(diag > 1):
        raise ArgumentError("diagonal values must lie in [0, 1]")
    off = (1.0 - diag) / (C - 1)
    rows = np.repeat(off[..., :, None], C, axis=-1)
    idx = np.arange(C)
    rows[..., idx, idx] = diag
    return rows


def global_noise(diag: float, num_classes: int, seed: int = 0) -> PlantedNoiseModel:
    """One accuracy level everywhere; off-diagonal mass uniform."""
    d = np.full(num_classes, float(diag))
    return PlantedNoiseModel("global", _rows_from_diag(d)[None, :, :], seed)


def class_conditional_noise(diag: np.ndarray, seed: int = 0) -> PlantedNoiseModel:
    """Per-class accuracies, identical in every cluster."""
    d = np.asarray(diag, dtype=np.float64)
    return PlantedNoiseModel("class_conditional", _rows_from_diag(d)[None, :, :], seed)


def cluster_conditional_noise(diag: np.ndarray, seed: int = 0) -> PlantedNoiseModel:
    """Per-(cluster, class) accuracies; diag has shape (K, C)."""
    d = np.asarray(diag, dtype=np.float64)
    if d.ndim != 2:
        raise ArgumentError("cluster-conditional diag must be (K, C)")
    return PlantedNoiseModel("cluster_conditional", _rows_from_diag(d), seed)


def _draw_label(row: np.ndarray, rng: np.random.Generator) -> int:
    u = rng.random()
    return int(np.searchsorted(np.cumsum(row), u, side="right").clip(0, row.size - 1))


def simulate_annotations(
    truth: np.ndarray,
    cm: ClusterModel | None,
    model: PlantedNoiseModel,
    plan: SeedPlan,
    nodes: list[int] | None = None,
) -> AnnotationSet:
    """Draw one noisy label per seed from the planted tensor.

    Each node gets its own derived RNG stream, so annotating in batches
    or all at once yields identical labels. cm may be None unless the
    model is cluster-conditional.

    Args:
        truth: (n,) true class ids; must cover every seed.
        cm: partition supplying k_v for cluster-conditional noise.
        model: the planted confusion tensor.
        plan: seed plan; the probe prefix sets is_probe.
        nodes: optional subset of plan.seeds to annotate (default all).
    """
    truth = np.asarray(truth, dtype=np.int64)
    if model.kind == "cluster_conditional":
        if cm is None:
            raise ArgumentError("cluster-conditional noise needs a cluster model")
        if model.tensor.shape[0] != cm.K:
            raise ArgumentError(
                f"tensor has {model.tensor.shape[0]} cluster slices, "
                f"partition has {cm.K}"
            )
    targets = plan.seeds if nodes is None else list(nodes)
    probe = set(plan.probe)
    plan_set = set(plan.seeds)
    records: dict[int, Annotation] = {}
    for v in targets:
        if v not in plan_set:
            raise ArgumentError(f"node {v} is not in the seed plan")
        if not (0 <= truth[v] < model.num_classes):
            raise ArgumentError(f"node {v} has no usable truth label")
        k = int(cm.assignment[v]) if model.kind == "cluster_conditional" else 0
        row = model.tensor[k, int(truth[v])]
        label = _draw_label(row, rng_for(model.seed, "sim", v))
        records[v] = Annotation(
            node=v,
            label=label,
            is_probe=v in probe,
            votes=[(label, 100.0)],
            source="simulated",
        )
    return AnnotationSet(records=records)


# ---------------------------------------------------------------------------
# LLM client
# ---------------------------------------------------------------------------

_ANSWER_RE = re.compile(r"\[\s*\{.*?\}\s*\]", re.DOTALL)


def build_prompt(text: str, labelset: list[str]) -> str:
    categories = ", ".join(labelset)
    return PROMPT_TEMPLATE.format(categories=f"[{categories}]", text=text)


def _normalize(name: str) -> str:
    return re.sub(r"[\s_\-]+", "", name.strip().lower())


def parse_answer(content: str, labelset: list[str]) -> tuple[int, float] | None:
    """Extract (class id, confidence) from a model reply, or None.

    Accepts the last bracketed single-element answer list in the reply,
    JSON or Python-literal quoted. The answer string is matched against
    the label set ignoring case, spaces, hyphens, and underscores; a bare
    class index is also accepted.
    """
    matches = _ANSWER_RE.findall(content)
    if not matches:
        return None
    raw = matches[-1]
    parsed = None
    for loader in (json.loads, ast.literal_eval):
        try:
            parsed = loader(raw)
            break
        except (ValueError, SyntaxError):
            continue
    if not isinstance(parsed, list) or len(parsed) != 1:
        return None
    entry = parsed[0]
    if not isinstance(entry, dict) or "answer" not in entry or "confidence" not in entry:
        return None
    try:
        confidence = float(entry["confidence"])
    except (TypeError, ValueError):
        return None
    confidence = float(np.clip(confidence, 0.0, 100.0))
    answer = entry["answer"]
    if isinstance(answer, bool):
        return None
    if isinstance(answer, int):
        return (answer, confidence) if 0 <= answer < len(labelset) else None
    if not isinstance(answer, str):
        return None
    wanted = _normalize(answer)
    for idx, name in enumerate(labelset):
        if _normalize(name) == wanted:
            return (idx, confidence)
    return None


def majority_label(votes: list[tuple[int, float]]) -> int:
    """Majority vote; ties break by summed confidence, then lowest class id."""
    if not votes:
        raise ArgumentError("cannot take a majority of zero votes")
    counts: dict[int, int] = {}
    conf: dict[int, float] = {}
    for lab, c in votes:
        counts[lab] = counts.get(lab, 0) + 1
        conf[lab] = conf.get(lab, 0.0) + c
    top = max(counts.values())
    tied = [lab for lab, cnt in counts.items() if cnt == top]
    if len(tied) == 1:
        return tied[0]
    best_conf = max(conf[lab] for lab in tied)
    tied = [lab for lab in tied if conf[lab] == best_conf]
    return min(tied)


def _post_with_backoff(
    endpoint: str,
    payload: dict,
    headers: dict,
    timeout: float,
    attempts: int,
) -> str:
    delay = 1.0
    last_err: Exception | None = None
    for attempt in range(attempts):
        try:
            resp = requests.post(endpoint, json=payload, headers=headers, timeout=timeout)
            if resp.status_code >= 500 or resp.status_code == 429:
                raise AnnotationError(f"endpoint returned {resp.status_code}")
            if resp.status_code != 200:
                raise AnnotationError(
                    f"endpoint returned {resp.status_code}: {resp.text[:200]}"
                )
            body = resp.json()
            return body["choices"][0]["message"]["content"]
        except (requests.RequestException, KeyError, ValueError, AnnotationError) as exc:
            last_err = exc
            if attempt + 1 < attempts:
                time.sleep(delay)
                delay *= 2.0
    raise AnnotationError(f"request failed after {attempts} attempts: {last_err}")


def llm_annotate(
    plan: SeedPlan,
    texts: dict[int, str],
    labelset: list[str],
    endpoint: str,
    n_votes: int = 3,
    model: str = "gpt-4o-mini",
    temperature: float = 0.7,
    max_in_flight: int = 4,
    timeout: float = 60.0,
    parse_retries: int = 3,
    http_retries: int = 3,
    nodes: list[int] | None = None,
) -> AnnotationSet:
    """Annotate seeds via a chat-completions endpoint with n-vote self-consistency.

    Each node issues n_votes independent requests; replies are parsed for
    the single-element answer list and majority-voted. Unparseable replies
    are retried up to parse_retries times per vote; a node whose votes all
    fail parsing lands in AnnotationSet.failed instead of being imputed.
    HTTP-level failures are retried with exponential backoff and raise
    AnnotationError once exhausted.

    The API key is read from the NOISESCOPE_API_KEY environment variable
    when present and sent as a bearer token.
    """
    if n_votes < 1:
        raise ArgumentError(f"n_votes must be >= 1, got {n_votes}")
    targets = plan.seeds if nodes is None else list(nodes)
    missing = [v for v in targets if v not in texts]
    if missing:
        raise ArgumentError(f"texts missing for nodes {missing[:5]}")
    headers = {"Content-Type": "application/json"}
    api_key = os.environ.get("NOISESCOPE_API_KEY", "")
    if api_key:
        headers["Authorization"] = f"Bearer {api_key}"

    def one_vote(node: int) -> tuple[int, float] | None:
        prompt = build_prompt(texts[node], labelset)
        payload = {
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "n": 1,
            "temperature": temperature,
        }
        for _ in range(parse_retries):
            content = _post_with_backoff(endpoint, payload, headers, timeout, http_retries)
            vote = parse_answer(content, labelset)
            if vote is not None:
                return vote
        return None

    def annotate_node(node: int) -> tuple[int, list[tuple[int, float]]]:
        votes = []
        for _ in range(n_votes):
            vote = one_vote(node)
            if vote is not None:
                votes.append(vote)
        return node, votes

    results: dict[int, list[tuple[int, float]]] = {}
    with ThreadPoolExecutor(max_workers=max(1, max_in_flight)) as pool:
        for node, votes in pool.map(annotate_node, targets):
            results[node] = votes

    probe = set(plan.probe)
    records: dict[int, Annotation] = {}
    failed: list[int] = []
    for node in targets:
        votes = results[node]
        if not votes:
            failed.append(node)
            continue
        records[node] = Annotation(
            node=node,
            label=majority_label(votes),
            is_probe=node in probe,
            votes=votes,
            source="llm",
        )
    return AnnotationSet(records=records, failed=sorted(failed))


def probe_split(ann: AnnotationSet, plan: SeedPlan) -> tuple[AnnotationSet, AnnotationSet]:
    """Split an AnnotationSet into (probe prefix, rest) by plan order."""
    probe_ids = set(plan.probe)
    probe = AnnotationSet(
        records={v: a for v, a in ann.records.items() if v in probe_ids}
    )
    rest = AnnotationSet(
        records={v: a for v, a in ann.records.items() if v not in probe_ids},
        failed=list(ann.failed),
    )
    return probe, rest


# ---------------------------------------------------------------------------
# annotator objects the pipeline can hold
# ---------------------------------------------------------------------------


class SimulatedAnnotator:
    """Stands in for the external oracle; holds truth the pipeline never sees."""

    def __init__(
        self,
        truth: np.ndarray,
        noise: PlantedNoiseModel,
        planted_cm: ClusterModel | None = None,
    ) -> None:
        self.truth = np.asarray(truth, dtype=np.int64)
        self.noise = noise
        self.planted_cm = planted_cm

    def annotate(self, plan: SeedPlan, nodes: list[int] | None = None) -> AnnotationSet:
        return simulate_annotations(self.truth, self.planted_cm, self.noise, plan, nodes)


class LlmAnnotator:
    def __init__(
        self,
        texts: dict[int, str],
        labelset: list[str],
        endpoint: str,
        model: str = "gpt-4o-mini",
        n_votes: int = 3,
        temperature: float = 0.7,
        max_in_flight: int = 4,
        timeout: float = 60.0,
    ) -> None:
        self.texts = texts
        self.labelset = labelset
        self.endpoint = endpoint
        self.model = model
        self.n_votes = n_votes
        self.temperature = temperature
        self.max_in_flight = max_in_flight
        self.timeout = timeout

    def annotate(self, plan: SeedPlan, nodes: list[int] | None = None) -> AnnotationSet:
        return llm_annotate(
            plan,
            self.texts,
            self.labelset,
            self.endpoint,
            n_votes=self.n_votes,
            model=self.model,
            temperature=self.temperature,
            max_in_flight=self.max_in_flight,
            timeout=self.timeout,
            nodes=nodes,
        )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_annotations(ann: AnnotationSet, path: str | Path) -> None:
    """Write annotations.jsonl, one record per line, sorted by node id."""
    with open(path, "w", encoding="utf-8") as fh:
        for v in ann.nodes():
            a = ann.records[v]
            line = {
                "node": a.node,
                "label": a.label,
                "probe": a.is_probe,
                "votes": [[lab, conf] for lab, conf in a.votes],
                "source": a.source,
            }
            fh.write(json.dumps(line, sort_keys=True))
            fh.write("\n")
        for v in sorted(ann.failed):
            fh.write(json.dumps({"node": v, "failed": True}, sort_keys=True))
            fh.write("\n")


def load_annotations(path: str | Path) -> AnnotationSet:
    p = Path(path)
    if not p.exists():
        raise IoError(f"missing file: {p}")
    records: dict[int, Annotation] = {}
    failed: list[int] = []
    with open(p, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{p.name} line {lineno}: invalid JSON") from exc
            if obj.get("failed"):
                failed.append(int(obj["node"]))
                continue
            for key in ("node", "label", "probe", "votes"):
                if key not in obj:
                    raise FormatError(f"{p.name} line {lineno}: missing {key!r}")
            node = int(obj["node"])
            records[node] = Annotation(
                node=node,
                label=int(obj["label"]),
                is_probe=bool(obj["probe"]),
                votes=[(int(lab), float(conf)) for lab, conf in obj["votes"]],
                source=str(obj.get("source", "llm")),
            )
    return AnnotationSet(records=records, failed=sorted(failed))
