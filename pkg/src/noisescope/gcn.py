"""A from-scratch two-layer graph convolutional network in numpy.

forward:  softmax(A_hat @ relu(A_hat @ X @ W1 + b1) @ W2 + b2)

Training minimizes mean cross-entropy over labeled nodes plus an
early-learning regularizer lambda * mean log(1 - <p_hat, t>) whose
targets t are an exponential moving average of the model's own
predictions; the EMA is updated after each optimizer step. Everything
runs in float64 with analytic gradients, AdamW-style decoupled weight
decay, inverted dropout on both layer inputs, and per-epoch edge
dropout that rebuilds the normalized adjacency.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError, IoError, TrainingDiverged
from .graphio import Graph, NormalizedAdjacency, normalize_adjacency

__all__ = [
    "GcnModel",
    "TrainConfig",
    "ElrState",
    "forward",
    "loss_and_grad",
    "train",
    "predict",
    "save_model",
    "load_model",
]

INNER_CLAMP = 1.0 - 1e-7  # <p_hat, t> is clamped below this inside the log


@dataclass
class GcnModel:
    W1: np.ndarray  # (d, h)
    b1: np.ndarray  # (h,)
    W2: np.ndarray  # (h, C)
    b2: np.ndarray  # (C,)
    seed: int = 0

    @property
    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {
            "W1": self.W1.shape,
            "b1": self.b1.shape,
            "W2": self.W2.shape,
            "b2": self.b2.shape,
        }

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def validate(self) -> None:
        d, h = self.W1.shape
        h2, C = self.W2.shape
        if h != h2 or self.b1.shape != (h,) or self.b2.shape != (C,):
            raise ArgumentError("parameter shapes are inconsistent")
        for name, p in self.params().items():
            if not np.all(np.isfinite(p)):
                raise ArgumentError(f"parameter {name} contains non-finite values")


@dataclass
class TrainConfig:
    epochs: int = 300
    lr: float = 3e-3
    weight_decay: float = 5e-4
    dropout: float = 0.7
    hidden: int = 64
    elr_lambda: float = 3.0
    elr_beta: float = 0.9
    edge_dropout_p: float = 0.1

    def validate(self) -> None:
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.hidden < 1:
            raise ArgumentError(f"hidden must be >= 1, got {self.hidden}")
        if self.lr < 0 or self.weight_decay < 0 or self.elr_lambda < 0:
            raise ArgumentError("rates must be non-negative")
        if not (0.0 <= self.dropout < 1.0):
            raise ArgumentError(f"dropout must be in [0, 1), got {self.dropout}")
        if not (0.0 <= self.edge_dropout_p < 1.0):
            raise ArgumentError(
                f"edge_dropout_p must be in [0, 1), got {self.edge_dropout_p}"
            )
        if not (0.0 < self.elr_beta < 1.0):
            raise ArgumentError(f"elr_beta must be in (0, 1), got {self.elr_beta}")


@dataclass
class ElrState:
    """Row-stochastic EMA targets for the early-learning regularizer."""

    targets: np.ndarray  # (n, C)

    @staticmethod
    def uniform(n: int, num_classes: int) -> "ElrState":
        return ElrState(targets=np.full((n, num_classes), 1.0 / num_classes))

    def update(self, probs: np.ndarray, rows: np.ndarray, beta: float) -> None:
        self.targets[rows] = beta * self.targets[rows] + (1.0 - beta) * probs[rows]


def _ids_and_labels(labels) -> tuple[np.ndarray, np.ndarray]:
    """Accept a LabelPool-like object (with .arrays()) or an (ids, labels) pair."""
    if hasattr(labels, "arrays"):
        ids, y = labels.arrays()
    else:
        ids, y = labels
    ids = np.asarray(ids, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if ids.size == 0:
        raise ArgumentError("no labeled nodes")
    return ids, y


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def forward(
    m: GcnModel,
    ahat: NormalizedAdjacency,
    x: np.ndarray,
    dropout_masks: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[np.ndarray, dict]:
    """Run the network; returns (probs, cache for backward).

    dropout_masks, when given, are pre-scaled inverted-dropout masks for
    the two layer inputs: entries are 0 or 1/keep_prob.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != m.W1.shape[0]:
        raise ArgumentError(
            f"feature dim {x.shape[1]} does not match W1 rows {m.W1.shape[0]}"
        )
    if x.shape[0] != ahat.n:
        raise ArgumentError("X and A_hat disagree on node count")
    x_mask, h_mask = dropout_masks if dropout_masks is not None else (None, None)
    x_in = x * x_mask if x_mask is not None else x
    xprop = ahat.propagate(x_in)
    a1 = xprop @ m.W1 + m.b1
    h = np.maximum(a1, 0.0)
    h_in = h * h_mask if h_mask is not None else h
    hprop = ahat.propagate(h_in)
    logits = hprop @ m.W2 + m.b2
    probs = _softmax(logits)
    cache = {
        "xprop": xprop,
        "a1": a1,
        "h_mask": h_mask,
        "hprop": hprop,
        "logits": logits,
        "probs": probs,
        "ahat": ahat,
    }
    return probs, cache


def loss_and_grad(
    m: GcnModel,
    ahat: NormalizedAdjacency,
    x: np.ndarray,
    labels,
    elr: ElrState,
    cfg: TrainConfig,
    dropout_masks: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[float, dict[str, np.ndarray], np.ndarray]:
    """Loss and analytic parameter gradients; pure in the ELR targets.

    Returns (loss, grads, probs). The caller owns the EMA target update;
    keeping this function side-effect-free makes finite-difference
    checking meaningful.
    """
    ids, y = _ids_and_labels(labels)
    C = m.W2.shape[1]
    if y.min() < 0 or y.max() >= C:
        raise ArgumentError(f"label id out of range for C={C}")
    probs, cache = forward(m, ahat, x, dropout_masks)
    mcount = ids.size
    p_lab = probs[ids]
    t_lab = elr.targets[ids]

    ce = float(-np.log(np.maximum(p_lab[np.arange(mcount), y], 1e-300)).mean())
    inner = np.sum(p_lab * t_lab, axis=1)
    inner_c = np.minimum(inner, INNER_CLAMP)
    elr_term = float(np.log(1.0 - inner_c).mean())
    loss = ce + cfg.elr_lambda * elr_term

    # d(loss)/d(logits), nonzero only on labeled rows
    glogits = np.zeros_like(probs)
    ce_part = p_lab.copy()
    ce_part[np.arange(mcount), y] -= 1.0
    glogits[ids] += ce_part / mcount
    if cfg.elr_lambda != 0.0:
        active = inner < INNER_CLAMP  # clamp flattens the log beyond this
        scale = np.where(active, -1.0 / (1.0 - inner_c), 0.0)
        elr_part = p_lab * (t_lab - inner[:, None]) * scale[:, None]
        glogits[ids] += cfg.elr_lambda * elr_part / mcount

    gW2 = cache["hprop"].T @ glogits
    gb2 = glogits.sum(axis=0)
    ghprop = glogits @ m.W2.T
    gh_in = ahat.propagate(ghprop)  # A_hat is symmetric
    gh = gh_in * cache["h_mask"] if cache["h_mask"] is not None else gh_in
    ga1 = gh * (cache["a1"] > 0.0)
    gW1 = cache["xprop"].T @ ga1
    gb1 = ga1.sum(axis=0)
    grads = {"W1": gW1, "b1": gb1, "W2": gW2, "b2": gb2}
    return loss, grads, probs


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class _Adam:
    lr: float
    weight_decay: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.step += 1
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * (g * g)
            mhat = self.m[name] / (1 - self.beta1**self.step)
            vhat = self.v[name] / (1 - self.beta2**self.step)
            p -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            # decoupled weight decay, scaled by lr so lr=0 freezes everything
            if name.startswith("W"):
                p -= self.lr * self.weight_decay * p


def train(
    g: Graph,
    ahat: NormalizedAdjacency,
    labels,
    cfg: TrainConfig,
    seed: int,
) -> GcnModel:
    """Full-batch training, deterministic given seed.

    Per epoch, in a fixed draw order: an edge-dropout mask rebuilds the
    normalized adjacency, then feature/hidden dropout masks are drawn,
    then one AdamW step is applied and the ELR targets are EMA-updated
    with the epoch's predictions.
    """
    cfg.validate()
    ids, y = _ids_and_labels(labels)
    rng = np.random.default_rng(seed)
    d = g.features.shape[1]
    C = g.num_classes
    model = GcnModel(
        W1=_glorot(rng, d, cfg.hidden),
        b1=np.zeros(cfg.hidden),
        W2=_glorot(rng, cfg.hidden, C),
        b2=np.zeros(C),
        seed=seed,
    )
    elr = ElrState.uniform(g.n, C)
    adam = _Adam(lr=cfg.lr, weight_decay=cfg.weight_decay)
    x = np.asarray(g.features, dtype=np.float64)
    keep = 1.0 - cfg.dropout
    params = model.params()
    for epoch in range(cfg.epochs):
        if cfg.edge_dropout_p > 0.0 and g.num_edges:
            edge_mask = rng.random(g.num_edges) >= cfg.edge_dropout_p
            ahat_e = normalize_adjacency(g, edge_mask)
        else:
            ahat_e = ahat
        if cfg.dropout > 0.0:
            x_mask = (rng.random((g.n, d)) < keep) / keep
            h_mask = (rng.random((g.n, cfg.hidden)) < keep) / keep
            masks = (x_mask, h_mask)
        else:
            masks = None
        loss, grads, probs = loss_and_grad(model, ahat_e, x, (ids, y), elr, cfg, masks)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        adam.update(params, grads)
        elr.update(probs, ids, cfg.elr_beta)
    model.validate()
    return model


def predict(
    m: GcnModel, ahat: NormalizedAdjacency, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Dropout-free forward pass: (probs, argmax with lowest-id ties)."""
    probs, _ = forward(m, ahat, x, dropout_masks=None)
    return probs, np.argmax(probs, axis=1).astype(np.int64)


def save_model(m: GcnModel, path: str | Path) -> None:
    payload = {
        "shapes": {k: list(v) for k, v in m.shapes.items()},
        "params": {k: v.ravel().tolist() for k, v in m.params().items()},
        "seed": m.seed,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def load_model(path: str | Path) -> GcnModel:
    p = Path(path)
    if not p.exists():
        raise IoError(f"missing file: {p}")
    with open(p, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{p.name} is not valid JSON: {exc}") from exc
    if "shapes" not in payload or "params" not in payload:
        raise FormatError(f"{p.name} missing shapes/params")
    arrays = {}
    for name, shape in payload["shapes"].items():
        flat = np.asarray(payload["params"][name], dtype=np.float64)
        if flat.size != int(np.prod(shape)):
            raise FormatError(f"{p.name}: parameter {name} has wrong length")
        arrays[name] = flat.reshape(shape)
    model = GcnModel(
        W1=arrays["W1"],
        b1=arrays["b1"],
        W2=arrays["W2"],
        b2=arrays["b2"],
        seed=int(payload.get("seed", 0)),
    )
    model.validate()
    return model
