"""Flat TOML configuration with section-prefixed keys.

A config file holds dotted keys like `gnn.lr`, `gate.alpha`,
`ilc.theta0`, `annotate.endpoint`. Unknown keys are rejected so typos
fail loudly instead of silently running with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, IoError
from .gcn import TrainConfig
from .pipeline import GateConfig, IlcConfig, RunConfig

__all__ = ["AnnotateSettings", "Settings", "load_config", "settings_from_flat"]


@dataclass
class AnnotateSettings:
    annotator: str = "sim"  # sim | llm
    noise_file: str | None = None
    endpoint: str | None = None
    model: str = "gpt-4o-mini"
    n_votes: int = 3
    temperature: float = 0.7
    max_in_flight: int = 4
    timeout: float = 60.0
    texts: str | None = None  # path to a JSON node->text map
    labelset: list[str] | None = None

    def validate(self) -> None:
        if self.annotator not in ("sim", "llm"):
            raise ConfigError(
                f"annotate.annotator must be 'sim' or 'llm', got {self.annotator!r}"
            )
        if self.annotator == "llm":
            if not self.endpoint:
                raise ConfigError("annotate.endpoint is required for the llm annotator")
            if not self.texts:
                raise ConfigError("annotate.texts is required for the llm annotator")
            if not self.labelset:
                raise ConfigError("annotate.labelset is required for the llm annotator")
        if self.n_votes < 1:
            raise ConfigError(f"annotate.n_votes must be >= 1, got {self.n_votes}")
        if self.timeout <= 0:
            raise ConfigError(f"annotate.timeout must be positive, got {self.timeout}")


@dataclass
class Settings:
    """Everything a CLI invocation needs: run knobs plus paths."""

    run: RunConfig = field(default_factory=RunConfig)
    annotate: AnnotateSettings = field(default_factory=AnnotateSettings)
    graph_dir: str | None = None
    out_dir: str | None = None
    embeddings_dir: str | None = None
    min_cell: int = 20

    def validate(self) -> None:
        self.run.validate()
        self.annotate.validate()
        if self.min_cell < 1:
            raise ConfigError(f"diagnose.min_cell must be >= 1, got {self.min_cell}")


def _flatten(tree: dict, prefix: str = "") -> dict:
    flat = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _take(flat: dict, key: str, default, caster):
    if key not in flat:
        return default
    value = flat.pop(key)
    try:
        return caster(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key!r}: bad value {value!r}") from exc


def _as_alpha(value) -> float | None:
    if isinstance(value, str):
        if value != "auto":
            raise ValueError(value)
        return None
    return float(value)


def _as_tau(value):
    if isinstance(value, list):
        return [float(t) for t in value]
    return float(value)


def _as_opt_int(value) -> int | None:
    iv = int(value)
    return None if iv == 0 else iv


def settings_from_flat(flat: dict) -> Settings:
    """Build Settings from a flat dotted-key mapping, rejecting extras."""
    flat = dict(flat)
    s = Settings()
    s.graph_dir = _take(flat, "graph_dir", None, str)
    s.out_dir = _take(flat, "out_dir", None, str)
    s.embeddings_dir = _take(flat, "embeddings_dir", None, str)
    s.min_cell = _take(flat, "diagnose.min_cell", 20, int)

    r = s.run
    r.mode = _take(flat, "mode", r.mode, str)
    r.seed = _take(flat, "seed", r.seed, int)
    r.k_mult = _take(flat, "cluster.k_mult", r.k_mult, float)
    r.hops = _take(flat, "cluster.hops", r.hops, int)
    r.budget = _take(flat, "seeds.budget", r.budget, _as_opt_int)
    frac = _take(flat, "seeds.budget_frac", None, float)
    r.budget_frac = frac if frac else None
    r.rho = _take(flat, "seeds.rho", r.rho, float)
    r.knn = _take(flat, "seeds.knn", r.knn, int)
    r.min_support = _take(flat, "noise.min_support", r.min_support, int)
    r.k_feat = _take(flat, "noise.k_feat", r.k_feat, int)

    t = r.train
    r.train = TrainConfig(
        epochs=_take(flat, "gnn.epochs", t.epochs, int),
        lr=_take(flat, "gnn.lr", t.lr, float),
        weight_decay=_take(flat, "gnn.weight_decay", t.weight_decay, float),
        dropout=_take(flat, "gnn.dropout", t.dropout, float),
        hidden=_take(flat, "gnn.hidden", t.hidden, int),
        elr_lambda=_take(flat, "gnn.elr_lambda", t.elr_lambda, float),
        elr_beta=_take(flat, "gnn.elr_beta", t.elr_beta, float),
        edge_dropout_p=_take(flat, "gnn.edge_dropout", t.edge_dropout_p, float),
    )
    gc = r.gate
    r.gate = GateConfig(
        tau_base=_take(flat, "gate.tau_base", gc.tau_base, _as_tau),
        alpha=_take(flat, "gate.alpha", gc.alpha, _as_alpha),
        expansion_rounds=_take(flat, "gate.expansion_rounds", gc.expansion_rounds, int),
        max_per_round=_take(flat, "gate.max_per_round", gc.max_per_round, _as_opt_int),
    )
    ic = r.ilc
    r.ilc = IlcConfig(
        theta0=_take(flat, "ilc.theta0", ic.theta0, float),
        beta=_take(flat, "ilc.beta", ic.beta, float),
        max_rounds=_take(flat, "ilc.max_rounds", ic.max_rounds, int),
    )

    a = s.annotate
    s.annotate = AnnotateSettings(
        annotator=_take(flat, "annotate.annotator", a.annotator, str),
        noise_file=_take(flat, "annotate.noise_file", a.noise_file, str),
        endpoint=_take(flat, "annotate.endpoint", a.endpoint, str),
        model=_take(flat, "annotate.model", a.model, str),
        n_votes=_take(flat, "annotate.n_votes", a.n_votes, int),
        temperature=_take(flat, "annotate.temperature", a.temperature, float),
        max_in_flight=_take(flat, "annotate.max_in_flight", a.max_in_flight, int),
        timeout=_take(flat, "annotate.timeout", a.timeout, float),
        texts=_take(flat, "annotate.texts", a.texts, str),
        labelset=_take(flat, "annotate.labelset", a.labelset, list),
    )

    if flat:
        raise ConfigError(f"unknown config keys: {sorted(flat)}")
    s.validate()
    return s


def load_config(path: str | Path) -> Settings:
    p = Path(path)
    if not p.exists():
        raise IoError(f"missing config file: {p}")
    try:
        with open(p, "rb") as fh:
            tree = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p.name} is not valid TOML: {exc}") from exc
    return settings_from_flat(_flatten(tree))
