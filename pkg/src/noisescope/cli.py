"""Command-line interface.

Subcommands: gen, annotate, estimate, train, run, diagnose, sweep.
Every subcommand takes --seed and is bit-reproducible with the
simulated annotator. One master seed deterministically derives
per-stage sub-seeds, so a single stage can be re-run in isolation.
Exit codes: 0 success, 2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .annotate import (
    AnnotationSet,
    LlmAnnotator,
    SimulatedAnnotator,
    load_annotations,
    save_annotations,
)
from .cluster import ClusterModel, choose_embedding, kmeans, load_clusters, save_clusters
from .config import Settings, load_config
from .diagnose import diagnose, null_control, save_diagnostic
from .errors import (
    ArgumentError,
    ConfigError,
    FormatError,
    IoError,
    NoisescopeError,
)
from .figures import run_figure, sweep_figure
from .gcn import TrainConfig, predict, save_model, train
from .graphio import (
    load_embeddings,
    load_graph,
    load_labels,
    normalize_adjacency,
    save_graph,
)
from .noise import estimate_tc, save_tensor
from .pipeline import EvalContext, LabelPool, MODES, RunReport, run_cane, save_report
from .rng import derive_seed
from .seeds import save_plan, select_seeds
from .synth import SynthSpec, edge_homophily, generate, load_planted, save_planted
from .tables import render_diagnostic, render_run_report, render_sweep

__all__ = ["main", "build_parser"]

SWEEP_AXES = ("budget_frac", "rho", "k_mult", "mode")


# ---------------------------------------------------------------------------
# Shared helpers.


def _settings(args) -> Settings:
    s = load_config(args.config) if getattr(args, "config", None) else Settings()
    if getattr(args, "graph", None):
        s.graph_dir = args.graph
    if getattr(args, "out", None):
        s.out_dir = args.out
    if getattr(args, "mode", None):
        s.run.mode = args.mode
    if getattr(args, "seed", None) is not None:
        s.run.seed = args.seed
    return s


def _out_dir(path: str | None) -> Path:
    if not path:
        raise ConfigError("an output directory is required (--out)")
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _build_annotator(s: Settings, g, graph_dir: Path):
    if s.annotate.annotator == "llm":
        with open(s.annotate.texts, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        texts = {int(k): str(v) for k, v in raw.items()}
        return LlmAnnotator(
            texts=texts,
            labelset=list(s.annotate.labelset),
            endpoint=s.annotate.endpoint,
            model=s.annotate.model,
            n_votes=s.annotate.n_votes,
            temperature=s.annotate.temperature,
            max_in_flight=s.annotate.max_in_flight,
            timeout=s.annotate.timeout,
        )
    if g.truth is None:
        raise ConfigError("the simulated annotator needs labels.tsv in the graph dir")
    planted_path = (
        Path(s.annotate.noise_file) if s.annotate.noise_file else graph_dir / "planted.json"
    )
    if not planted_path.exists():
        raise ConfigError(
            f"no planted noise model at {planted_path}; "
            "generate one with `gen` or point annotate.noise_file at one"
        )
    assignment, noise = load_planted(planted_path)
    if assignment.size != g.n:
        raise FormatError(
            f"planted assignment covers {assignment.size} nodes, graph has {g.n}"
        )
    k = int(assignment.max()) + 1 if assignment.size else 1
    planted_cm = ClusterModel(
        K=k,
        assignment=assignment,
        centroids=np.zeros((k, 1)),
        inertia=0.0,
        seed=0,
    )
    return SimulatedAnnotator(g.truth, noise, planted_cm)


def _embedding(s: Settings, g, hops: int) -> np.ndarray:
    if s.embeddings_dir:
        return choose_embedding(g, load_embeddings(s.embeddings_dir), hops=hops)
    return choose_embedding(g, hops=hops)


def _write_json(payload: dict, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ": "))
        fh.write("\n")


# ---------------------------------------------------------------------------
# Subcommands.


def cmd_gen(args) -> int:
    if args.spec:
        p = Path(args.spec)
        if not p.exists():
            raise IoError(f"missing spec file: {p}")
        with open(p, "r", encoding="utf-8") as fh:
            try:
                payload = json.load(fh)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{p.name} is not valid JSON: {exc}") from exc
        spec = SynthSpec.from_dict(payload)
    else:
        spec = SynthSpec()
    if args.seed is not None:
        spec.seed = args.seed
    g, cm, noise = generate(spec)
    out = _out_dir(args.out)
    save_graph(g, out)
    save_planted(cm, noise, out / "planted.json", mixture=spec.mixture)
    print(
        f"generated n={g.n} edges={g.num_edges} classes={g.num_classes} "
        f"clusters={cm.K} homophily={edge_homophily(g):.3f} -> {out}"
    )
    return 0


def cmd_annotate(args) -> int:
    s = _settings(args)
    if args.budget is not None:
        s.run.budget = args.budget
    if args.rho is not None:
        s.run.rho = args.rho
    if args.annotator:
        s.annotate.annotator = args.annotator
    graph_dir = Path(s.graph_dir or "")
    g = load_graph(graph_dir)
    s.run.validate(g.num_classes)
    out = _out_dir(s.out_dir)
    seed = s.run.seed
    emb = _embedding(s, g.without_truth(), s.run.hops)
    K = max(1, int(round(s.run.k_mult * g.num_classes)))
    cm = kmeans(emb, K, derive_seed(seed, "cluster"))
    budget = s.run.budget if s.run.budget is not None else 50 * g.num_classes
    plan = select_seeds(
        g.without_truth(),
        cm,
        budget,
        rho=s.run.rho,
        knn=s.run.knn,
        seed=derive_seed(seed, "select"),
        emb=emb,
    )
    annotator = _build_annotator(s, g, graph_dir)
    ann = annotator.annotate(plan)
    ann.validate(g.num_classes)
    save_clusters(cm, out / "clusters.json")
    save_plan(plan, out / "plan.json")
    save_annotations(ann, out / "annotations.jsonl")
    print(
        f"annotated {len(ann)} of {len(plan.seeds)} seeds "
        f"(probe {plan.probe_size}, failed {len(ann.failed)}) -> {out}"
    )
    return 0


def cmd_estimate(args) -> int:
    s = _settings(args)
    g = load_graph(Path(s.graph_dir or ""))
    ann = load_annotations(args.annotations)
    cm = load_clusters(args.clusters)
    if cm.n != g.n:
        raise FormatError(f"clusters cover {cm.n} nodes, graph has {g.n}")
    probe_ids = ann.probe_nodes()
    if not probe_ids:
        raise FormatError("annotations carry no probe records")
    probe = AnnotationSet(records={v: ann.records[v] for v in probe_ids})
    # agreement neighbors live in the raw feature (or external embedding)
    # space, never the graph-propagated one
    if s.embeddings_dir:
        feat_emb = np.asarray(load_embeddings(s.embeddings_dir), dtype=np.float64)
    else:
        feat_emb = np.asarray(g.features, dtype=np.float64)
    tc = estimate_tc(
        probe,
        cm,
        g.without_truth(),
        feat_emb,
        min_support=args.min_support,
        k_feat=args.k_feat,
    )
    save_tensor(tc, args.tensor_out)
    diag = np.array([[tc.diag(k, c) for c in range(tc.C)] for k in range(tc.K)])
    cell_frac = float(np.mean([tc.backoff[k, c] == "cell" for k in range(tc.K) for c in range(tc.C)]))
    print(
        f"estimated tensor K={tc.K} C={tc.C} from {len(probe)} probe nodes: "
        f"mean diag {diag.mean():.3f}, cell-supported {100 * cell_frac:.0f}% "
        f"-> {args.tensor_out}"
    )
    return 0


def cmd_train(args) -> int:
    s = _settings(args)
    g = load_graph(Path(s.graph_dir or ""))
    ann = load_annotations(args.annotations)
    if len(ann) == 0:
        raise FormatError("annotation file holds no usable records")
    cfg = s.run.train
    if args.epochs is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if args.lr is not None:
        cfg = replace(cfg, lr=args.lr)
    if args.no_elr:
        cfg = replace(cfg, elr_lambda=0.0)
    g_run = g.without_truth()
    ahat = normalize_adjacency(g_run)
    pool = LabelPool.from_annotations(ann)
    model = train(g_run, ahat, pool, cfg, derive_seed(s.run.seed, "train"))
    save_model(model, args.model_out)
    x = np.asarray(g_run.features, dtype=np.float64)
    _, pred = predict(model, ahat, x)
    ids, labels = pool.arrays()
    agree = float(np.mean(pred[ids] == labels))
    print(
        f"trained on {len(pool)} labels for {cfg.epochs} epochs: "
        f"train-set agreement {agree:.3f} -> {args.model_out}"
    )
    return 0


def _run_once(g, s: Settings, annotator, eval_ctx, ext_emb, seed: int, mode: str):
    cfg = replace(s.run, seed=seed, mode=mode)
    return run_cane(g, cfg, annotator, eval_ctx, ext_emb)


def cmd_run(args) -> int:
    s = _settings(args)
    graph_dir = Path(s.graph_dir or "")
    g = load_graph(graph_dir)
    s.run.validate(g.num_classes)
    out = _out_dir(s.out_dir)
    annotator = _build_annotator(s, g, graph_dir)
    eval_ctx = EvalContext(truth=g.truth) if g.truth is not None else None
    ext_emb = load_embeddings(s.embeddings_dir) if s.embeddings_dir else None
    n_seeds = args.seeds
    if n_seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {n_seeds}")

    reports: list[RunReport] = []
    for i in range(n_seeds):
        rep = _run_once(g, s, annotator, eval_ctx, ext_emb, s.run.seed + i, s.run.mode)
        reports.append(rep)
        stem = "report" if n_seeds == 1 else f"report_seed{rep.seed}"
        save_report(rep, out / f"{stem}.json")
        _write_rounds_tsv(rep, out / ("rounds.tsv" if n_seeds == 1 else f"rounds_seed{rep.seed}.tsv"))
        run_figure(rep.to_dict(), out / ("rounds.png" if n_seeds == 1 else f"rounds_seed{rep.seed}.png"))
        with open(out / ("report.txt" if n_seeds == 1 else f"report_seed{rep.seed}.txt"), "w", encoding="utf-8") as fh:
            fh.write(render_run_report(rep.to_dict()))
        sys.stdout.write(render_run_report(rep.to_dict()))
    if n_seeds > 1:
        accs = [r.accuracy for r in reports if r.accuracy is not None]
        agg = {
            "mode": s.run.mode,
            "first_seed": s.run.seed,
            "seeds": n_seeds,
            "mean_accuracy": float(np.mean(accs)) if accs else None,
            "std_accuracy": float(np.std(accs)) if accs else None,
            "per_seed": [r.to_dict() for r in reports],
        }
        _write_json(agg, out / "aggregate.json")
        if accs:
            print(
                f"mean accuracy over {n_seeds} seeds: "
                f"{100 * agg['mean_accuracy']:.2f}% +- {100 * agg['std_accuracy']:.2f}%"
            )
    return 0


def _write_rounds_tsv(rep: RunReport, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("phase\tround\tcount\n")
        for i, c in enumerate(rep.expansion_added, start=1):
            fh.write(f"expand\t{i}\t{c}\n")
        for i, c in enumerate(rep.per_round_corrections, start=1):
            fh.write(f"correct\t{i}\t{c}\n")


def cmd_diagnose(args) -> int:
    truth = load_labels(args.labels)
    cm = load_clusters(args.clusters)
    if cm.n != truth.size:
        raise FormatError(f"clusters cover {cm.n} nodes, labels cover {truth.size}")
    if args.null_control is not None:
        report = null_control(
            truth, cm, args.null_control, args.seed or 0, min_cell=args.min_cell
        )
    else:
        if not args.annotations:
            raise ConfigError("--annotations is required unless --null-control is set")
        ann = load_annotations(args.annotations)
        report = diagnose(ann, truth, cm, min_cell=args.min_cell)
    out = _out_dir(args.out)
    save_diagnostic(report, out / "diagnostic.json")
    text = render_diagnostic(report.to_dict())
    with open(out / "diagnostic.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    with open(out / "cells.tsv", "w", encoding="utf-8") as fh:
        fh.write("cluster\tclass\taccuracy\tsupport\tdeviation\n")
        for c in report.cells:
            fh.write(
                f"{c.cluster}\t{c.cls}\t{c.accuracy:.6f}\t{c.support}\t{c.deviation:.6f}\n"
            )
    sys.stdout.write(text)
    return 0


def _sweep_worker(payload):
    g, settings, axis, value, seed, ext_emb, graph_dir = payload
    s = settings
    cfg = replace(s.run, seed=seed)
    if axis == "budget_frac":
        cfg = replace(cfg, budget_frac=float(value))
    elif axis == "rho":
        cfg = replace(cfg, rho=float(value))
    elif axis == "k_mult":
        cfg = replace(cfg, k_mult=float(value))
    elif axis == "mode":
        cfg = replace(cfg, mode=str(value))
    annotator = _build_annotator(s, g, graph_dir)
    eval_ctx = EvalContext(truth=g.truth) if g.truth is not None else None
    rep = run_cane(g, cfg, annotator, eval_ctx, ext_emb)
    return rep.to_dict()


def cmd_sweep(args) -> int:
    s = _settings(args)
    graph_dir = Path(s.graph_dir or "")
    g = load_graph(graph_dir)
    s.run.validate(g.num_classes)
    out = _out_dir(s.out_dir)
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"--axis must be one of {SWEEP_AXES}, got {args.axis!r}")
    raw_values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigError("--values must name at least one value")
    if args.axis == "mode":
        values: list = []
        for v in raw_values:
            if v not in MODES:
                raise ConfigError(f"mode value {v!r} not in {MODES}")
            values.append(v)
    else:
        try:
            values = [float(v) for v in raw_values]
        except ValueError as exc:
            raise ConfigError(f"--values for {args.axis} must be numeric") from exc
    if args.seeds < 1:
        raise ConfigError(f"--seeds must be >= 1, got {args.seeds}")
    ext_emb = load_embeddings(s.embeddings_dir) if s.embeddings_dir else None
    # annotator built inside the worker; check config once up front
    _build_annotator(s, g, graph_dir)

    tasks = [
        (g, s, args.axis, value, s.run.seed + i, ext_emb, graph_dir)
        for value in values
        for i in range(args.seeds)
    ]
    cells: list[dict] = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = list(pool.map(_sweep_try, tasks))
        cells = futures
    else:
        cells = [_sweep_try(t) for t in tasks]

    rows = []
    for value in values:
        cell_rows = [c for c in cells if c["value"] == value]
        accs = [c["accuracy"] for c in cell_rows if c.get("accuracy") is not None]
        rows.append(
            {
                "value": value,
                "mean": float(np.mean(accs)) if accs else None,
                "std": float(np.std(accs)) if accs else None,
                "n_ok": sum(1 for c in cell_rows if "error" not in c),
                "n_err": sum(1 for c in cell_rows if "error" in c),
            }
        )
    payload = {
        "axis": args.axis,
        "values": values,
        "seeds": args.seeds,
        "first_seed": s.run.seed,
        "cells": cells,
        "rows": rows,
    }
    _write_json(payload, out / "sweep.json")
    with open(out / "sweep.tsv", "w", encoding="utf-8") as fh:
        fh.write("value\tmean\tstd\tn_ok\tn_err\n")
        for r in rows:
            mean = "" if r["mean"] is None else f"{r['mean']:.6f}"
            std = "" if r["std"] is None else f"{r['std']:.6f}"
            fh.write(f"{r['value']}\t{mean}\t{std}\t{r['n_ok']}\t{r['n_err']}\n")
    text = render_sweep(payload)
    with open(out / "sweep.txt", "w", encoding="utf-8") as fh:
        fh.write(text)
    sweep_figure(payload, out / "sweep.png")
    sys.stdout.write(text)
    return 0


def _sweep_try(task) -> dict:
    g, s, axis, value, seed, ext_emb, graph_dir = task
    try:
        rep = _sweep_worker(task)
        return {"value": value, "seed": seed, "accuracy": rep["accuracy"]}
    except Exception as exc:  # per-cell failures recorded, sweep continues
        return {"value": value, "seed": seed, "error": str(exc)}


# ---------------------------------------------------------------------------
# Parser.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisescope",
        description=(
            "Cluster-conditional annotation-noise estimation, diagnosis, and "
            "noise-aware graph label propagation"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic attributed graph")
    p.add_argument("--spec", help="JSON generator spec (defaults used if omitted)")
    p.add_argument("--out", required=True, help="output graph directory")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("annotate", help="cluster, select seeds, and annotate them")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--graph", help="graph directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--annotator", choices=["sim", "llm"], default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_annotate)

    p = sub.add_parser("estimate", help="estimate the reliability tensor from probe annotations")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--graph", help="graph directory")
    p.add_argument("--annotations", required=True)
    p.add_argument("--clusters", required=True)
    p.add_argument("--out", dest="tensor_out", required=True, help="output tc.json path")
    p.add_argument("--min-support", type=int, default=3)
    p.add_argument("--k-feat", type=int, default=5)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("train", help="train the GCN on an annotation file")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--graph", help="graph directory")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", dest="model_out", required=True, help="output model.json path")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--no-elr", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("run", help="run the full pipeline")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--graph", help="graph directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--mode", choices=list(MODES), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive master seeds")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("diagnose", help="cluster-conditional noise diagnostic")
    p.add_argument("--annotations", help="annotations.jsonl path")
    p.add_argument("--labels", required=True, help="labels.tsv path")
    p.add_argument("--clusters", required=True, help="clusters.json path")
    p.add_argument("--min-cell", type=int, default=20)
    p.add_argument(
        "--null-control",
        type=float,
        default=None,
        help="run the class-conditional null with this diagonal instead",
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("sweep", help="sweep one axis over seeded pipeline runs")
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--graph", help="graph directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--axis", required=True, choices=list(SWEEP_AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (IoError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NoisescopeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # noqa: BLE001 - surface as runtime failure
        print(f"unexpected error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
