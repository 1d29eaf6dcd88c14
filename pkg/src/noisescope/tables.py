"""Aligned plain-text views over JSON reports.

All reports are JSON-first; these renderers are derived views with a
stable column order. Accuracies print as percentages with two decimals
in run and sweep tables and as fractions with two decimals in the
diagnostic table; F statistics print with one decimal.
"""

from __future__ import annotations

import math

from .errors import FormatError

__all__ = [
    "render_report",
    "render_run_report",
    "render_sweep",
    "render_diagnostic",
]


def _fmt_rows(header: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in header]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(header))).rstrip(),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def _pct(x) -> str:
    return "-" if x is None else f"{100.0 * float(x):.2f}"


def _frac(x) -> str:
    return "-" if x is None else f"{float(x):.2f}"


def _fstat(x) -> str:
    if x is None:
        return "-"
    x = float(x)
    return f"{x:.1f}" if math.isfinite(x) else "inf"


def _pval(x) -> str:
    return "-" if x is None else f"{float(x):.3g}"


def render_run_report(payload: dict) -> str:
    try:
        header = [
            "mode",
            "seed",
            "acc%",
            "budget",
            "probe",
            "expanded",
            "rounds",
            "corrected",
            "r1%",
            "alpha",
        ]
        row = [
            str(payload["mode"]),
            str(payload["seed"]),
            _pct(payload["accuracy"]),
            str(payload["budget"]),
            str(payload["probe_size"]),
            str(sum(payload["expansion_added"])),
            str(payload["rounds"]),
            str(payload["labels_corrected"]),
            "-" if payload["pct_round1"] is None else f"{payload['pct_round1']:.1f}",
            f"{payload['alpha']:.2f}",
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed run report: {exc}") from exc
    return _fmt_rows(header, [row])


def render_sweep(payload: dict) -> str:
    try:
        axis = payload["axis"]
        rows_in = payload["rows"]
        header = [str(axis), "mean_acc%", "std%", "ok", "failed"]
        rows = [
            [
                str(r["value"]),
                _pct(r["mean"]),
                _pct(r["std"]),
                str(r["n_ok"]),
                str(r["n_err"]),
            ]
            for r in rows_in
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed sweep report: {exc}") from exc
    return _fmt_rows(header, rows)


def render_diagnostic(payload: dict) -> str:
    """Summary row plus the per-cell deviation table."""
    try:
        header = ["T_ii", "delta_bar", "F_bar", "fisher_p", "cells", "annotated"]
        row = [
            _frac(payload["t_ii"]),
            _frac(payload["delta_bar"]),
            _fstat(payload["f_bar"]),
            _pval(payload["fisher_p"]),
            str(len(payload["cells"])),
            str(payload["n_annotated"]),
        ]
        out = _fmt_rows(header, [row])
        out += "\n"
        cls_header = ["class", "accuracy", "F", "p"]
        cls_rows = []
        for i in range(int(payload["num_classes"])):
            cls_rows.append(
                [
                    str(i),
                    _frac(payload["per_class_accuracy"][i]),
                    _fstat(payload["per_class_f"][i]),
                    _pval(payload["per_class_p"][i]),
                ]
            )
        out += _fmt_rows(cls_header, cls_rows)
        out += "\n"
        cell_header = ["cluster", "class", "accuracy", "support", "deviation"]
        cell_rows = [
            [
                str(c["cluster"]),
                str(c["cls"]),
                _frac(c["accuracy"]),
                str(c["support"]),
                f"{float(c['deviation']):+.2f}",
            ]
            for c in payload["cells"]
        ]
        out += _fmt_rows(cell_header, cell_rows)
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise FormatError(f"malformed diagnostic report: {exc}") from exc
    return out


def render_report(payload: dict) -> str:
    """Dispatch on report shape: run, sweep, or diagnostic."""
    if not isinstance(payload, dict):
        raise FormatError("report payload must be a JSON object")
    if "fisher_p" in payload and "cells" in payload:
        return render_diagnostic(payload)
    if "axis" in payload and "rows" in payload:
        return render_sweep(payload)
    if "accuracy" in payload and "mode" in payload:
        return render_run_report(payload)
    raise FormatError("unrecognized report shape")
