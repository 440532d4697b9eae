"""Approach x dataset F1 tables with parenthesized deltas against a baseline row."""

from __future__ import annotations

import json
from typing import Optional, Sequence

from ..evaluation import EvalReport

LAYOUTS = ("table", "json")


class ReportError(ValueError):
    pass


def delta(report: EvalReport, baseline: EvalReport) -> Optional[float]:
    if report.f1 is None or baseline.f1 is None:
        return None
    return report.f1 - baseline.f1


def format_delta(value: Optional[float]) -> str:
    if value is None:
        return "n/a"
    value = round(value, 2) + 0.0  # fold -0.00 into +0.00
    return f"{value:+.2f}"


def format_f1(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.2f}"


def matrix(reports: Sequence[EvalReport], baseline: Optional[str] = None) -> dict:
    """Group reports into rows by approach; every row must cover the same datasets."""
    if not reports:
        raise ReportError("no reports given")
    rows: dict[str, dict[str, EvalReport]] = {}
    for rep in reports:
        row = rows.setdefault(rep.approach, {})
        if rep.dataset in row:
            raise ReportError(f"two reports for approach {rep.approach!r} on dataset {rep.dataset!r}")
        row[rep.dataset] = rep
    datasets = list(dict.fromkeys(rep.dataset for rep in reports))
    mismatched = {name: sorted(set(datasets) - set(row)) for name, row in rows.items() if set(row) != set(datasets)}
    if mismatched:
        detail = "; ".join(f"{name} lacks {', '.join(missing)}" for name, missing in mismatched.items())
        raise ReportError(f"reports cover inconsistent dataset sets: {detail}")
    baseline = reports[0].approach if baseline is None else baseline
    if baseline not in rows:
        raise ReportError(f"baseline approach {baseline!r} not among reports")
    out_rows = []
    for name, row in rows.items():
        out_rows.append(
            {
                "approach": name,
                "f1": {ds: row[ds].f1 for ds in datasets},
                "delta": {ds: delta(row[ds], rows[baseline][ds]) for ds in datasets},
                "count": {ds: row[ds].count for ds in datasets},
            }
        )
    return {"baseline": baseline, "datasets": datasets, "rows": out_rows}


def render_table(doc: dict) -> str:
    datasets = doc["datasets"]
    cells = [["Approach"] + datasets]
    for row in doc["rows"]:
        line = [row["approach"]]
        for ds in datasets:
            text = format_f1(row["f1"][ds])
            if row["approach"] != doc["baseline"]:
                text += f" ({format_delta(row['delta'][ds])})"
            line.append(text)
        cells.append(line)
    widths = [max(len(r[i]) for r in cells) for i in range(len(cells[0]))]
    lines = []
    for j, r in enumerate(cells):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def report(reports: Sequence[EvalReport], layout: str = "table", baseline: Optional[str] = None) -> str:
    if layout not in LAYOUTS:
        raise ReportError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    doc = matrix(reports, baseline)
    if layout == "json":
        return json.dumps(doc, indent=2, sort_keys=True)
    return render_table(doc)


def load_document(text: str) -> dict:
    doc = json.loads(text)
    if not {"baseline", "datasets", "rows"} <= set(doc):
        raise ReportError("not a report document")
    return doc
