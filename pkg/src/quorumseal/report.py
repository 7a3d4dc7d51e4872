"""Rendering for attack-scenario verdicts.

One report, four surfaces: a terminal table, machine-readable JSON, a
delimited CSV, and a PNG figure for briefing decks. Files land next to
each other in the chosen output directory.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .attacks import (
    VERDICT_BREACHED,
    VERDICT_DEFENDED,
    VERDICT_DETECTED,
    VERDICT_UNDEFENDABLE,
    ScenarioReport,
)

REPORT_VERSION = 1

_COLUMNS = ("scenario", "adversary", "verdict", "expected", "passed", "residual")


def _rows(reports: list[ScenarioReport]) -> list[dict]:
    return [
        {
            "scenario": r.name,
            "adversary": r.adversary,
            "verdict": r.verdict,
            "expected": r.expected,
            "passed": "yes" if r.passed else "NO",
            "residual": r.residual or "",
        }
        for r in reports
    ]


def render_table(reports: list[ScenarioReport]) -> str:
    """Fixed-width table for terminals; residual notes wrap below."""
    rows = _rows(reports)
    cols = ("scenario", "adversary", "verdict", "expected", "passed")
    widths = {c: max(len(c), *(len(row[c]) for row in rows)) for c in cols}
    head = "  ".join(c.ljust(widths[c]) for c in cols)
    sep = "  ".join("-" * widths[c] for c in cols)
    lines = [head, sep]
    for row in rows:
        lines.append("  ".join(row[c].ljust(widths[c]) for c in cols))
        if row["residual"]:
            lines.append(f"    residual: {row['residual']}")
    return "\n".join(lines)


def write_json(reports: list[ScenarioReport], path: str | Path, *, seed: int) -> None:
    doc = {
        "version": REPORT_VERSION,
        "seed": seed,
        "all_passed": all(r.passed for r in reports),
        "scenarios": [r.to_json_dict() for r in reports],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def write_csv(reports: list[ScenarioReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=_COLUMNS)
        writer.writeheader()
        for row in _rows(reports):
            writer.writerow(row)


_VERDICT_COLORS = {
    VERDICT_DEFENDED: "#2d8a4e",
    VERDICT_DETECTED: "#c98a00",
    VERDICT_UNDEFENDABLE: "#b3382c",
    VERDICT_BREACHED: "#6a1b9a",
}


def render_figure(reports: list[ScenarioReport], path: str | Path) -> None:
    """Horizontal verdict chart: one bar per scenario, severity-colored,
    annotated with the verdict and whether it matched expectations."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .attacks import SEVERITY_RANK

    names = [r.name for r in reports]
    ranks = [SEVERITY_RANK[r.verdict] + 1 for r in reports]
    colors = [_VERDICT_COLORS.get(r.verdict, "#555555") for r in reports]

    fig, ax = plt.subplots(figsize=(8, 0.9 * len(reports) + 1.6))
    ypos = range(len(reports))
    ax.barh(ypos, ranks, color=colors, height=0.6)
    ax.set_yticks(list(ypos))
    ax.set_yticklabels(names)
    ax.invert_yaxis()
    ax.set_xlim(0, max(SEVERITY_RANK.values()) + 1.8)
    ax.set_xticks([])
    ax.set_xlabel("adversary impact")
    ax.set_title("attack scenario verdicts")
    for y, r, rank in zip(ypos, reports, ranks):
        mark = "" if r.passed else "  [UNEXPECTED]"
        ax.text(rank + 0.08, y, f"{r.verdict}{mark}", va="center", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report_files(
    reports: list[ScenarioReport], out_dir: str | Path, *, seed: int
) -> dict[str, Path]:
    """Write all three artifacts; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / "verdicts.json",
        "csv": out / "verdicts.csv",
        "figure": out / "verdicts.png",
    }
    write_json(reports, paths["json"], seed=seed)
    write_csv(reports, paths["csv"])
    render_figure(reports, paths["figure"])
    return paths
