"""Figures from exported solution-path CSVs.

The input contract is the solver's path export: a header row
``t,lambda_r,gamma:<player>.<sequence>,...,sigma:<player>.<strategy>,...``
followed by one row per accepted path point.  Rendering draws one curve
per selected coordinate against t, with the t axis reversed so the Nash
limit sits at the right edge.  This package recomputes nothing; it only
reads the documented CSV layout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__version__ = "0.1.0"

GROUPS = ("gamma", "sigma")


class PathTableError(ValueError):
    """Malformed or empty path CSV."""


@dataclass
class PathTable:
    """Parsed path export: column names plus per-row float values."""

    columns: list[str]
    rows: list[list[float]]

    @property
    def t(self) -> list[float]:
        k = self.columns.index("t")
        return [row[k] for row in self.rows]

    def group_columns(self, which: str) -> list[int]:
        prefix = which + ":"
        return [k for k, name in enumerate(self.columns)
                if name.startswith(prefix)]


def load_table(csv_path) -> PathTable:
    """Read and validate a path CSV."""
    path = Path(csv_path)
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(text.splitlines())
    try:
        columns = next(reader)
    except StopIteration:
        raise PathTableError(f"{path}: empty file") from None
    if "t" not in columns or "lambda_r" not in columns:
        raise PathTableError(f"{path}: missing t/lambda_r columns")
    rows = []
    for k, raw in enumerate(reader, start=2):
        if not raw:
            continue
        if len(raw) != len(columns):
            raise PathTableError(
                f"{path}:{k}: {len(raw)} fields, header has {len(columns)}")
        try:
            rows.append([float(v) for v in raw])
        except ValueError as e:
            raise PathTableError(f"{path}:{k}: {e}") from None
    if not rows:
        raise PathTableError(f"{path}: no data rows")
    t_idx = columns.index("t")
    for row in rows:
        if not (0.0 <= row[t_idx] <= 1.0):
            raise PathTableError(f"{path}: t={row[t_idx]} outside [0, 1]")
    return PathTable(columns, rows)


def render(table: PathTable, which: str, title: str | None = None):
    """Figure with one curve per coordinate of the requested group."""
    if which not in GROUPS:
        raise ValueError(f"which must be one of {GROUPS}")
    cols = table.group_columns(which)
    if not cols:
        raise PathTableError(f"no {which} columns in table")
    t = table.t
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for k in cols:
        name = table.columns[k].split(":", 1)[1]
        ax.plot(t, [row[k] for row in table.rows], label=name, linewidth=1.4)
    ax.set_xlabel("t")
    ax.set_ylabel("realization mass" if which == "gamma" else "strategy probability")
    ax.invert_xaxis()  # Nash limit (t -> 0) on the right
    ax.set_ylim(-0.02, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="center left", bbox_to_anchor=(1.01, 0.5), fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig


def plot_paths(csv_path, which: str, out_path) -> Path:
    """Render one coordinate group of a path CSV to an image file."""
    table = load_table(csv_path)
    title = f"{Path(csv_path).stem} ({which})"
    fig = render(table, which, title=title)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out
