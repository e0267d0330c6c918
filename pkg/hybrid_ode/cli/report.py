"""Aggregate tables and bar charts over a directory of cross-validation runs."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from hybrid_ode.core.exceptions import DataError, InputError
from hybrid_ode.harness import RunReport

logger = logging.getLogger(__name__)

RANDOM_GUESS = 2.0 / 3.0
SUMMARY_COLUMNS = (
    "name",
    "variant",
    "alpha",
    "n_folds",
    "rmse_mean",
    "rmse_stderr",
    "class_error_p10",
    "class_error_p50",
    "class_error_p90",
    "class_error_mean",
)
PALETTE = ("#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c")


@dataclass(frozen=True)
class ReportRow:
    """Aggregates of one run."""

    name: str
    variant: str
    alpha: float
    n_folds: int
    rmse_mean: float
    rmse_stderr: float
    class_error_p10: Optional[float] = None
    class_error_p50: Optional[float] = None
    class_error_p90: Optional[float] = None
    class_error_mean: Optional[float] = None

    @classmethod
    def from_report(cls, report: RunReport) -> ReportRow:
        """Flatten a run report."""
        s = report.summary
        p = s.class_error_percentiles or {}
        return cls(
            name=report.name,
            variant=report.variant.value,
            alpha=report.alpha,
            n_folds=len(report.folds),
            rmse_mean=s.rmse_mean,
            rmse_stderr=s.rmse_stderr,
            class_error_p10=p.get("10"),
            class_error_p50=p.get("50"),
            class_error_p90=p.get("90"),
            class_error_mean=s.class_error_mean,
        )


def collect_reports(runs_dir: str | Path) -> list[ReportRow]:
    """
    Rows of every report.json below ``runs_dir``, ordered by (variant, alpha, name).

    Raises:
        InputError: If no report is found
        DataError: If a report file is malformed

    """
    root = Path(runs_dir)
    if not root.is_dir():
        msg = f"Runs directory {root} does not exist"
        raise InputError(msg)
    rows = []
    for path in sorted(root.rglob("report.json")):
        try:
            report = RunReport.load(path)
        except ValidationError as e:
            msg = f"Invalid report {path}: {e.errors()[0]['msg']}"
            raise DataError(msg) from e
        rows.append(ReportRow.from_report(report))
    if not rows:
        msg = f"No report.json found under {root}"
        raise InputError(msg)
    logger.info("Collected %d reports from %s", len(rows), root)
    return sorted(rows, key=lambda r: (r.variant, r.alpha, r.name))


def write_summary_csv(rows: Sequence[ReportRow], path: str | Path) -> None:
    """One row per run."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_COLUMNS)
        for row in rows:
            values = [getattr(row, c) for c in SUMMARY_COLUMNS]
            writer.writerow(["" if v is None else v for v in values])


@dataclass(frozen=True)
class Bar:
    """One bar with its whisker range."""

    group: str
    series: str
    value: float
    low: float
    high: float


def bar_chart(title: str, bars: Sequence[Bar], y_label: str, reference: float | None = None) -> str:
    """
    Grouped bar chart as SVG text.

    Groups are laid out in first-seen order; each series keeps its colour across
    groups. ``reference`` draws a dashed horizontal line.
    """
    groups = list(dict.fromkeys(b.group for b in bars))
    series = list(dict.fromkeys(b.series for b in bars))
    bar_w, gap, left, top, bottom = 18, 24, 64, 36, 250
    group_w = bar_w * len(series) + gap
    width = left + group_w * len(groups) + 140
    height = bottom + 50
    y_max = max([b.high for b in bars] + [reference or 0.0]) * 1.1 or 1.0

    def y(v: float) -> float:
        return bottom - (v / y_max) * (bottom - top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text class="title" x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line class="axis" x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
        f'<line class="axis" x1="{left}" y1="{bottom}" x2="{width - 140}" y2="{bottom}" stroke="black"/>',
        f'<text x="14" y="{(top + bottom) / 2:.1f}" font-size="11" transform="rotate(-90 14 {(top + bottom) / 2:.1f})" text-anchor="middle">{escape(y_label)}</text>',
    ]
    for k in range(5):
        v = y_max * k / 4
        out.append(f'<text x="{left - 6}" y="{y(v) + 4:.1f}" font-size="10" text-anchor="end">{v:.3g}</text>')
    for gi, group in enumerate(groups):
        x0 = left + gap / 2 + gi * group_w
        out.append(f'<g class="group" data-group="{escape(group)}">')
        for b in bars:
            if b.group != group:
                continue
            si = series.index(b.series)
            x = x0 + si * bar_w
            colour = PALETTE[si % len(PALETTE)]
            cx = x + bar_w / 2
            out.append(
                f'<rect class="bar" data-series="{escape(b.series)}" x="{x:.1f}" y="{y(b.value):.1f}" '
                f'width="{bar_w - 2}" height="{bottom - y(b.value):.1f}" fill="{colour}"/>',
            )
            out.append(
                f'<line class="whisker" x1="{cx:.1f}" y1="{y(b.low):.1f}" x2="{cx:.1f}" y2="{y(b.high):.1f}" stroke="black"/>',
            )
        out.append(
            f'<text x="{x0 + group_w / 2 - gap / 2:.1f}" y="{bottom + 16}" font-size="11" text-anchor="middle">{escape(group)}</text>',
        )
        out.append("</g>")
    if reference is not None:
        out.append(
            f'<line class="reference" data-value="{reference:.6g}" x1="{left}" y1="{y(reference):.1f}" '
            f'x2="{width - 140}" y2="{y(reference):.1f}" stroke="grey" stroke-dasharray="4 3"/>',
        )
        out.append(f'<text x="{width - 136}" y="{y(reference) + 4:.1f}" font-size="10">random guess</text>')
    for si, name in enumerate(series):
        ly = top + 14 * si
        out.append(f'<rect x="{width - 120}" y="{ly}" width="10" height="10" fill="{PALETTE[si % len(PALETTE)]}"/>')
        out.append(f'<text x="{width - 105}" y="{ly + 9}" font-size="10">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _series(alpha: float) -> str:
    return f"alpha={alpha:g}"


def write_charts(rows: Sequence[ReportRow], out_dir: str | Path) -> list[Path]:
    """
    RMSE and classification-error charts, one group per model and one bar per alpha.

    RMSE bars carry the standard error; classification bars show the median
    with the 10th to 90th percentile range and the random-guess line.
    """
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    written = []
    rmse_bars = [
        Bar(r.variant, _series(r.alpha), r.rmse_mean, r.rmse_mean - r.rmse_stderr, r.rmse_mean + r.rmse_stderr)
        for r in rows
    ]
    path = root / "rmse.svg"
    path.write_text(bar_chart("Prediction RMSE", rmse_bars, "RMSE"), encoding="utf-8")
    written.append(path)

    class_bars = [
        Bar(r.variant, _series(r.alpha), r.class_error_p50, r.class_error_p10 or 0.0, r.class_error_p90 or 0.0)
        for r in rows
        if r.class_error_p50 is not None
    ]
    if class_bars:
        path = root / "class_error.svg"
        chart = bar_chart("Causal classification error", class_bars, "error", reference=RANDOM_GUESS)
        path.write_text(chart, encoding="utf-8")
        written.append(path)
    else:
        logger.warning("No run has classification errors; skipping the classification chart")
    return written
