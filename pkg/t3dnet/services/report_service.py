"""
Сервис отчётов: cost table (#Params, FLOPs) per width scale plus final OA
and ΔAcc of finished runs.

Runs are given as a run directory (the last stage's metrics CSV is used and
`manifest.json` supplies the mode) or as a metrics CSV path, optionally
prefixed with `label=`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from t3dnet.core.errors import ConfigError, ReportError
from t3dnet.core.logging import get_logger
from t3dnet.models.architecture import SupernetSpec, format_fraction, parse_fraction
from t3dnet.nn.costs import FLOPS_CONVENTION, count_flops, count_params, human_count
from t3dnet.services.metrics_logger import read_metrics
from t3dnet.storage.files import atomic_write_text, render_csv as csv_text

logger = get_logger(__name__)

DEFAULT_SCALES = ("1", "1/4", "1/8")
DEFAULT_POINTS = 1024
DESK_SCALE_NOTE = (
    "OA values come from desk-scale runs (synthetic data, shortened schedules); "
    "they show directions, not the accuracy of full-length training."
)


# ===== COSTS =====

@dataclass(frozen=True)
class CostRow:
    scale: Fraction
    params: int
    flops: int

    @property
    def label(self) -> str:
        return format_fraction(self.scale)


def _fraction(value: Union[str, float, Fraction]) -> Fraction:
    try:
        return value if isinstance(value, Fraction) else parse_fraction(value)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cost_rows(spec: SupernetSpec, scales: Sequence[Union[str, Fraction]] = DEFAULT_SCALES, n_points: int = DEFAULT_POINTS) -> List[CostRow]:
    rows = []
    for raw in scales:
        scale = _fraction(raw)
        rows.append(CostRow(scale=scale, params=count_params(spec, scale), flops=count_flops(spec, scale, n_points)))
    return rows


# ===== RUNS =====

@dataclass
class RunSummary:
    label: str
    path: Path
    mode: str
    scale: Fraction
    final_oa: float
    best_epoch: int
    epochs: int
    curve: List[Tuple[int, float]] = field(default_factory=list)


def parse_run_arg(arg: str) -> Tuple[Optional[str], Path]:
    """`label=path` or a bare path."""
    if "=" in arg:
        label, _, path = arg.partition("=")
        if label and path:
            return label, Path(path)
    return None, Path(arg)


def _metrics_file(path: Path) -> Path:
    if path.is_dir():
        stages = sorted(path.glob("metrics_stage*.csv"))
        if not stages:
            raise ReportError(f"{path}: no metrics_stage*.csv in run directory")
        return stages[-1]
    if not path.is_file():
        raise ReportError(f"metrics file not found: {path}")
    return path


def _run_manifest(run_dir: Path) -> Dict:
    manifest = run_dir / "manifest.json"
    if not manifest.is_file():
        return {}
    try:
        return json.loads(manifest.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ReportError(f"{manifest}: {exc}") from None


def load_run(arg: str, spec: SupernetSpec) -> RunSummary:
    """
    Final OA (best test OA) and test curve of one run.

    Raises:
        ReportError: missing file, schema mismatch, or no test rows
    """
    label, path = parse_run_arg(arg)
    csv_path = _metrics_file(path)
    manifest = _run_manifest(csv_path.parent)
    plan = manifest.get("plan", {})
    mode = plan.get("mode", "")

    rows = read_metrics(csv_path)
    tests = [row for row in rows if row.split == "test"]
    if not tests:
        raise ReportError(f"{csv_path}: no test rows")
    best = max(tests, key=lambda row: (row.oa, -row.epoch))

    if mode == "teacher":
        scale = Fraction(1)
    elif plan.get("width_scale"):
        scale = _fraction(plan["width_scale"])
    else:
        scale = spec.width_scale_tiny

    return RunSummary(
        label=label or mode or (csv_path.parent.name if path.is_dir() else csv_path.stem),
        path=csv_path,
        mode=mode,
        scale=scale,
        final_oa=best.oa,
        best_epoch=best.epoch + 1,
        epochs=len(tests),
        curve=[(row.epoch, row.oa) for row in tests],
    )


# ===== REPORT =====

@dataclass
class Report:
    spec: SupernetSpec
    n_points: int
    costs: List[CostRow]
    runs: List[RunSummary] = field(default_factory=list)
    baselines: List[str] = field(default_factory=list)

    def run(self, label: str) -> RunSummary:
        for run in self.runs:
            if run.label == label:
                return run
        raise ReportError(f"unknown baseline '{label}'")

    def delta(self, run: RunSummary, baseline: str) -> float:
        return run.final_oa - self.run(baseline).final_oa


def build_report(
    spec: SupernetSpec,
    runs: Sequence[str] = (),
    baselines: Sequence[str] = (),
    scales: Sequence[Union[str, Fraction]] = DEFAULT_SCALES,
    n_points: int = DEFAULT_POINTS,
) -> Report:
    """
    Raises:
        ReportError: duplicate run labels or a baseline that is not a run
    """
    summaries = [load_run(arg, spec) for arg in runs]
    labels = [s.label for s in summaries]
    duplicates = sorted({label for label in labels if labels.count(label) > 1})
    if duplicates:
        raise ReportError(f"duplicate run labels {duplicates}; use label=path")
    report = Report(spec=spec, n_points=n_points, costs=cost_rows(spec, scales, n_points), runs=summaries)
    for baseline in baselines:
        report.run(baseline)
    report.baselines = list(baselines)
    logger.info("Report built", runs=len(summaries), baselines=len(report.baselines), scales=len(report.costs))
    return report


def _costs_of(report: Report, scale: Fraction) -> Tuple[int, int]:
    return count_params(report.spec, scale), count_flops(report.spec, scale, report.n_points)


def render_markdown(report: Report) -> str:
    full_params, full_flops = _costs_of(report, Fraction(1))
    lines = [
        f"# Cost report: {report.spec.name}",
        "",
        f"FLOPs per cloud at {report.n_points} input points; {FLOPS_CONVENTION}.",
        "",
        "| scale | #Params | FLOPs | params ratio | FLOPs ratio |",
        "|---|---|---|---|---|",
    ]
    for row in report.costs:
        lines.append(
            f"| {row.label} | {human_count(row.params)} | {human_count(row.flops)} "
            f"| {full_params / row.params:.1f}x | {full_flops / row.flops:.1f}x |"
        )
    if report.runs:
        header = ["run", "mode", "scale", "#Params", "FLOPs", "OA"] + [f"ΔAcc vs {b}" for b in report.baselines]
        lines += ["", DESK_SCALE_NOTE, "", "| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        for run in report.runs:
            params, flops = _costs_of(report, run.scale)
            cells = [
                run.label, run.mode or "-", format_fraction(run.scale),
                human_count(params), human_count(flops), f"{100 * run.final_oa:.2f}%",
            ]
            cells += [f"{100 * report.delta(run, b):+.2f}%" for b in report.baselines]
            lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_csv(report: Report) -> str:
    """Machine-readable rows; OA and ΔAcc at full precision."""
    columns = ["kind", "label", "mode", "scale", "params", "flops", "oa"] + [f"delta_{b}" for b in report.baselines]
    blanks = [""] * len(report.baselines)
    rows: List[List[str]] = []
    for row in report.costs:
        rows.append(["cost", row.label, "", row.label, str(row.params), str(row.flops), ""] + blanks)
    for run in report.runs:
        params, flops = _costs_of(report, run.scale)
        cells = ["run", run.label, run.mode, format_fraction(run.scale), str(params), str(flops), repr(run.final_oa)]
        cells += [repr(report.delta(run, b)) for b in report.baselines]
        rows.append(cells)
    return csv_text(columns, rows)


def render_curves(report: Report) -> str:
    """epoch,<label>... with per-epoch test OA; missing epochs are blank."""
    if not report.runs:
        raise ReportError("--curves needs at least one run")
    epochs = sorted({epoch for run in report.runs for epoch, _ in run.curve})
    by_run = [dict(run.curve) for run in report.runs]
    rows = []
    for epoch in epochs:
        cells = [str(epoch)] + [f"{curve[epoch]:.8f}" if epoch in curve else "" for curve in by_run]
        rows.append(cells)
    return csv_text(["epoch"] + [run.label for run in report.runs], rows)


def write_report(report: Report, out_dir: Union[str, Path], curves: bool = False) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    paths = {
        "markdown": atomic_write_text(out_dir / "report.md", render_markdown(report)),
        "csv": atomic_write_text(out_dir / "report.csv", render_csv(report)),
    }
    if curves:
        paths["curves"] = atomic_write_text(out_dir / "curves.csv", render_curves(report))
    logger.info("Report written", out_dir=str(out_dir), files=len(paths))
    return paths
