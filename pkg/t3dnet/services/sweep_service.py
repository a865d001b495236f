"""
Сервис sweep-экспериментов: temperature, width scale and training-mode
ablations, each run for one or more seeds and aggregated into one table.

Sub-runs share nothing mutable: every one gets its own output directory
`<out>/<label>/seed<k>`. With `parallel > 1` they run in worker processes.
"""

from __future__ import annotations

import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from t3dnet import __version__
from t3dnet.config import settings
from t3dnet.core.errors import ConfigError, T3DNetError
from t3dnet.core.logging import configure_logging, get_logger
from t3dnet.models.internal import RunManifest
from t3dnet.models.plan import TrainPlan
from t3dnet.services.trainer import run_plan
from t3dnet.storage.files import atomic_write_json, atomic_write_text, render_csv as csv_text

logger = get_logger(__name__)

SWEEP_TEMPERATURES = (1, 2, 5, 10, 15, 20)
SWEEP_SCALES = ("1/2", "1/4", "1/8")
SWEEP_MODES = ("tiny-baseline", "netaug-only", "kd-only", "two-stage", "hint", "mutual", "end2end")
SWEEP_KINDS = ("temperature", "scale", "mode")


@dataclass(frozen=True)
class SubRun:
    label: str
    seed: int
    plan: TrainPlan


@dataclass
class SubRunOutcome:
    label: str
    seed: int
    output_dir: str
    oa: Optional[float] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def _variants(kind: str) -> List[Tuple[str, Dict[str, Any]]]:
    if kind == "temperature":
        return [(f"T={t}", {"mode": "kd-only", "kd.T": float(t)}) for t in SWEEP_TEMPERATURES]
    if kind == "scale":
        return [(f"scale={s}", {"mode": "two-stage", "width_scale": s}) for s in SWEEP_SCALES]
    if kind == "mode":
        return [(mode, {"mode": mode}) for mode in SWEEP_MODES]
    raise ConfigError(f"unknown sweep '{kind}' (expected one of {', '.join(SWEEP_KINDS)})")


def expand_sweep(
    kind: str,
    base: Dict[str, Any],
    seeds: Sequence[int],
    output_dir: Union[str, Path],
) -> List[SubRun]:
    """
    One validated TrainPlan per (variant, seed). The seed is applied to the
    init, data and subnet streams alike.

    Raises:
        ConfigError: unknown sweep, no seeds, or a variant plan that does not validate
    """
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    output_dir = Path(output_dir)
    runs = []
    for label, overrides in _variants(kind):
        for seed in seeds:
            plan = TrainPlan.resolve(base, {
                **overrides,
                "seeds.init": seed,
                "seeds.data": seed,
                "seeds.subnet": seed,
                "output_dir": str(output_dir / label / f"seed{seed}"),
            })
            runs.append(SubRun(label=label, seed=seed, plan=plan))
    return runs


def execute_subrun(sub: SubRun) -> SubRunOutcome:
    """Run one sub-run; any error becomes a failed outcome."""
    outcome = SubRunOutcome(label=sub.label, seed=sub.seed, output_dir=str(sub.plan.output_dir))
    try:
        result = run_plan(sub.plan, command="sweep")
    except T3DNetError as exc:
        logger.error("Sweep sub-run failed", label=sub.label, seed=sub.seed, error=str(exc))
        outcome.error = str(exc)
        return outcome
    except Exception as exc:
        logger.error("Sweep sub-run crashed", label=sub.label, seed=sub.seed, error=str(exc), exc_info=True)
        outcome.error = f"{type(exc).__name__}: {exc}"
        return outcome
    outcome.oa = result.final.best_oa
    return outcome


def _worker_init(level: str, fmt: str) -> None:
    configure_logging(level, fmt)


# ===== AGGREGATION =====

@dataclass
class SweepRow:
    label: str
    oas: List[float]
    failed: int = 0

    @property
    def mean(self) -> Optional[float]:
        return statistics.fmean(self.oas) if self.oas else None

    @property
    def std(self) -> Optional[float]:
        return statistics.pstdev(self.oas) if len(self.oas) >= 2 else None


@dataclass
class SweepResult:
    kind: str
    seeds: List[int]
    outcomes: List[SubRunOutcome]
    baseline: str
    rows: List[SweepRow] = field(default_factory=list)

    @property
    def failed(self) -> List[SubRunOutcome]:
        return [o for o in self.outcomes if not o.ok]

    @property
    def multi_seed(self) -> bool:
        return len(self.seeds) >= 2

    def delta(self, row: SweepRow) -> Optional[float]:
        base = next((r for r in self.rows if r.label == self.baseline), None)
        if base is None or base.mean is None or row.mean is None:
            return None
        return row.mean - base.mean


def aggregate(kind: str, seeds: Sequence[int], outcomes: Sequence[SubRunOutcome], baseline: Optional[str] = None) -> SweepResult:
    labels: List[str] = []
    for o in outcomes:
        if o.label not in labels:
            labels.append(o.label)
    rows = []
    for label in labels:
        mine = [o for o in outcomes if o.label == label]
        rows.append(SweepRow(label=label, oas=[o.oa for o in mine if o.ok], failed=sum(not o.ok for o in mine)))
    return SweepResult(
        kind=kind,
        seeds=list(seeds),
        outcomes=list(outcomes),
        baseline=baseline or (labels[0] if labels else ""),
        rows=rows,
    )


def _fmt(value: Optional[float], signed: bool = False) -> str:
    if value is None:
        return "-"
    return f"{100 * value:+.2f}%" if signed else f"{100 * value:.2f}%"


def render_markdown(result: SweepResult) -> str:
    header = ["run", "OA (mean)" if result.multi_seed else "OA"]
    if result.multi_seed:
        header.append("OA (std)")
    header += [f"ΔAcc vs {result.baseline}", "failed"]
    lines = [
        f"# Sweep: {result.kind} ({len(result.seeds)} seed{'s' if result.multi_seed else ''})",
        "",
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]
    for row in result.rows:
        cells = [row.label, _fmt(row.mean)]
        if result.multi_seed:
            cells.append(_fmt(row.std))
        cells += [_fmt(result.delta(row), signed=True), str(row.failed)]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def render_csv(result: SweepResult) -> str:
    columns = ["label", "oa_mean"] + (["oa_std"] if result.multi_seed else []) + ["delta", "failed"]
    rows = []
    for row in result.rows:
        cells = [row.label, "" if row.mean is None else repr(row.mean)]
        if result.multi_seed:
            cells.append("" if row.std is None else repr(row.std))
        delta = result.delta(row)
        cells += ["" if delta is None else repr(delta), str(row.failed)]
        rows.append(cells)
    return csv_text(columns, rows)


# ===== ENTRY =====

def run_sweep(
    kind: str,
    base: Dict[str, Any],
    seeds: Sequence[int],
    output_dir: Union[str, Path],
    parallel: int = 1,
    baseline: Optional[str] = None,
) -> SweepResult:
    """
    Expand, run and aggregate a sweep; the table and `manifest.json` are
    written even when some sub-runs fail (callers check `result.failed`).

    Raises:
        ConfigError: invalid sweep definition (nothing is run)
    """
    if parallel < 1:
        raise ConfigError(f"--parallel must be >= 1, got {parallel}")
    output_dir = Path(output_dir)
    subruns = expand_sweep(kind, base, seeds, output_dir)
    manifest = RunManifest(
        tool_version=__version__,
        command="sweep",
        plan={"sweep": kind, "base": base, "seeds": list(seeds), "parallel": parallel},
        started_at=datetime.now(timezone.utc),
    )
    manifest_file = output_dir / "manifest.json"
    atomic_write_json(manifest_file, manifest)
    logger.info("Sweep started", sweep=kind, runs=len(subruns), parallel=parallel)

    if parallel == 1:
        outcomes = [execute_subrun(sub) for sub in subruns]
    else:
        with ProcessPoolExecutor(
            max_workers=parallel,
            initializer=_worker_init,
            initargs=(settings.log_level, settings.log_format),
        ) as pool:
            outcomes = list(pool.map(execute_subrun, subruns))

    result = aggregate(kind, seeds, outcomes, baseline)
    atomic_write_text(output_dir / "sweep.md", render_markdown(result))
    atomic_write_text(output_dir / "sweep.csv", render_csv(result))

    manifest.status = "failed" if result.failed else "completed"
    manifest.outputs = {f"{o.label}/seed{o.seed}": o.output_dir for o in outcomes}
    manifest.outputs.update({"table_markdown": str(output_dir / "sweep.md"), "table_csv": str(output_dir / "sweep.csv")})
    if result.failed:
        manifest.error = f"{len(result.failed)} of {len(outcomes)} sub-runs failed"
    manifest.finished_at = datetime.now(timezone.utc)
    atomic_write_json(manifest_file, manifest)
    logger.info("Sweep finished", sweep=kind, failed=len(result.failed), runs=len(outcomes))
    return result
