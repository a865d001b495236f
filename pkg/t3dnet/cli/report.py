"""
Команда report: #Params / FLOPs per width scale, OA and ΔAcc of finished runs.
"""

import argparse
from typing import List, Optional

from t3dnet.core.logging import get_logger
from t3dnet.models.architecture import SupernetSpec
from t3dnet.services.report_service import DEFAULT_POINTS, DEFAULT_SCALES, build_report, render_markdown, write_report

logger = get_logger(__name__)


def _scales(value: str) -> List[str]:
    return [s.strip() for s in value.split(",") if s.strip()]


def cmd_report(args: argparse.Namespace) -> int:
    spec = SupernetSpec.from_file(args.config)
    report = build_report(
        spec,
        runs=args.runs,
        baselines=args.baseline or [],
        scales=args.scales,
        n_points=args.points,
    )
    if args.out:
        write_report(report, args.out, curves=args.curves)
    print(render_markdown(report), end="")
    return 0


def register(subparsers: "argparse._SubParsersAction", parents: Optional[list] = None) -> None:
    report = subparsers.add_parser(
        "report",
        parents=parents or [],
        help="cost and accuracy tables",
        description=(
            "Cost table for the model config at several width scales, plus final OA and ΔAcc of "
            "runs given as run directories or metrics CSVs (optionally label=path)."
        ),
    )
    report.add_argument("runs", nargs="*", help="run directory or metrics CSV, optionally label=path")
    report.add_argument("--config", required=True, help="model config JSON")
    report.add_argument(
        "--scales", type=_scales, default=list(DEFAULT_SCALES),
        help=f"comma-separated width scales (default {','.join(DEFAULT_SCALES)})",
    )
    report.add_argument("--points", type=int, default=DEFAULT_POINTS, help=f"input points for FLOPs (default {DEFAULT_POINTS})")
    report.add_argument("--baseline", action="append", help="run label to compute ΔAcc against (repeatable)")
    report.add_argument("--curves", action="store_true", help="also write per-epoch test OA (curves.csv)")
    report.add_argument("--out", default=None, help="directory for report.md / report.csv")
    report.set_defaults(handler=cmd_report)
