"""
Команда sweep: temperature / width scale / mode ablations over seeds.
"""

import argparse
from typing import Any, Dict, List, Optional

from t3dnet.cli.train import load_plan_file
from t3dnet.config import settings
from t3dnet.core.errors import EXIT_USAGE
from t3dnet.core.logging import get_logger
from t3dnet.models.plan import merge_overrides
from t3dnet.services.sweep_service import SWEEP_KINDS, render_markdown, run_sweep

logger = get_logger(__name__)


def _seed_list(value: str) -> List[int]:
    try:
        return [int(s) for s in value.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid seed list '{value}'") from None


def base_plan(args: argparse.Namespace) -> Dict[str, Any]:
    """Plan file merged with the shared flags; validated per sub-run."""
    return merge_overrides(load_plan_file(args.plan), {
        "architecture": args.config,
        "dataset": args.data,
        "teacher_checkpoint": args.teacher,
        "epochs_stage1": args.epochs,
        "epochs_stage2": args.epochs2,
        "batch_size": args.batch_size,
        "optimizer.lr": args.lr,
        "kd.alpha": args.alpha,
        "end2end.warmup_epochs": args.warmup,
    })


def cmd_sweep(args: argparse.Namespace) -> int:
    out = args.out or f"{settings.output_dir}/sweep-{args.sweep}"
    result = run_sweep(
        args.sweep,
        base_plan(args),
        seeds=args.seeds,
        output_dir=out,
        parallel=args.parallel,
        baseline=args.baseline,
    )
    print(render_markdown(result), end="")
    if result.failed:
        logger.error("Sweep incomplete", failed=len(result.failed), runs=len(result.outcomes))
        return EXIT_USAGE
    return 0


def register(subparsers: "argparse._SubParsersAction", parents: Optional[list] = None) -> None:
    sweep = subparsers.add_parser(
        "sweep",
        parents=parents or [],
        help="run an ablation sweep",
        description=(
            "temperature: kd-only for T in 1,2,5,10,15,20; scale: two-stage at width scales 1/2,1/4,1/8; "
            "mode: every ablation mode. Results are aggregated into sweep.md / sweep.csv."
        ),
    )
    sweep.add_argument("--sweep", choices=SWEEP_KINDS, required=True)
    sweep.add_argument("--config", default=None, help="model config JSON")
    sweep.add_argument("--data", default=None, help="PCDS dataset")
    sweep.add_argument("--teacher", default=None, help="teacher checkpoint")
    sweep.add_argument("--plan", default=None, help="base TrainPlan JSON file")
    sweep.add_argument("--epochs", type=int, default=None)
    sweep.add_argument("--epochs2", type=int, default=None)
    sweep.add_argument("--batch-size", type=int, default=None)
    sweep.add_argument("--lr", type=float, default=None)
    sweep.add_argument("--alpha", type=float, default=None)
    sweep.add_argument("--warmup", type=int, default=None)
    sweep.add_argument("--seeds", type=_seed_list, default=[0], help="comma-separated seeds (default 0)")
    sweep.add_argument("--parallel", type=int, default=1, help="concurrent sub-runs (default 1)")
    sweep.add_argument("--baseline", default=None, help="row label for ΔAcc (default: first row)")
    sweep.add_argument("--out", default=None, help="sweep directory")
    sweep.set_defaults(handler=cmd_sweep)
