"""
Команды обучения и оценки: train (all modes) и eval (OA of a checkpoint).
"""

import argparse
import json
from typing import Any, Dict, Optional

from t3dnet.config import settings
from t3dnet.core.errors import ConfigError, ContractError
from t3dnet.core.logging import get_logger
from t3dnet.models.architecture import SupernetSpec, parse_fraction
from t3dnet.models.plan import MODE_ALIASES, TrainPlan
from t3dnet.nn.supernet import Supernet, full_selection, tiny_selection
from t3dnet.services.trainer import evaluate, run_plan
from t3dnet.storage.checkpoint_store import load_checkpoint, verify_digest
from t3dnet.storage.pcds import read_dataset

logger = get_logger(__name__)

MODE_CHOICES = (
    "teacher", "tiny-baseline", "netaug-only", "kd-only", "two-stage", "hint", "mutual", "end2end",
    *MODE_ALIASES,
)


def load_plan_file(path: Optional[str]) -> Dict[str, Any]:
    """JSON plan file as a dict (empty when no file is given)."""
    if not path:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"plan file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid plan file {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"plan file {path} must hold a JSON object")
    return data


def plan_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted TrainPlan keys set by flags; unset flags are None and ignored by resolve()."""
    overrides: Dict[str, Any] = {
        "mode": args.mode,
        "architecture": args.config,
        "dataset": args.data,
        "teacher_checkpoint": args.teacher,
        "output_dir": args.out,
        "epochs_stage1": args.epochs,
        "epochs_stage2": args.epochs2,
        "batch_size": args.batch_size,
        "optimizer.lr": args.lr,
        "kd.T": args.T,
        "kd.alpha": args.alpha,
        "end2end.warmup_epochs": args.warmup,
        "augment.r": args.r,
        "augment.expand_mode": args.expand_mode,
        "augment.beta.mode": args.beta_mode,
        "augment.beta.beta_start": args.beta_start,
        "augment.beta.beta_end": args.beta_end,
        "hint.init": args.hint_init,
        "width_scale": args.width_scale,
    }
    streams = {"init": args.init_seed, "data": args.data_seed, "subnet": args.subnet_seed}
    for stream, value in streams.items():
        overrides[f"seeds.{stream}"] = args.seed if value is None else value
    if args.e2e_alpha is not None:
        overrides["end2end.alpha.mode"] = "static"
        overrides["end2end.alpha.alpha_start"] = args.e2e_alpha
        overrides["end2end.alpha.alpha_end"] = args.e2e_alpha
    if args.allow_digest_mismatch:
        overrides["allow_digest_mismatch"] = True
    return overrides


def resolve_plan(args: argparse.Namespace) -> TrainPlan:
    """Plan file < flags; output_dir falls back to settings."""
    plan = TrainPlan.resolve(load_plan_file(args.plan), plan_overrides(args))
    if not plan.output_dir:
        plan = plan.model_copy(update={"output_dir": settings.output_dir})
    return plan


def cmd_train(args: argparse.Namespace) -> int:
    """Обучение в выбранном режиме."""
    plan = resolve_plan(args)
    result = run_plan(plan, command="train")
    for stage in result.stages:
        print(
            f"stage {stage.stage}: best test OA {100 * stage.best_oa:.2f}% (epoch {stage.best_epoch}) "
            f"-> {stage.checkpoint_path}"
        )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """OA чекпоинта на split датасета при tiny или full selection."""
    spec = SupernetSpec.from_file(args.config)
    ckpt = load_checkpoint(args.checkpoint)
    verify_digest(ckpt, spec.digest(), allow_mismatch=args.allow_digest_mismatch, source=str(args.checkpoint))

    selection_name = args.selection
    if selection_name == "auto":
        selection_name = "full" if ckpt.metrics.get("mode") == "teacher" else "tiny"
    width_scale = args.width_scale or ckpt.metrics.get("width_scale")
    if width_scale:
        try:
            spec = spec.model_copy(update={"width_scale_tiny": parse_fraction(width_scale)})
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    selection = full_selection(spec) if selection_name == "full" else tiny_selection(spec)

    dataset = read_dataset(args.data)
    if dataset.num_classes != spec.num_classes:
        raise ConfigError(f"dataset has {dataset.num_classes} classes, model config expects {spec.num_classes}")
    net = Supernet.from_checkpoint(spec, ckpt)
    try:
        result = evaluate(net, selection, dataset.split(args.split), batch_size=args.batch_size)
    except ContractError as exc:
        raise ConfigError(f"checkpoint cannot run the {selection_name} selection: {exc}") from None

    logger.info("Checkpoint evaluated", checkpoint=str(args.checkpoint), selection=selection_name, oa=round(result.oa, 4))
    print(f"{selection_name} {args.split}: OA {100 * result.oa:.2f}% ({result.correct}/{result.total}), CE {result.ce:.4f}")
    return 0


def register(subparsers: "argparse._SubParsersAction", parents: Optional[list] = None) -> None:
    train = subparsers.add_parser(
        "train",
        parents=parents or [],
        help="train in one of the compression modes",
        description="Train a model. Flags override values from --plan; the resolved plan goes to manifest.json.",
    )
    train.add_argument("--mode", choices=MODE_CHOICES, default=None, help="training mode (default two-stage)")
    train.add_argument("--config", default=None, help="model config JSON (largest network)")
    train.add_argument("--data", default=None, help="PCDS dataset")
    train.add_argument("--teacher", default=None, help="teacher checkpoint (kd, two-stage, hint, end2end)")
    train.add_argument("--plan", default=None, help="TrainPlan JSON file")
    train.add_argument("--out", default=None, help=f"run directory (default {settings.output_dir})")
    train.add_argument("--epochs", type=int, default=None, help="epochs of the (first) stage")
    train.add_argument("--epochs2", type=int, default=None, help="stage-2 epochs (two-stage)")
    train.add_argument("--batch-size", type=int, default=None)
    train.add_argument("--lr", type=float, default=None, help="base learning rate")
    train.add_argument("--T", type=float, default=None, help="distillation temperature")
    train.add_argument("--alpha", type=float, default=None, help="KD / hint weight")
    train.add_argument("--e2e-alpha", type=float, default=None, help="static alpha of the end2end loop")
    train.add_argument("--warmup", type=int, default=None, help="end2end warm-up epochs without KD")
    train.add_argument("--r", type=int, default=None, help="expanding ratio (width options per layer)")
    train.add_argument("--expand-mode", choices=("linear", "geometric"), default=None)
    train.add_argument("--beta-mode", choices=("static", "linear-decay"), default=None)
    train.add_argument("--beta-start", type=float, default=None)
    train.add_argument("--beta-end", type=float, default=None)
    train.add_argument("--hint-init", choices=("identity", "gaussian"), default=None)
    train.add_argument("--width-scale", default=None, help="tiny width scale, e.g. 1/8")
    train.add_argument("--seed", type=int, default=None, help="sets the init, data and subnet seeds")
    train.add_argument("--init-seed", type=int, default=None)
    train.add_argument("--data-seed", type=int, default=None)
    train.add_argument("--subnet-seed", type=int, default=None)
    train.add_argument("--allow-digest-mismatch", action="store_true", help="load a teacher written for another config")
    train.set_defaults(handler=cmd_train)

    ev = subparsers.add_parser(
        "eval",
        parents=parents or [],
        help="evaluate a checkpoint",
        description="Overall accuracy of a checkpoint on a dataset split.",
    )
    ev.add_argument("--checkpoint", required=True, help="T3DN checkpoint")
    ev.add_argument("--config", required=True, help="model config JSON")
    ev.add_argument("--data", required=True, help="PCDS dataset")
    ev.add_argument("--split", choices=("train", "test"), default="test")
    ev.add_argument(
        "--selection", choices=("auto", "tiny", "full"), default="auto",
        help="subnet to evaluate (auto: full for teacher checkpoints, tiny otherwise)",
    )
    ev.add_argument("--width-scale", default=None, help="tiny width scale (default: recorded in the checkpoint)")
    ev.add_argument("--batch-size", type=int, default=None)
    ev.add_argument("--allow-digest-mismatch", action="store_true")
    ev.set_defaults(handler=cmd_eval)
