"""
Training orchestration for every mode.

    teacher         full width, CE
    tiny-baseline   tiny selection, CE
    netaug-only     stage 1 only: tiny + per-epoch augmented subnet
    kd-only         tiny selection distilled from the teacher
    two-stage       stage 1 (augmentation), then stage 2 (distillation)
    hint            tiny selection, alpha * hint + (1 - alpha) * CE
    mutual          tiny and augmented subnet teach each other
    end2end         augmentation and distillation in one loop, with warm-up

Single-loop modes run epochs_stage1 epochs. Each stage writes
`metrics_stage{n}.csv`, `checkpoint_stage{n}.t3dn` (best test OA) and, when
subnets are sampled, `selections_stage{n}.jsonl`.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from t3dnet import __version__
from t3dnet.config import settings
from t3dnet.core.errors import ConfigError, ContractError, NumericError, T3DNetError, TrainingDivergedError
from t3dnet.core.functional import correct_count, cross_entropy
from t3dnet.core.logging import get_logger
from t3dnet.core.optim import Adam, LrSchedule, lr_at
from t3dnet.core.tensor import Tensor, no_grad
from t3dnet.models.architecture import SupernetSpec, conv_name, format_fraction, parse_fraction
from t3dnet.models.internal import Checkpoint, Dataset, EpochMetrics, PointCloudBatch, RunManifest, Split
from t3dnet.models.plan import TrainPlan
from t3dnet.nn.supernet import Supernet, SubnetSelection, full_selection, tiny_selection
from t3dnet.services.augmentation import ExpandOptions, beta_at, blend_stage1, build_expand_options, sample_selection
from t3dnet.services.data_service import batches
from t3dnet.services.distillation import (
    HintMap,
    alpha_at,
    effective_alpha,
    end_to_end_loss,
    hint_loss,
    kd_loss,
    mutual_losses,
    stage2_loss,
)
from t3dnet.services.metrics_logger import MetricsLogger
from t3dnet.services.prefetch import prefetch
from t3dnet.storage.checkpoint_store import load_checkpoint, save_checkpoint, verify_digest
from t3dnet.storage.files import atomic_write_json, atomic_write_text
from t3dnet.storage.pcds import read_dataset

logger = get_logger(__name__)


# ===== EVALUATION =====

@dataclass(frozen=True)
class EvalResult:
    oa: float
    ce: float
    correct: int
    total: int


def evaluate(
    net: Supernet,
    selection: SubnetSelection,
    split: Split,
    batch_size: Optional[int] = None,
) -> EvalResult:
    """
    Overall accuracy and mean CE of `selection` on `split`, in evaluation
    mode and without touching parameters or statistics.

    Raises:
        ConfigError: empty split
    """
    if len(split) == 0:
        raise ConfigError("cannot evaluate on an empty split")
    batch_size = batch_size or settings.eval_batch_size
    was_training = net.training
    net.eval()
    correct, ce_sum = 0, 0.0
    try:
        with no_grad():
            for batch in batches(split, batch_size, shuffle_seed=None):
                logits = net(batch.points, selection).logits
                ce_sum += cross_entropy(logits, batch.labels).item() * batch.size
                correct += correct_count(logits.data, batch.labels)
    finally:
        net.training = was_training
    total = len(split)
    return EvalResult(oa=correct / total, ce=ce_sum / total, correct=correct, total=total)


# ===== OBJECTIVES =====

@dataclass
class EpochSetup:
    epoch: int = 0
    beta: float = 1.0
    alpha: float = 0.0
    aug: Optional[SubnetSelection] = None


@dataclass
class StepOutput:
    loss: Tensor
    components: Dict[str, float]
    logits: Tensor  # branch whose training OA is reported


class Objective:
    """Per-mode loss. `begin_epoch` runs once per epoch, `step` once per batch."""

    def __init__(self, net: Supernet, selection: SubnetSelection) -> None:
        self.net = net
        self.selection = selection

    @property
    def extra_params(self) -> Dict[str, Tensor]:
        return {}

    def begin_epoch(self, epoch: int) -> EpochSetup:
        return EpochSetup()

    def step(self, batch: PointCloudBatch, setup: EpochSetup, rng: np.random.Generator) -> StepOutput:
        logits = self.net(batch.points, self.selection, rng).logits
        ce = cross_entropy(logits, batch.labels)
        return StepOutput(ce, {"ce_tiny": ce.item(), "total": ce.item()}, logits)


class _Teacher:
    """Frozen full-width teacher: evaluation mode, no tape."""

    def __init__(self, net: Supernet) -> None:
        self.net = net.eval()
        self.selection = full_selection(net.spec)

    def __call__(self, points: np.ndarray):
        with no_grad():
            return self.net(points, self.selection)

    def assert_untouched(self) -> None:
        for name, param in self.net.parameters().items():
            if param.grad is not None and np.any(param.grad):
                raise ContractError(f"teacher parameter '{name}' received a gradient")


class AugmentObjective(Objective):
    """beta * CE(tiny) + (1 - beta) * CE(aug); the aug forward is skipped at beta == 1."""

    def __init__(self, net, selection, options: ExpandOptions, plan: TrainPlan, epochs: int) -> None:
        super().__init__(net, selection)
        self.options = options
        self.schedule = plan.augment.beta
        self.epochs = epochs
        self.subnet_rng = np.random.default_rng(plan.seeds.subnet)

    def begin_epoch(self, epoch: int) -> EpochSetup:
        return EpochSetup(
            beta=beta_at(self.schedule, epoch, self.epochs),
            aug=sample_selection(self.options, self.subnet_rng),
        )

    def _branches(self, batch, setup, rng) -> Tuple[Tensor, Tensor, Optional[Tensor], Optional[Tensor]]:
        tiny_out = self.net(batch.points, self.selection, rng)
        ce_tiny = cross_entropy(tiny_out.logits, batch.labels)
        if setup.beta == 1.0:
            return tiny_out.logits, ce_tiny, None, None
        aug_logits = self.net(batch.points, setup.aug, rng).logits
        return tiny_out.logits, ce_tiny, aug_logits, cross_entropy(aug_logits, batch.labels)

    def step(self, batch, setup, rng) -> StepOutput:
        tiny_logits, ce_tiny, _, ce_aug = self._branches(batch, setup, rng)
        loss = blend_stage1(ce_tiny, ce_aug, setup.beta)
        comps = {"ce_tiny": ce_tiny.item(), "ce_aug": ce_aug.item() if ce_aug is not None else 0.0}
        comps["total"] = loss.item()
        return StepOutput(loss, comps, tiny_logits)


class DistillObjective(Objective):
    """alpha * KD(teacher -> tiny) + (1 - alpha) * CE."""

    def __init__(self, net, selection, teacher: _Teacher, plan: TrainPlan) -> None:
        super().__init__(net, selection)
        self.teacher = teacher
        self.T = plan.kd.T
        self.alpha = plan.kd.alpha

    def begin_epoch(self, epoch: int) -> EpochSetup:
        return EpochSetup(alpha=self.alpha)

    def step(self, batch, setup, rng) -> StepOutput:
        teacher_logits = self.teacher(batch.points).logits
        logits = self.net(batch.points, self.selection, rng).logits
        ce = cross_entropy(logits, batch.labels)
        kd = kd_loss(teacher_logits, logits, self.T)
        loss = stage2_loss(kd, ce, self.alpha)
        return StepOutput(loss, {"ce_tiny": ce.item(), "kd": kd.item(), "total": loss.item()}, logits)


class HintObjective(Objective):
    """alpha * hint + (1 - alpha) * CE, hint taken on the pooled global feature."""

    def __init__(self, net, selection, teacher: _Teacher, plan: TrainPlan) -> None:
        super().__init__(net, selection)
        self.teacher = teacher
        self.alpha = plan.kd.alpha
        last = len(net.spec.stages) - 1
        student_width = sum(
            selection.width(conv_name(last, ci, len(sc.mlp) - 1))
            for ci, sc in enumerate(net.spec.stages[last].scales)
        )
        self.hint_map = HintMap(
            student_width,
            teacher.net.spec.feature_width,
            init=plan.hint.init,
            init_std=plan.hint.init_std,
            seed=plan.seeds.init,
            dtype=net.dtype,
        )

    @property
    def extra_params(self) -> Dict[str, Tensor]:
        return self.hint_map.parameters()

    def begin_epoch(self, epoch: int) -> EpochSetup:
        return EpochSetup(alpha=self.alpha)

    def step(self, batch, setup, rng) -> StepOutput:
        teacher_feat = self.teacher(batch.points).feature
        out = self.net(batch.points, self.selection, rng)
        ce = cross_entropy(out.logits, batch.labels)
        hint = hint_loss(teacher_feat, out.feature, self.hint_map)
        if self.alpha == 0.0:
            loss = ce
        elif self.alpha == 1.0:
            loss = hint
        else:
            loss = self.alpha * hint + (1.0 - self.alpha) * ce
        return StepOutput(loss, {"ce_tiny": ce.item(), "hint": hint.item(), "total": loss.item()}, out.logits)


class MutualObjective(AugmentObjective):
    """CE(tiny) + KD(aug -> tiny) + CE(aug) + KD(tiny -> aug)."""

    def __init__(self, net, selection, options, plan: TrainPlan, epochs: int) -> None:
        super().__init__(net, selection, options, plan, epochs)
        self.T = plan.kd.T

    def begin_epoch(self, epoch: int) -> EpochSetup:
        return EpochSetup(beta=0.0, aug=sample_selection(self.options, self.subnet_rng))

    def step(self, batch, setup, rng) -> StepOutput:
        tiny_logits = self.net(batch.points, self.selection, rng).logits
        aug_logits = self.net(batch.points, setup.aug, rng).logits
        ce_tiny = cross_entropy(tiny_logits, batch.labels)
        ce_aug = cross_entropy(aug_logits, batch.labels)
        kd_tiny, kd_aug = mutual_losses(tiny_logits, aug_logits, self.T)
        loss = ce_tiny + kd_tiny + ce_aug + kd_aug
        comps = {
            "ce_tiny": ce_tiny.item(),
            "ce_aug": ce_aug.item(),
            "kd": kd_tiny.item() + kd_aug.item(),
            "total": loss.item(),
        }
        return StepOutput(loss, comps, tiny_logits)


class EndToEndObjective(AugmentObjective):
    """alpha * KD + (1 - alpha) * (beta * CE(tiny) + (1 - beta) * CE(aug)); alpha = 0 during warm-up."""

    def __init__(self, net, selection, options, teacher: _Teacher, plan: TrainPlan, epochs: int) -> None:
        super().__init__(net, selection, options, plan, epochs)
        self.teacher = teacher
        self.T = plan.kd.T
        self.alpha_schedule = plan.end2end.alpha
        self.warmup = plan.end2end.warmup_epochs

    def begin_epoch(self, epoch: int) -> EpochSetup:
        setup = super().begin_epoch(epoch)
        alpha = alpha_at(self.alpha_schedule, epoch, self.warmup, self.epochs)
        setup.alpha = effective_alpha(alpha, epoch, self.warmup)
        return setup

    def step(self, batch, setup, rng) -> StepOutput:
        tiny_logits, ce_tiny, _, ce_aug = self._branches(batch, setup, rng)
        kd = None
        if setup.alpha > 0.0:
            kd = kd_loss(self.teacher(batch.points).logits, tiny_logits, self.T)
        loss = end_to_end_loss(kd, ce_tiny, ce_aug, setup.alpha, setup.beta, setup.epoch, self.warmup)
        comps = {
            "ce_tiny": ce_tiny.item(),
            "ce_aug": ce_aug.item() if ce_aug is not None else 0.0,
            "kd": kd.item() if kd is not None else 0.0,
            "total": loss.item(),
        }
        return StepOutput(loss, comps, tiny_logits)


# ===== RESULTS =====

@dataclass
class StageResult:
    stage: int
    checkpoint: Checkpoint
    checkpoint_path: Path
    metrics_path: Path
    best_oa: float
    best_epoch: int
    selections: List[str] = field(default_factory=list)


@dataclass
class RunResult:
    mode: str
    output_dir: Path
    stages: List[StageResult]

    @property
    def final(self) -> StageResult:
        return self.stages[-1]

    @property
    def outputs(self) -> Dict[str, str]:
        paths: Dict[str, str] = {}
        for s in self.stages:
            paths[f"checkpoint_stage{s.stage}"] = str(s.checkpoint_path)
            paths[f"metrics_stage{s.stage}"] = str(s.metrics_path)
        return paths


# ===== TRAINER =====

class Trainer:
    """
    Runs one TrainPlan against a loaded spec and dataset.

    Args:
        plan: Resolved plan
        spec: Architecture of the largest network
        dataset: Train/test splits
        output_dir: Run directory (created)
        teacher: Trained full-width checkpoint, required by teacher-consuming modes
    """

    def __init__(
        self,
        plan: TrainPlan,
        spec: SupernetSpec,
        dataset: Dataset,
        output_dir: Path,
        teacher: Optional[Checkpoint] = None,
        prefetch_depth: Optional[int] = None,
        eval_batch_size: Optional[int] = None,
    ) -> None:
        if plan.width_scale is not None:
            try:
                spec = spec.model_copy(update={"width_scale_tiny": parse_fraction(plan.width_scale)})
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
        if dataset.num_classes != spec.num_classes:
            raise ConfigError(
                f"dataset has {dataset.num_classes} classes, model config expects {spec.num_classes}"
            )
        if dataset.points_per_cloud < spec.max_npoint:
            raise ConfigError(
                f"dataset has {dataset.points_per_cloud} points per cloud, model samples {spec.max_npoint} centroids"
            )
        if plan.needs_teacher and teacher is None:
            raise ConfigError(f"mode {plan.mode} needs a teacher checkpoint (--teacher)")

        self.plan = plan
        self.spec = spec
        self.dataset = dataset
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.teacher_ckpt = teacher
        self.prefetch_depth = settings.prefetch_depth if prefetch_depth is None else prefetch_depth
        self.eval_batch_size = eval_batch_size or settings.eval_batch_size
        self.schedule = LrSchedule(
            base_lr=plan.optimizer.lr,
            decay_factor=plan.optimizer.decay_factor,
            step_size=plan.optimizer.step_size,
        )

    # ----- setup helpers -----

    def _options(self) -> ExpandOptions:
        return build_expand_options(self.spec, r=self.plan.augment.r, mode=self.plan.augment.expand_mode)

    def _network(self, width_options: Optional[Mapping[str, Sequence[int]]]) -> Supernet:
        return Supernet(self.spec, width_options=width_options, seed=self.plan.seeds.init)

    def _teacher(self) -> _Teacher:
        verify_digest(
            self.teacher_ckpt,
            self.spec.digest(),
            allow_mismatch=self.plan.allow_digest_mismatch,
            source="teacher",
        )
        return _Teacher(Supernet.from_checkpoint(self.spec, self.teacher_ckpt))

    def _tiny_options(self) -> Dict[str, Tuple[int, ...]]:
        tiny = tiny_selection(self.spec)
        return {name: (w,) for name, w in tiny.out_widths.items()}

    # ----- dispatch -----

    def run(self) -> RunResult:
        mode = self.plan.mode
        epochs = self.plan.epochs_stage1
        logger.info("Training started", mode=mode, output_dir=str(self.output_dir))

        if mode == "teacher":
            net = self._network(None)
            stages = [self._run_stage(1, Objective(net, full_selection(self.spec)), epochs)]
        elif mode == "tiny-baseline":
            net = self._network(self._tiny_options())
            stages = [self._run_stage(1, Objective(net, tiny_selection(self.spec)), epochs)]
        elif mode == "kd-only":
            teacher = self._teacher()
            net = self._network(self._tiny_options())
            stages = [self._run_stage(1, DistillObjective(net, tiny_selection(self.spec), teacher, self.plan), epochs, teacher)]
        elif mode == "hint":
            teacher = self._teacher()
            net = self._network(self._tiny_options())
            stages = [self._run_stage(1, HintObjective(net, tiny_selection(self.spec), teacher, self.plan), epochs, teacher)]
        elif mode in ("netaug-only", "two-stage"):
            options = self._options()
            net = self._network(options.width_options())
            stage1 = self._run_stage(1, AugmentObjective(net, options.tiny(), options, self.plan, epochs), epochs)
            stages = [stage1]
            if mode == "two-stage":
                teacher = self._teacher()
                tiny_net = Supernet.from_checkpoint(self.spec, stage1.checkpoint)
                objective = DistillObjective(tiny_net, options.tiny(), teacher, self.plan)
                stages.append(self._run_stage(2, objective, self.plan.epochs_stage2, teacher))
        elif mode == "mutual":
            options = self._options()
            net = self._network(options.width_options())
            stages = [self._run_stage(1, MutualObjective(net, options.tiny(), options, self.plan, epochs), epochs)]
        elif mode == "end2end":
            teacher = self._teacher()
            options = self._options()
            net = self._network(options.width_options())
            objective = EndToEndObjective(net, options.tiny(), options, teacher, self.plan, epochs)
            stages = [self._run_stage(1, objective, epochs, teacher)]
        else:
            raise ConfigError(f"unknown mode '{mode}'")

        logger.info("Training finished", mode=mode, best_oa=round(stages[-1].best_oa, 4))
        return RunResult(mode=mode, output_dir=self.output_dir, stages=stages)

    # ----- the loop -----

    def _run_stage(
        self,
        stage: int,
        objective: Objective,
        epochs: int,
        teacher: Optional[_Teacher] = None,
    ) -> StageResult:
        net = objective.net
        plan = self.plan
        metrics = MetricsLogger(self.output_dir / f"metrics_stage{stage}.csv")
        params = dict(net.parameters())
        params.update(objective.extra_params)
        optimizer = Adam(
            params,
            lr=plan.optimizer.lr,
            beta1=plan.optimizer.beta1,
            beta2=plan.optimizer.beta2,
            eps=plan.optimizer.eps,
        )
        dropout_rng = np.random.default_rng([plan.seeds.init, stage])
        train, test = self.dataset.train, self.dataset.test
        eval_label = objective.selection.summary()

        best_state = net.state_dict()
        best_oa, best_epoch = -1.0, 0
        selection_log: List[str] = []

        for epoch in range(epochs):
            lr = lr_at(self.schedule, epoch)
            optimizer.lr = lr
            setup = objective.begin_epoch(epoch)
            setup.epoch = epoch
            if setup.aug is not None:
                selection_log.append(json.dumps({"epoch": epoch, "widths": dict(setup.aug.out_widths)}, sort_keys=True))

            net.train()
            sums: Dict[str, float] = {}
            correct = seen = 0
            source = prefetch(batches(train, plan.batch_size, plan.seeds.data, epoch), self.prefetch_depth)
            try:
                for index, batch in enumerate(source):
                    optimizer.zero_grad()
                    try:
                        out = objective.step(batch, setup, dropout_rng)
                        if not math.isfinite(out.loss.item()):
                            raise NumericError("loss is not finite")
                        out.loss.backward()
                        optimizer.step()
                    except NumericError as exc:
                        raise TrainingDivergedError(
                            f"{plan.mode} stage {stage} diverged: {exc}", epoch=epoch, batch=index
                        ) from exc
                    for key, value in out.components.items():
                        sums[key] = sums.get(key, 0.0) + value * batch.size
                    correct += correct_count(out.logits.data, batch.labels)
                    seen += batch.size
            finally:
                close = getattr(source, "close", None)
                if close is not None:
                    close()

            if teacher is not None:
                teacher.assert_untouched()

            means = {key: value / seen for key, value in sums.items()}
            selection = setup.aug.summary() if setup.aug is not None else eval_label
            metrics.log(EpochMetrics(
                epoch=epoch, split="train", oa=correct / seen, lr=lr,
                beta=setup.beta, alpha=setup.alpha, selection=selection, **means,
            ))

            test_oa: Optional[float] = None
            if len(test):
                result = evaluate(net, objective.selection, test, self.eval_batch_size)
                test_oa = result.oa
                metrics.log(EpochMetrics(
                    epoch=epoch, split="test", ce_tiny=result.ce, total=result.ce, oa=result.oa,
                    lr=lr, beta=setup.beta, alpha=setup.alpha, selection=eval_label,
                ))
                if result.oa > best_oa:
                    best_oa, best_epoch = result.oa, epoch + 1
                    best_state = net.state_dict()
            metrics.flush()

            logger.info(
                "Epoch finished",
                mode=plan.mode,
                stage=stage,
                epoch=epoch,
                total=round(means.get("total", 0.0), 6),
                train_oa=round(correct / seen, 4),
                test_oa=None if test_oa is None else round(test_oa, 4),
                lr=lr,
                beta=setup.beta,
                alpha=setup.alpha,
            )

        if epochs > 0 and not len(test):
            best_state, best_epoch, best_oa = net.state_dict(), epochs, 0.0
        best_oa = max(best_oa, 0.0)

        checkpoint = Checkpoint(
            tensors=best_state,
            digest=self.spec.digest(),
            epoch=best_epoch,
            metrics={
                "mode": plan.mode,
                "stage": stage,
                "best_test_oa": best_oa,
                "epochs": epochs,
                "width_scale": format_fraction(self.spec.width_scale_tiny),
            },
            architecture=self.spec.name,
        )
        ckpt_path = save_checkpoint(checkpoint, self.output_dir / f"checkpoint_stage{stage}.t3dn")
        if selection_log:
            atomic_write_text(self.output_dir / f"selections_stage{stage}.jsonl", "\n".join(selection_log) + "\n")
        return StageResult(
            stage=stage,
            checkpoint=checkpoint,
            checkpoint_path=ckpt_path,
            metrics_path=metrics.path,
            best_oa=best_oa,
            best_epoch=best_epoch,
            selections=selection_log,
        )


# ===== RUNS =====

def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_inputs(plan: TrainPlan) -> Tuple[SupernetSpec, Dataset, Optional[Checkpoint]]:
    """
    Model config, dataset and (when the mode needs one) teacher checkpoint.

    Raises:
        ConfigError: a required path is unset or missing
    """
    if not plan.architecture:
        raise ConfigError("no model config given (--config)")
    if not plan.dataset:
        raise ConfigError("no dataset given (--data)")
    if not Path(plan.dataset).is_file():
        raise ConfigError(f"dataset not found: {plan.dataset}")
    spec = SupernetSpec.from_file(plan.architecture)
    dataset = read_dataset(plan.dataset)
    teacher: Optional[Checkpoint] = None
    if plan.needs_teacher:
        if not plan.teacher_checkpoint or not Path(plan.teacher_checkpoint).is_file():
            raise ConfigError(f"teacher checkpoint not found: {plan.teacher_checkpoint} (--teacher)")
        teacher = load_checkpoint(plan.teacher_checkpoint)
    return spec, dataset, teacher


def run_plan(plan: TrainPlan, command: str = "train") -> RunResult:
    """
    Load inputs, write `manifest.json` (status running), train, then update
    the manifest with the outputs (completed) or the error (failed).
    """
    output_dir = Path(plan.output_dir or settings.output_dir)
    spec, dataset, teacher = load_inputs(plan)

    digests = {
        "architecture": spec.digest().hex(),
        "dataset": _sha256_file(Path(plan.dataset)),
    }
    if plan.teacher_checkpoint and teacher is not None:
        digests["teacher"] = _sha256_file(Path(plan.teacher_checkpoint))
    manifest = RunManifest(
        tool_version=__version__,
        command=command,
        plan=plan.model_dump(mode="json"),
        seeds=plan.seeds.model_dump(),
        config_digests=digests,
        started_at=datetime.now(timezone.utc),
    )
    manifest_file = output_dir / "manifest.json"
    atomic_write_json(manifest_file, manifest)

    try:
        result = Trainer(plan, spec, dataset, output_dir, teacher=teacher).run()
    except T3DNetError as exc:
        manifest.status = "failed"
        manifest.error = str(exc)
        manifest.finished_at = datetime.now(timezone.utc)
        atomic_write_json(manifest_file, manifest)
        raise

    manifest.status = "completed"
    manifest.outputs = result.outputs
    manifest.finished_at = datetime.now(timezone.utc)
    atomic_write_json(manifest_file, manifest)
    return result
