"""
Width-sliceable PointNet++ (MSG) classification supernet.

Every conv/linear layer owns one full-width weight of shape
(full_out, full_in). A forward pass under a SubnetSelection reads only the
leading slice [0:out_width, cols] of it, where `cols` takes, for each input
segment, that segment's leading channels (the xyz block is always kept
whole). Normalization keeps an independent affine/statistics set for each
width the layer can run at, keyed by that width.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from t3dnet.core.errors import CheckpointMismatchError, ContractError, DimensionError
from t3dnet.core.tensor import Tensor, concat, dropout, gather_groups
from t3dnet.models.architecture import (
    HEAD_OUT,
    LayerKind,
    LayerSpec,
    SupernetSpec,
    scale_width,
)
from t3dnet.models.internal import Checkpoint
from t3dnet.nn.geometry import batched_ball_query, batched_fps


BN_MOMENTUM = 0.1
BN_EPS = 1e-5


# ===== SELECTIONS =====

@dataclass(frozen=True)
class SubnetSelection:
    """Chosen output width of every conv/linear layer; input widths follow."""
    out_widths: Mapping[str, int]
    label: str = ""

    def width(self, name: str) -> int:
        return self.out_widths[name]

    def in_width(self, layer: LayerSpec) -> int:
        return sum(seg.width if seg.source is None else self.out_widths[seg.source] for seg in layer.segments)

    def pairs(self, layers: Iterable[LayerSpec]) -> Dict[str, Tuple[int, int]]:
        """(in_width, out_width) of every weighted layer."""
        return {
            layer.name: (self.in_width(layer), self.out_widths[layer.name])
            for layer in layers
            if layer.has_weights
        }

    def dominates(self, other: "SubnetSelection") -> bool:
        return all(self.out_widths[k] >= w for k, w in other.out_widths.items())

    def summary(self) -> str:
        if self.label:
            return self.label
        return "-".join(str(w) for w in self.out_widths.values())


def weighted_layers(spec: SupernetSpec) -> List[LayerSpec]:
    return [layer for layer in spec.layers() if layer.has_weights]


def make_selection(spec: SupernetSpec, out_widths: Mapping[str, int], label: str = "") -> SubnetSelection:
    """
    Validate widths against the SupernetSpec; pinned outputs (class count) are filled in.

    Raises:
        ContractError: a width is < 1 or exceeds the layer's full width
    """
    widths: Dict[str, int] = {}
    for layer in weighted_layers(spec):
        if not layer.scalable_out:
            chosen = out_widths.get(layer.name, layer.full_out)
            if chosen != layer.full_out:
                raise ContractError(f"layer {layer.name} output is pinned to {layer.full_out}, got {chosen}")
            widths[layer.name] = layer.full_out
            continue
        if layer.name not in out_widths:
            raise ContractError(f"selection has no width for layer {layer.name}")
        chosen = int(out_widths[layer.name])
        if chosen < 1 or chosen > layer.full_out:
            raise ContractError(
                f"selection width {chosen} for {layer.name} outside [1, {layer.full_out}]"
            )
        widths[layer.name] = chosen
    return SubnetSelection(out_widths=widths, label=label)


def full_selection(spec: SupernetSpec) -> SubnetSelection:
    return make_selection(spec, {l.name: l.full_out for l in weighted_layers(spec)}, label="full")


def tiny_selection(spec: SupernetSpec, width_scale=None) -> SubnetSelection:
    scale = spec.width_scale_tiny if width_scale is None else width_scale
    widths = {
        l.name: scale_width(l.full_out, scale) if l.scalable_out else l.full_out
        for l in weighted_layers(spec)
    }
    return make_selection(spec, widths, label="tiny")


# ===== FORWARD RESULT =====

class ForwardResult(NamedTuple):
    logits: Tensor
    feature: Tensor  # pooled global feature that feeds the head


def norm_key(owner: str, width: int) -> str:
    return f"{owner}.bn@{width}"


# ===== SUPERNET =====

class Supernet:
    """
    Full-width parameters plus per-width normalization sets.

    Args:
        spec: Architecture of the largest network
        width_options: Widths each scalable layer may run at (keys of the
            normalization sets). None means full width only.
        seed: Initialization seed
        dtype: float32 for training, float64 for gradient checks
    """

    def __init__(
        self,
        spec: SupernetSpec,
        width_options: Optional[Mapping[str, Sequence[int]]] = None,
        seed: int = 0,
        dtype: np.dtype = np.float32,
    ) -> None:
        self.spec = spec
        self.layers: List[LayerSpec] = spec.layers()
        self._by_name: Dict[str, LayerSpec] = {l.name: l for l in self.layers}
        self.dtype = np.dtype(dtype)
        self.training = True
        self.params: Dict[str, Tensor] = {}
        self.buffers: Dict[str, np.ndarray] = {}
        self._columns: Dict[Tuple[str, Tuple[int, ...]], Union[slice, np.ndarray]] = {}

        rng = np.random.default_rng(seed)
        for layer in self.layers:
            if layer.has_weights:
                std = np.sqrt(2.0 / layer.full_in)
                weight = rng.standard_normal((layer.full_out, layer.full_in)) * std
                self.params[f"{layer.name}.weight"] = Tensor(weight.astype(self.dtype), requires_grad=True)
                self.params[f"{layer.name}.bias"] = Tensor(np.zeros(layer.full_out, self.dtype), requires_grad=True)
            elif layer.kind == LayerKind.NORM:
                widths = {layer.full_out}
                if width_options is not None:
                    widths = set(int(w) for w in width_options.get(layer.owner, [layer.full_out]))
                for w in sorted(widths):
                    self._add_norm_set(layer.owner, w)

    def _add_norm_set(self, owner: str, width: int) -> None:
        key = norm_key(owner, width)
        self.params[f"{key}.gamma"] = Tensor(np.ones(width, self.dtype), requires_grad=True)
        self.params[f"{key}.beta"] = Tensor(np.zeros(width, self.dtype), requires_grad=True)
        self.buffers[f"{key}.running_mean"] = np.zeros(width, self.dtype)
        self.buffers[f"{key}.running_var"] = np.ones(width, self.dtype)

    # ===== modes and state =====

    def train(self) -> "Supernet":
        self.training = True
        return self

    def eval(self) -> "Supernet":
        self.training = False
        return self

    def parameters(self) -> Dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def norm_widths(self, owner: str) -> List[int]:
        prefix = f"{owner}.bn@"
        return sorted(
            int(name[len(prefix):].split(".")[0])
            for name in self.params
            if name.startswith(prefix) and name.endswith(".gamma")
        )

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.params.items()}
        state.update({name: b.copy() for name, b in self.buffers.items()})
        return state

    def load_state_dict(self, tensors: Mapping[str, np.ndarray]) -> None:
        """
        Replace every parameter and buffer.

        Raises:
            CheckpointMismatchError: names or shapes differ
        """
        expected = set(self.params) | set(self.buffers)
        given = set(tensors)
        if expected != given:
            missing = sorted(expected - given)[:5]
            unexpected = sorted(given - expected)[:5]
            raise CheckpointMismatchError(
                f"tensor names do not match the network (missing {missing}, unexpected {unexpected})"
            )
        for name, value in tensors.items():
            target = self.params[name].data if name in self.params else self.buffers[name]
            if target.shape != value.shape:
                raise CheckpointMismatchError(f"tensor '{name}' has shape {value.shape}, expected {target.shape}")
        for name, value in tensors.items():
            array = np.array(value, dtype=self.dtype, copy=True)
            if name in self.params:
                self.params[name].data = array
                self.params[name].grad = None
            else:
                self.buffers[name] = array

    def to_checkpoint(self, epoch: int, metrics: Optional[dict] = None) -> Checkpoint:
        return Checkpoint(
            tensors=self.state_dict(),
            digest=self.spec.digest(),
            epoch=epoch,
            metrics=dict(metrics or {}),
            architecture=self.spec.name,
        )

    @classmethod
    def from_checkpoint(cls, spec: SupernetSpec, ckpt: Checkpoint, dtype: np.dtype = np.float32) -> "Supernet":
        """Build a network whose normalization sets match the checkpoint, then load it."""
        options: Dict[str, List[int]] = {}
        for name in ckpt.tensors:
            if ".bn@" in name and name.endswith(".gamma"):
                owner, rest = name.split(".bn@", 1)
                options.setdefault(owner, []).append(int(rest.split(".")[0]))
        net = cls(spec, width_options=options, dtype=dtype)
        net.load_state_dict(ckpt.tensors)
        return net

    # ===== slicing =====

    def input_columns(self, layer: LayerSpec, selection: SubnetSelection) -> Union[slice, np.ndarray]:
        """Columns of the full weight read under `selection` (segment-wise leading slices)."""
        used = tuple(
            seg.width if seg.source is None else selection.out_widths[seg.source] for seg in layer.segments
        )
        key = (layer.name, used)
        cols = self._columns.get(key)
        if cols is None:
            parts, offset = [], 0
            for seg, width in zip(layer.segments, used):
                parts.append(np.arange(offset, offset + width))
                offset += seg.width
            flat = np.concatenate(parts)
            cols = slice(0, flat.size) if np.array_equal(flat, np.arange(flat.size)) else flat
            self._columns[key] = cols
        return cols

    def weight_slice(self, name: str, selection: SubnetSelection) -> Tuple[Tensor, Tensor]:
        layer = self._by_name[name]
        out_w = selection.out_widths[name]
        if out_w > layer.full_out:
            raise ContractError(f"selection width {out_w} for {name} exceeds full width {layer.full_out}")
        cols = self.input_columns(layer, selection)
        weight = self.params[f"{name}.weight"]
        bias = self.params[f"{name}.bias"]
        return weight[:out_w, cols], bias[:out_w]

    def slice_masks(self, selection: SubnetSelection) -> Dict[str, np.ndarray]:
        """Boolean mask per parameter: entries a forward under `selection` reads."""
        masks: Dict[str, np.ndarray] = {}
        for name, param in self.params.items():
            masks[name] = np.zeros(param.shape, dtype=bool)
        for layer in self.layers:
            if layer.has_weights:
                out_w = selection.out_widths[layer.name]
                masks[f"{layer.name}.weight"][:out_w, self.input_columns(layer, selection)] = True
                masks[f"{layer.name}.bias"][:out_w] = True
            elif layer.kind == LayerKind.NORM:
                key = norm_key(layer.owner, selection.out_widths[layer.owner])
                if f"{key}.gamma" in masks:
                    masks[f"{key}.gamma"][:] = True
                    masks[f"{key}.beta"][:] = True
        return masks

    # ===== layers =====

    def _linear(self, x: Tensor, name: str, selection: SubnetSelection) -> Tensor:
        weight, bias = self.weight_slice(name, selection)
        if x.shape[-1] != weight.shape[1]:
            raise DimensionError(f"{name}: input width {x.shape[-1]} != selected in-width {weight.shape[1]}")
        return x @ weight.transpose() + bias

    def _batch_norm(self, x: Tensor, owner: str, width: int) -> Tensor:
        key = norm_key(owner, width)
        if f"{key}.gamma" not in self.params:
            raise ContractError(f"{owner} has no normalization set for width {width}")
        gamma = self.params[f"{key}.gamma"]
        beta = self.params[f"{key}.beta"]
        if self.training:
            mean = x.mean(axis=0)
            centered = x - mean
            var = (centered * centered).mean(axis=0)
            x_hat = centered * (var + BN_EPS) ** -0.5
            rows = x.shape[0]
            unbiased = var.data * (rows / (rows - 1)) if rows > 1 else var.data
            rm = self.buffers[f"{key}.running_mean"]
            rv = self.buffers[f"{key}.running_var"]
            self.buffers[f"{key}.running_mean"] = ((1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mean.data).astype(self.dtype)
            self.buffers[f"{key}.running_var"] = ((1 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased).astype(self.dtype)
        else:
            rm = self.buffers[f"{key}.running_mean"]
            rv = self.buffers[f"{key}.running_var"]
            x_hat = (x - rm) * (1.0 / np.sqrt(rv + BN_EPS)).astype(self.dtype)
        return x_hat * gamma + beta

    def _mlp_block(self, rows: Tensor, name: str, selection: SubnetSelection) -> Tensor:
        out = self._linear(rows, name, selection)
        out = self._batch_norm(out, name, selection.out_widths[name])
        return out.relu()

    # ===== forward =====

    def set_abstraction(
        self,
        stage_index: int,
        xyz: np.ndarray,
        features: Optional[Tensor],
        selection: SubnetSelection,
    ) -> Tuple[np.ndarray, Tensor]:
        """
        One MSG stage.

        Args:
            xyz: (B, N, 3) coordinates
            features: (B, N, C) or None for the first stage

        Returns:
            (new xyz (B, M, 3), pooled features (B, M, sum of scale widths))
        """
        stage = self.spec.stages[stage_index]
        batch, n, _ = xyz.shape
        label = f"sa{stage_index + 1}"

        grouped: List[Tuple[np.ndarray, Optional[Tensor]]] = []
        if stage.group_all:
            new_xyz = np.zeros((batch, 1, 3), dtype=xyz.dtype)
            rel = xyz[:, None, :, :]
            feats = features.reshape(batch, 1, n, features.shape[-1]) if features is not None else None
            grouped.append((rel, feats))
        else:
            if n < stage.npoint:
                raise ContractError(f"stage {label} needs at least {stage.npoint} points, got {n}")
            centers = batched_fps(xyz, stage.npoint)
            batch_idx = np.arange(batch)[:, None]
            new_xyz = xyz[batch_idx, centers]
            for scale in stage.scales:
                idx = batched_ball_query(xyz, new_xyz, scale.radius, scale.nsample)
                rel = xyz[batch_idx[:, :, None], idx] - new_xyz[:, :, None, :]
                feats = gather_groups(features, idx) if features is not None else None
                grouped.append((rel, feats))

        pooled: List[Tensor] = []
        for ci, (rel, feats) in enumerate(grouped):
            rel_t = Tensor(rel.astype(self.dtype))
            x = concat([rel_t, feats], axis=-1) if feats is not None else rel_t
            b, m, k, c = x.shape
            rows = x.reshape(b * m * k, c)
            for kk in range(len(stage.scales[ci].mlp)):
                rows = self._mlp_block(rows, f"{label}.s{ci}.mlp{kk}", selection)
            pooled.append(rows.reshape(b, m, k, rows.shape[-1]).max(axis=2))
        out = pooled[0] if len(pooled) == 1 else concat(pooled, axis=-1)
        return new_xyz, out

    def forward(
        self,
        points: np.ndarray,
        selection: SubnetSelection,
        rng: Optional[np.random.Generator] = None,
    ) -> ForwardResult:
        """
        Classify a (B, N, 3) batch at the selection's widths.

        Dropout needs `rng` in training mode; evaluation mode is deterministic.
        """
        points = np.asarray(points)
        if points.ndim != 3 or points.shape[-1] != 3:
            raise DimensionError(f"points must be B x N x 3, got shape {points.shape}")
        xyz = points.astype(self.dtype, copy=False)
        features: Optional[Tensor] = None
        for si in range(len(self.spec.stages)):
            xyz, features = self.set_abstraction(si, xyz, features, selection)

        batch = features.shape[0]
        if features.shape[1] == 1:
            feature = features.reshape(batch, features.shape[-1])
        else:
            feature = features.max(axis=1)

        x = feature
        for k in range(len(self.spec.head.hidden)):
            x = self._mlp_block(x, f"head.fc{k}", selection)
            x = dropout(x, self.spec.head.dropout, rng, self.training)
        logits = self._linear(x, HEAD_OUT, selection)
        return ForwardResult(logits=logits, feature=feature)

    __call__ = forward


# ===== STANDALONE SUBNETS =====

def extract_subnet(supernet: Supernet, selection: SubnetSelection) -> Supernet:
    """
    Standalone network whose full widths are the selection's widths, built by
    copying the leading weight slices and the matching normalization sets.
    """
    spec = supernet.spec.with_widths(dict(selection.out_widths))
    standalone = Supernet(spec, width_options=None, dtype=supernet.dtype)
    state: Dict[str, np.ndarray] = {}
    for layer in supernet.layers:
        if layer.has_weights:
            weight, bias = supernet.weight_slice(layer.name, selection)
            state[f"{layer.name}.weight"] = weight.data.copy()
            state[f"{layer.name}.bias"] = bias.data.copy()
        elif layer.kind == LayerKind.NORM:
            key = norm_key(layer.owner, selection.out_widths[layer.owner])
            if f"{key}.gamma" not in supernet.params:
                raise ContractError(f"{layer.owner} has no normalization set for width {selection.out_widths[layer.owner]}")
            for suffix in ("gamma", "beta"):
                state[f"{key}.{suffix}"] = supernet.params[f"{key}.{suffix}"].data.copy()
            for suffix in ("running_mean", "running_var"):
                state[f"{key}.{suffix}"] = supernet.buffers[f"{key}.{suffix}"].copy()
    standalone.load_state_dict(state)
    standalone.training = supernet.training
    return standalone
