"""
Parameter and FLOPs accounting.

Conventions (stated in every report):
  - conv / linear: 2 * apps * in * out multiply-accumulate FLOPs + apps * out bias adds
  - normalization + ReLU: 3 * apps * out
  - max pooling: (K - 1) * C comparisons per group
  - dropout: 0
  - FPS and ball query are excluded (they do not depend on width)

`apps` is the number of rows a shared MLP is applied to: centroids x group
members inside a set-abstraction stage, 1 per sample in the head. Counts are
for a single input cloud.
"""

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Union

from t3dnet.core.errors import ContractError
from t3dnet.models.architecture import LayerKind, LayerSpec, SupernetSpec

FLOPS_CONVENTION = (
    "1 MAC = 2 FLOPs; bias adds 1 per output; norm+ReLU 3 per output; "
    "max-pool comparisons 1 each; sampling/grouping excluded"
)


@dataclass(frozen=True)
class LayerCost:
    name: str
    kind: str
    full_in: int
    full_out: int
    apps: int
    params: int
    flops: int
    formula: str


def count_layer_params(layer: LayerSpec) -> int:
    """Weights + bias for conv/linear, gamma + beta for norm, 0 otherwise."""
    if layer.has_weights:
        return layer.full_in * layer.full_out + layer.full_out
    if layer.kind == LayerKind.NORM:
        return 2 * layer.full_out
    return 0


def _applications(spec: SupernetSpec, n_points: int) -> Dict[str, Dict[str, int]]:
    """rows (apps), groups and group size for each stage-scale prefix."""
    if n_points < spec.max_npoint:
        raise ContractError(f"n_points={n_points} is smaller than the largest npoint {spec.max_npoint}")
    table: Dict[str, Dict[str, int]] = {}
    points_in = n_points
    for si, stage in enumerate(spec.stages):
        for ci, scale in enumerate(stage.scales):
            if stage.group_all:
                groups, members = 1, points_in
            else:
                groups, members = stage.npoint, scale.nsample
            table[f"sa{si + 1}.s{ci}"] = {"groups": groups, "members": members, "apps": groups * members}
        points_in = 1 if stage.group_all else stage.npoint
    table["head"] = {"groups": 1, "members": points_in, "apps": 1}
    return table


def _prefix(layer: LayerSpec) -> str:
    return "head" if layer.name.startswith("head") else ".".join(layer.name.split(".")[:2])


def flops_table(spec: SupernetSpec, width_scale: Union[Fraction, float, str] = 1, n_points: int = 1024) -> List[LayerCost]:
    """Per-layer params and FLOPs of the network scaled by `width_scale`."""
    scaled = spec.scaled(width_scale)
    apps_by_prefix = _applications(scaled, n_points)
    rows: List[LayerCost] = []
    for layer in scaled.layers():
        info = apps_by_prefix[_prefix(layer)]
        apps = info["apps"]
        params = count_layer_params(layer)
        if layer.has_weights:
            flops = 2 * apps * layer.full_in * layer.full_out + apps * layer.full_out
            formula = "2*apps*in*out + apps*out"
        elif layer.kind == LayerKind.NORM:
            flops = 3 * apps * layer.full_out
            formula = "3*apps*out"
        elif layer.kind == LayerKind.POOL:
            flops = info["groups"] * (info["members"] - 1) * layer.full_out
            formula = "groups*(K-1)*C"
        else:
            flops = 0
            formula = "0"
        rows.append(LayerCost(
            name=layer.name,
            kind=layer.kind.value,
            full_in=layer.full_in,
            full_out=layer.full_out,
            apps=apps,
            params=params,
            flops=flops,
            formula=formula,
        ))
    # global pooling before the head when the last stage keeps several points
    last = scaled.stages[-1]
    if not last.group_all and last.npoint > 1:
        width = last.out_width
        rows.append(LayerCost(
            name="global.pool", kind=LayerKind.POOL.value, full_in=width, full_out=width,
            apps=last.npoint, params=0, flops=(last.npoint - 1) * width, formula="(M-1)*C",
        ))
    return rows


def count_params(spec: SupernetSpec, width_scale: Union[Fraction, float, str] = 1) -> int:
    """Exact weight + bias + norm-affine count at scaled widths."""
    return sum(count_layer_params(layer) for layer in spec.scaled(width_scale).layers())


def count_flops(spec: SupernetSpec, width_scale: Union[Fraction, float, str] = 1, n_points: int = 1024) -> int:
    """
    Total FLOPs for one cloud.

    Set-abstraction stages work on a fixed number of centroids, so `n_points`
    only matters for a group-all stage fed directly by the raw cloud. Otherwise
    it is just checked against the largest npoint and the count does not
    change with N.
    """
    return sum(row.flops for row in flops_table(spec, width_scale, n_points))


def human_count(value: int) -> str:
    """1747368 -> '1.75M', 7996000000 -> '8.00G'."""
    for suffix, scale in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if value >= scale:
            return f"{value / scale:.2f}{suffix}"
    return str(value)
