"""Weight and multiply-add counts for original and decomposed layers.

One multiply-add is counted as one FLOP.  Biases are left out of both
counts; :class:`~tuckershot.report.LayerReport` carries them separately.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph import LayerRanks, LayerSpec

FLOP_CONVENTION = "one multiply-add = one FLOP; biases excluded from weights and FLOPs"


@dataclass(frozen=True)
class StagedCost:
    weights: int
    flops: int
    stages: tuple          # stage names, e.g. ("in", "core", "out")
    stage_weights: tuple
    stage_flops: tuple


def _dims(layer: LayerSpec):
    if not layer.is_linear:
        raise ValueError(f"{layer.name}: only conv/fc layers have weights")
    g = layer.groups
    return layer.kernel, layer.in_channels // g, layer.out // g, g


def conv_cost(layer: LayerSpec, out_spatial: tuple) -> tuple:
    """``(weights, flops)`` of an undecomposed conv/fc layer."""
    d, sg, tg, g = _dims(layer)
    weights = d * d * sg * tg * g
    return weights, weights * out_spatial[0] * out_spatial[1]


def compressed_cost(layer: LayerSpec, ranks: LayerRanks, in_spatial: tuple, out_spatial: tuple) -> StagedCost:
    """Cost of the decomposed replacement of ``layer``.

    Tucker-2 gives ``S R3 + D^2 R3 R4 + T R4`` weights and
    ``S R3 HW + D^2 R3 R4 H'W' + T R4 H'W'`` FLOPs (per group, summed).
    """
    ranks.check(layer)
    d, sg, tg, g = _dims(layer)
    hw = in_spatial[0] * in_spatial[1]
    ohw = out_spatial[0] * out_spatial[1]
    r3, r4 = ranks.r3, ranks.r4
    names, ws, fs = [], [], []
    if r3 is not None:
        names.append("in")
        ws.append(sg * r3 * g)
        fs.append(sg * r3 * hw * g)
    core_in = sg if r3 is None else r3
    core_out = tg if r4 is None else r4
    names.append("core")
    ws.append(d * d * core_in * core_out * g)
    fs.append(ws[-1] * ohw)
    if r4 is not None:
        names.append("out")
        ws.append(tg * r4 * g)
        fs.append(tg * r4 * ohw * g)
    return StagedCost(sum(ws), sum(fs), tuple(names), tuple(ws), tuple(fs))


def ratio_bound(layer: LayerSpec, ranks: LayerRanks) -> float:
    """Upper bound ``S T / (R3 R4)`` (per group) shared by both ratios."""
    _, sg, tg, _ = _dims(layer)
    bound = 1.0
    if ranks.r3 is not None:
        bound *= sg / ranks.r3
    if ranks.r4 is not None:
        bound *= tg / ranks.r4
    return bound
