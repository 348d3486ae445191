"""Whole-network compression: VBMF rank selection, decomposition, substitution."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

from .graph import LayerRanks, LayerSpec
from .network import Network, kernel_groups, substitute_layer
from .report import CompressionReport, analyze
from .tensor import unfold
from .tucker import DEFAULT_MAX_SWEEPS, DEFAULT_TOL, tucker1_kernel, tucker2_kernel
from .vbmf import vbmf_estimate

# Layers with this few input channels per group only get their output mode
# decomposed: a 1x1 stage into at most a handful of channels saves nothing.
SMALL_INPUT = 4

THREADS_ENV = "TUCKERSHOT_THREADS"


@dataclass(frozen=True)
class RankSelection:
    """Chosen ranks per layer, plus the per-group estimates behind them."""

    ranks: dict                                     # name -> LayerRanks
    per_group: dict = field(default_factory=dict)   # name -> [{"r3": .., "r4": ..}, ...]
    source: str = "manual"

    def __post_init__(self):
        if self.source not in ("vbmf", "manual"):
            raise ValueError(f"unknown rank source {self.source!r}")


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(n, 1)


def decomposition_modes(layer: LayerSpec) -> tuple:
    """Which channel modes get decomposed: ``(input?, output?)``."""
    if layer.kernel == 1 and layer.kind == "fc":
        return False, True
    if layer.in_channels // layer.groups <= SMALL_INPUT:
        return False, True
    return True, True


def _vbmf_rank(m) -> int:
    return max(vbmf_estimate(m).rank, 1)


def select_layer_ranks(net: Network, name: str):
    """``(LayerRanks, per-group estimates)`` for one layer.

    VBMF runs on the mode-3 (``S x T D^2``) and mode-4 (``T x D^2 S``)
    unfoldings of each group's kernel; a layer takes the largest estimate
    over its groups so every group shares one shape.
    """
    layer = net.spec.layer(name)
    use_in, use_out = decomposition_modes(layer)
    estimates = []
    for k in kernel_groups(net, name):
        est = {}
        if use_in:
            est["r3"] = _vbmf_rank(unfold(k, 2))
        if use_out:
            est["r4"] = _vbmf_rank(unfold(k, 3))
        estimates.append(est)
    r3 = max(e["r3"] for e in estimates) if use_in else None
    r4 = max(e["r4"] for e in estimates) if use_out else None
    return LayerRanks(r3, r4), estimates


def select_ranks(net: Network, layers: Optional[Iterable[str]] = None) -> RankSelection:
    """VBMF rank selection for ``layers`` (default: every conv/fc layer)."""
    names = _eligible(net, layers)
    with ThreadPoolExecutor(worker_count()) as pool:
        results = list(pool.map(lambda n: select_layer_ranks(net, n), names))
    return RankSelection({n: r for n, (r, _) in zip(names, results)},
                         {n: est for n, (_, est) in zip(names, results)}, "vbmf")


def _eligible(net: Network, layers) -> list:
    linear = [layer.name for layer in net.spec.linear_layers()]
    if layers is None:
        return linear
    layers = list(layers)
    unknown = [n for n in layers if n not in linear]
    if unknown:
        raise KeyError(f"not conv/fc layers of this network: {unknown}")
    return [n for n in linear if n in layers]


def decompose_kernel(k, ranks: LayerRanks, max_sweeps: int = DEFAULT_MAX_SWEEPS, tol: float = DEFAULT_TOL):
    if ranks.r3 is not None and ranks.r4 is not None:
        return tucker2_kernel(k, ranks.r3, ranks.r4, max_sweeps=max_sweeps, tol=tol)
    if ranks.r4 is not None:
        return tucker1_kernel(k, 3, ranks.r4)
    return tucker1_kernel(k, 2, ranks.r3)


def decompose_layer(net: Network, name: str, ranks: LayerRanks,
                    max_sweeps: int = DEFAULT_MAX_SWEEPS, tol: float = DEFAULT_TOL) -> list:
    """Per-group :class:`TuckerFactors` of one layer."""
    layer = net.spec.layer(name)
    ranks.check(layer)
    return [decompose_kernel(k, ranks, max_sweeps, tol) for k in kernel_groups(net, name)]


def compress(net: Network, ranks, layers: Optional[Iterable[str]] = None,
             max_sweeps: int = DEFAULT_MAX_SWEEPS, tol: float = DEFAULT_TOL):
    """Decompose and substitute every ranked layer; returns ``(network, report)``.

    ``ranks`` is a :class:`RankSelection` or ``{layer: LayerRanks}``;
    ``layers`` optionally restricts which of them are applied.
    """
    if isinstance(ranks, RankSelection):
        ranks = ranks.ranks
    chosen = {n: ranks[n] for n in _eligible(net, layers if layers is not None else list(ranks))
              if n in ranks}
    missing = set(layers or ()) - set(chosen)
    if missing:
        raise KeyError(f"no ranks given for {sorted(missing)}")
    for name, r in chosen.items():
        r.check(net.spec.layer(name))
    names = list(chosen)
    with ThreadPoolExecutor(worker_count()) as pool:
        factors = list(pool.map(lambda n: decompose_layer(net, n, chosen[n], max_sweeps, tol), names))
    out = net
    quality = {}
    for name, groups in zip(names, factors):
        out = substitute_layer(out, name, groups)
        quality[name] = {"rel_error": [g.quality.rel_error for g in groups],
                         "iterations": [g.quality.iterations for g in groups]}
    hooi = {"max_sweeps": max_sweeps, "tol": tol, "layers": quality}
    return out, analyze(net.spec, chosen, hooi=hooi)


def full_ranks(net: Network, layers: Optional[Iterable[str]] = None) -> dict:
    """Ranks that keep every decomposed mode at full extent (lossless)."""
    out = {}
    for name in _eligible(net, layers):
        layer = net.spec.layer(name)
        use_in, use_out = decomposition_modes(layer)
        out[name] = LayerRanks(layer.in_channels // layer.groups if use_in else None,
                               layer.out // layer.groups if use_out else None)
    return out
