"""Layerwise and whole-network compression reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

from .cost import FLOP_CONVENTION, compressed_cost, conv_cost, ratio_bound
from .graph import LayerRanks, NetworkSpec


@dataclass(frozen=True)
class LayerReport:
    name: str
    kind: str
    kernel: int
    in_channels: int
    out_channels: int
    groups: int
    in_spatial: tuple
    out_spatial: tuple
    weights: int
    flops: int
    bias: int
    block: Optional[str] = None
    block_share: Optional[float] = None
    r3: Optional[int] = None
    r4: Optional[int] = None
    compressed_weights: Optional[int] = None
    compressed_flops: Optional[int] = None
    stages: tuple = ()
    stage_weights: tuple = ()
    stage_flops: tuple = ()
    weight_ratio: Optional[float] = None   # M
    flop_ratio: Optional[float] = None     # E
    ratio_bound: Optional[float] = None

    @property
    def compressed(self) -> bool:
        return self.compressed_weights is not None

    @property
    def final_weights(self) -> int:
        return self.compressed_weights if self.compressed else self.weights

    @property
    def final_flops(self) -> int:
        return self.compressed_flops if self.compressed else self.flops


@dataclass(frozen=True)
class CompressionReport:
    network: str
    layers: tuple = ()
    hooi: Optional[dict] = None
    flop_convention: str = FLOP_CONVENTION

    def layer(self, name: str) -> LayerReport:
        for row in self.layers:
            if row.name == name:
                return row
        raise KeyError(name)

    @property
    def weights(self) -> int:
        return sum(r.weights for r in self.layers)

    @property
    def flops(self) -> int:
        return sum(r.flops for r in self.layers)

    @property
    def bias(self) -> int:
        return sum(r.bias for r in self.layers)

    @property
    def compressed_weights(self) -> int:
        return sum(r.final_weights for r in self.layers)

    @property
    def compressed_flops(self) -> int:
        return sum(r.final_flops for r in self.layers)

    @property
    def weight_ratio(self) -> float:
        return _ratio(self.weights, self.compressed_weights)

    @property
    def flop_ratio(self) -> float:
        return _ratio(self.flops, self.compressed_flops)

    def totals(self) -> dict:
        return {
            "weights": self.weights,
            "flops": self.flops,
            "bias": self.bias,
            "compressed_weights": self.compressed_weights,
            "compressed_flops": self.compressed_flops,
            "weight_ratio": self.weight_ratio,
            "flop_ratio": self.flop_ratio,
            "weight_ratio_with_bias": _ratio(self.weights + self.bias,
                                             self.compressed_weights + self.bias),
        }

    def to_dict(self) -> dict:
        d = {"network": self.network, "flop_convention": self.flop_convention,
             "layers": [_row_dict(r) for r in self.layers], "totals": self.totals()}
        if self.hooi is not None:
            d["hooi"] = self.hooi
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompressionReport":
        names = {f.name for f in fields(LayerReport)}
        rows = []
        for r in d["layers"]:
            r = {k: v for k, v in r.items() if k in names}
            for key in ("in_spatial", "out_spatial", "stages", "stage_weights", "stage_flops"):
                if key in r:
                    r[key] = tuple(r[key])
            rows.append(LayerReport(**r))
        return cls(d["network"], tuple(rows), d.get("hooi"),
                   d.get("flop_convention", FLOP_CONVENTION))


def _ratio(a: int, b: int) -> float:
    return float(a) / b if b else 0.0


def _row_dict(r: LayerReport) -> dict:
    d = asdict(r)
    for key, value in d.items():
        if isinstance(value, tuple):
            d[key] = list(value)
    return d


def analyze(spec: NetworkSpec, ranks: Optional[dict] = None, hooi: Optional[dict] = None) -> CompressionReport:
    """Weights/FLOPs of every conv/fc layer, and of its replacement if ranked."""
    ranks = ranks or {}
    unknown = set(ranks) - {layer.name for layer in spec.linear_layers()}
    if unknown:
        raise KeyError(f"ranks given for unknown or non-conv/fc layers: {sorted(unknown)}")
    rows = []
    for layer in spec.linear_layers():
        in_sp = spec.in_shape(layer.name)[:2]
        out_sp = spec.shape(layer.name)[:2]
        w, f = conv_cost(layer, out_sp)
        row = dict(name=layer.name, kind=layer.kind, kernel=layer.kernel,
                   in_channels=layer.in_channels, out_channels=layer.out, groups=layer.groups,
                   in_spatial=tuple(in_sp), out_spatial=tuple(out_sp), weights=w, flops=f,
                   bias=layer.out if layer.bias else 0, block=layer.block)
        rk: Optional[LayerRanks] = ranks.get(layer.name)
        if rk is not None:
            c = compressed_cost(layer, rk, in_sp, out_sp)
            row.update(r3=rk.r3, r4=rk.r4, compressed_weights=c.weights, compressed_flops=c.flops,
                       stages=c.stages, stage_weights=c.stage_weights, stage_flops=c.stage_flops,
                       weight_ratio=_ratio(w, c.weights), flop_ratio=_ratio(f, c.flops),
                       ratio_bound=ratio_bound(layer, rk))
        rows.append(row)
    block_flops = {}
    for row in rows:
        if row["block"]:
            block_flops[row["block"]] = block_flops.get(row["block"], 0) + row["flops"]
    for row in rows:
        if row["block"]:
            row["block_share"] = row["flops"] / block_flops[row["block"]]
    return CompressionReport(spec.name, tuple(LayerReport(**row) for row in rows), hooi)


# -- rendering -------------------------------------------------------------

def human(n: float) -> str:
    """Compact count: 885K, 37.7M, 1.85G."""
    for unit, scale in (("G", 1e9), ("M", 1e6), ("K", 1e3)):
        if abs(n) >= scale:
            v = n / scale
            return f"{v:.3g}{unit}" if v < 100 else f"{v:.0f}{unit}"
    return f"{n:.0f}"


def _parts(values) -> str:
    return "(=" + "+".join(human(v) for v in values) + ")"


def _ch(n: int, g: int) -> str:
    return f"{n // g}x{g}" if g > 1 else str(n)


def render_table(report: CompressionReport) -> str:
    head = ["layer", "S/R3", "T/R4", "weights", "FLOPs", "M", "E"]
    rows = []
    for r in report.layers:
        label = r.name + (f" [{r.block} {r.block_share:.0%}]" if r.block else "")
        rows.append([label, _ch(r.in_channels, r.groups), _ch(r.out_channels, r.groups),
                     human(r.weights), human(r.flops), "", ""])
        if r.compressed:
            rows.append([r.name + "*",
                         "" if r.r3 is None else _ch(r.r3 * r.groups, r.groups),
                         "" if r.r4 is None else _ch(r.r4 * r.groups, r.groups),
                         human(r.compressed_weights) + _parts(r.stage_weights),
                         human(r.compressed_flops) + _parts(r.stage_flops),
                         f"(x{r.weight_ratio:.2f})", f"(x{r.flop_ratio:.2f})"])
    t = report.totals()
    rows.append(["total", "", "", human(t["weights"]), human(t["flops"]), "", ""])
    if any(r.compressed for r in report.layers):
        rows.append(["total*", "", "", human(t["compressed_weights"]), human(t["compressed_flops"]),
                     f"(x{t['weight_ratio']:.2f})", f"(x{t['flop_ratio']:.2f})"])
    widths = [max(len(str(x[i])) for x in rows + [head]) for i in range(len(head))]
    fmt = lambda cells: "  ".join(str(c).ljust(w) for c, w in zip(cells, widths)).rstrip()  # noqa: E731
    lines = [f"# {report.network}: {report.flop_convention}", fmt(head),
             fmt(["-" * w for w in widths])]
    lines += [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def render_report(report: CompressionReport, format: str = "table") -> str:
    if format == "json":
        return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if format == "table":
        return render_table(report)
    raise ValueError(f"unknown report format {format!r}")


def parse_report(text: str) -> CompressionReport:
    return CompressionReport.from_dict(json.loads(text))
