"""Shape-level description of a CNN: layer specs, shape inference, substitution.

Activations are laid out ``H x W x C``.  A fully-connected layer is a
convolution whose kernel covers the whole incoming spatial extent, so its
weight is a ``D x D x S x T`` kernel with ``D`` equal to the input side and
its output is ``1 x 1 x T``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

LINEAR_KINDS = ("conv", "fc")
POOL_KINDS = ("maxpool", "avgpool")
PASS_KINDS = ("relu", "lrn", "softmax")
KINDS = LINEAR_KINDS + POOL_KINDS + PASS_KINDS + ("concat",)

INPUT = "data"


class SpecError(ValueError):
    """Inconsistent network description."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    inputs: tuple = ()
    out: int = 0            # T, output channels (conv / fc)
    kernel: int = 0         # D; inferred for fc
    in_channels: int = 0    # S; inferred from the incoming shape
    stride: int = 1
    pad: int = 0
    groups: int = 1
    bias: bool = True
    window: int = 0         # pooling window
    ceil_mode: bool = False
    block: Optional[str] = None   # e.g. inception module this layer belongs to
    origin: Optional[str] = None  # original layer of a substituted stage
    stage: Optional[str] = None   # "in" / "core" / "out"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SpecError(f"{self.name}: unknown layer kind {self.kind!r}")
        object.__setattr__(self, "inputs", tuple(self.inputs))
        if self.kind in LINEAR_KINDS:
            if self.out < 1:
                raise SpecError(f"{self.name}: output channels must be >= 1")
            if self.stride < 1 or self.pad < 0 or self.groups < 1:
                raise SpecError(f"{self.name}: need stride >= 1, pad >= 0, groups >= 1")
            if self.out % self.groups:
                raise SpecError(f"{self.name}: {self.out} outputs not divisible by {self.groups} groups")
            if self.kind == "fc" and (self.groups != 1 or self.stride != 1 or self.pad != 0):
                raise SpecError(f"{self.name}: fc layers take no groups/stride/pad")
        if self.kind in POOL_KINDS and (self.window < 1 or self.stride < 1):
            raise SpecError(f"{self.name}: pooling needs window >= 1 and stride >= 1")

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    def weight_shape(self) -> tuple:
        return (self.kernel, self.kernel, self.in_channels // self.groups, self.out)

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        defaults = {f.name: f.default for f in fields(self)}
        for key, value in asdict(self).items():
            if key in d or value == defaults[key]:
                continue
            d[key] = list(value) if isinstance(value, tuple) else value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise SpecError(f"layer {d.get('name')!r}: unknown keys {sorted(extra)}")
        return cls(**d)


def _out_side(h: int, k: int, stride: int, pad: int, ceil_mode: bool) -> int:
    span = h + 2 * pad - k
    if span < 0:
        return 0
    if not ceil_mode:
        return span // stride + 1
    out = math.ceil(span / stride) + 1
    # the last window must start inside the (left-padded) input
    if (out - 1) * stride >= h + pad:
        out -= 1
    return out


@dataclass(frozen=True)
class NetworkSpec:
    """Layers in evaluation order; ``inputs`` defaults to the previous layer."""

    name: str
    input_shape: tuple
    layers: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(n) for n in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"input shape must be H x W x C, got {self.input_shape}")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names) or INPUT in names:
            raise SpecError("layer names must be unique and not 'data'")
        resolved, shapes = _resolve(self)
        object.__setattr__(self, "layers", resolved)
        object.__setattr__(self, "_shapes", shapes)

    def sources(self, layer: LayerSpec) -> tuple:
        if layer.inputs:
            return layer.inputs
        idx = self.index(layer.name)
        return (self.layers[idx - 1].name if idx else INPUT,)

    def index(self, name: str) -> int:
        for i, layer in enumerate(self.layers):
            if layer.name == name:
                return i
        raise KeyError(f"no layer named {name!r}")

    def layer(self, name: str) -> LayerSpec:
        return self.layers[self.index(name)]

    def shape(self, name: str) -> tuple:
        """Output shape ``(H, W, C)`` of a layer (or of ``'data'``)."""
        return self._shapes[name]

    def in_shape(self, name: str) -> tuple:
        srcs = self.sources(self.layer(name))
        return self._shapes[srcs[0]]

    @property
    def output(self) -> str:
        return self.layers[-1].name if self.layers else INPUT

    @property
    def output_shape(self) -> tuple:
        return self._shapes[self.output]

    def linear_layers(self) -> list:
        return [layer for layer in self.layers if layer.is_linear]

    def to_dict(self) -> dict:
        return {"name": self.name, "input": list(self.input_shape),
                "layers": [layer.to_dict() for layer in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        try:
            layers = [LayerSpec.from_dict(x) for x in d["layers"]]
            return cls(d.get("name", "net"), tuple(d["input"]), tuple(layers))
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed network description: {exc}") from exc

    @classmethod
    def load(cls, path) -> "NetworkSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _resolve(spec: NetworkSpec):
    shapes = {INPUT: spec.input_shape}
    resolved = []
    for i, layer in enumerate(spec.layers):
        srcs = layer.inputs or ((resolved[i - 1].name if i else INPUT),)
        for s in srcs:
            if s not in shapes:
                raise SpecError(f"{layer.name}: input {s!r} is not defined before it")
        h, w, c = shapes[srcs[0]]
        if layer.kind != "concat" and len(srcs) != 1:
            raise SpecError(f"{layer.name}: only concat takes several inputs")

        if layer.kind in LINEAR_KINDS:
            if layer.in_channels and layer.in_channels != c:
                raise SpecError(f"{layer.name}: declared {layer.in_channels} input channels, got {c}")
            if c % layer.groups:
                raise SpecError(f"{layer.name}: {c} input channels not divisible by {layer.groups} groups")
            if layer.kind == "fc":
                if h != w:
                    raise SpecError(f"{layer.name}: fc input must be square, got {h}x{w}")
                if layer.kernel and layer.kernel != h:
                    raise SpecError(f"{layer.name}: fc kernel {layer.kernel} != input side {h}")
                layer = replace(layer, kernel=h, in_channels=c)
                out = (1, 1, layer.out)
            else:
                if layer.kernel < 1:
                    raise SpecError(f"{layer.name}: conv kernel must be >= 1")
                layer = replace(layer, in_channels=c)
                oh = _out_side(h, layer.kernel, layer.stride, layer.pad, False)
                ow = _out_side(w, layer.kernel, layer.stride, layer.pad, False)
                out = (oh, ow, layer.out)
        elif layer.kind in POOL_KINDS:
            oh = _out_side(h, layer.window, layer.stride, layer.pad, layer.ceil_mode)
            ow = _out_side(w, layer.window, layer.stride, layer.pad, layer.ceil_mode)
            out = (oh, ow, c)
        elif layer.kind == "concat":
            parts = [shapes[s] for s in srcs]
            if any(p[:2] != (h, w) for p in parts):
                raise SpecError(f"{layer.name}: concat inputs differ spatially: {parts}")
            out = (h, w, sum(p[2] for p in parts))
        else:
            out = (h, w, c)
        if min(out) < 1:
            raise SpecError(f"{layer.name}: empty output {out} from input {(h, w, c)}")
        shapes[layer.name] = out
        resolved.append(layer)
    return tuple(resolved), shapes


@dataclass(frozen=True)
class LayerRanks:
    """Target ranks of one layer.

    ``(r3, r4)`` both set is Tucker-2; only ``r4`` set is Tucker-1 on the
    output-channel mode; only ``r3`` set is Tucker-1 on the input-channel
    mode.  Ranks are per group.
    """

    r3: Optional[int] = None
    r4: Optional[int] = None

    def __post_init__(self):
        if self.r3 is None and self.r4 is None:
            raise ValueError("at least one of r3/r4 is required")
        for r in (self.r3, self.r4):
            if r is not None and (int(r) != r or r < 1):
                raise ValueError(f"ranks must be integers >= 1, got {r}")

    @property
    def kind(self) -> str:
        return "tucker2" if self.r3 is not None and self.r4 is not None else "tucker1"

    def check(self, layer: LayerSpec) -> None:
        s, t = layer.in_channels // layer.groups, layer.out // layer.groups
        if self.r3 is not None and not 1 <= self.r3 <= s:
            raise ValueError(f"{layer.name}: r3={self.r3} out of range 1..{s}")
        if self.r4 is not None and not 1 <= self.r4 <= t:
            raise ValueError(f"{layer.name}: r4={self.r4} out of range 1..{t}")


def stage_specs(layer: LayerSpec, ranks: LayerRanks) -> list:
    """Replacement stages for one conv/fc layer.

    Stride and padding sit on the ``D x D`` core stage; the 1x1 stages run
    at stride 1.  Only the last stage carries the bias, and no
    nonlinearity is inserted between stages.
    """
    if not layer.is_linear:
        raise SpecError(f"{layer.name}: only conv/fc layers can be decomposed")
    ranks.check(layer)
    g = layer.groups
    common = dict(origin=layer.name, block=layer.block, groups=g)
    stages = []
    if ranks.r3 is not None:
        stages.append(LayerSpec(f"{layer.name}.in", "conv", out=ranks.r3 * g, kernel=1,
                                bias=False, stage="in", **common))
    core_out = layer.out if ranks.r4 is None else ranks.r4 * g
    core_bias = layer.bias if ranks.r4 is None else False
    if layer.kind == "fc":
        stages.append(LayerSpec(f"{layer.name}.core", "fc", out=core_out, bias=core_bias,
                                stage="core", origin=layer.name, block=layer.block))
    else:
        stages.append(LayerSpec(f"{layer.name}.core", "conv", out=core_out, kernel=layer.kernel,
                                stride=layer.stride, pad=layer.pad, bias=core_bias,
                                stage="core", **common))
    if ranks.r4 is not None:
        stages.append(LayerSpec(f"{layer.name}.out", "conv", out=layer.out, kernel=1,
                                bias=layer.bias, stage="out", **common))
    stages[0] = replace(stages[0], inputs=layer.inputs)
    return stages


def substitute_spec(spec: NetworkSpec, ranks: dict) -> NetworkSpec:
    """Replace every layer named in ``ranks`` by its decomposed stages."""
    unknown = set(ranks) - {layer.name for layer in spec.layers}
    if unknown:
        raise KeyError(f"unknown layers: {sorted(unknown)}")
    layers = []
    renamed = {}
    for layer in spec.layers:
        if layer.inputs:
            layer = replace(layer, inputs=tuple(renamed.get(s, s) for s in layer.inputs))
        if layer.name in ranks:
            stages = stage_specs(layer, ranks[layer.name])
            renamed[layer.name] = stages[-1].name
            layers.extend(stages)
        else:
            layers.append(layer)
    return NetworkSpec(spec.name, spec.input_shape, tuple(layers))
