"""Networks with weights: forward/backward passes and layer substitution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers as L
from .graph import INPUT, LayerRanks, LayerSpec, NetworkSpec, substitute_spec
from .tucker import TuckerFactors, reconstruct


@dataclass(frozen=True)
class Network:
    """A :class:`NetworkSpec` plus ``{layer: {"weight": ..., "bias": ...}}``.

    Conv and fc weights are ``D x D x S/g x T`` kernels; a substituted layer
    is represented by its stages, each an ordinary conv/fc layer.
    """

    spec: NetworkSpec
    params: dict

    def __post_init__(self):
        for layer in self.spec.linear_layers():
            p = self.params.get(layer.name)
            if p is None:
                raise ValueError(f"{layer.name}: missing weights")
            if tuple(p["weight"].shape) != layer.weight_shape():
                raise ValueError(f"{layer.name}: weight {p['weight'].shape} != {layer.weight_shape()}")
            has_bias = p.get("bias") is not None
            if has_bias != layer.bias:
                raise ValueError(f"{layer.name}: bias presence does not match the architecture")
            if has_bias and p["bias"].shape != (layer.out,):
                raise ValueError(f"{layer.name}: bias shape {p['bias'].shape} != ({layer.out},)")
        extra = set(self.params) - {layer.name for layer in self.spec.linear_layers()}
        if extra:
            raise ValueError(f"weights for unknown layers: {sorted(extra)}")

    def weight(self, name: str) -> np.ndarray:
        return self.params[name]["weight"]

    def bias(self, name: str):
        return self.params[name].get("bias")

    def n_params(self) -> int:
        return int(sum(a.size for p in self.params.values() for a in p.values() if a is not None))

    def with_params(self, name: str, **arrays) -> "Network":
        params = {k: dict(v) for k, v in self.params.items()}
        params[name].update(arrays)
        return Network(self.spec, params)

    def copy(self) -> "Network":
        return Network(self.spec, {k: {n: (None if a is None else a.copy()) for n, a in v.items()}
                                   for k, v in self.params.items()})


def init_network(spec: NetworkSpec, seed: int = 0, zero: bool = False) -> Network:
    """He-normal weights and zero biases (or all zeros)."""
    rng = np.random.default_rng(seed)
    params = {}
    for layer in spec.linear_layers():
        shape = layer.weight_shape()
        fan_in = shape[0] * shape[1] * shape[2]
        w = np.zeros(shape) if zero else rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[layer.name] = {"weight": w, "bias": np.zeros(layer.out) if layer.bias else None}
    return Network(spec, params)


# -- forward / backward ------------------------------------------------------

def _linear_args(layer: LayerSpec):
    if layer.kind == "fc":
        return 1, 0, 1
    return layer.stride, layer.pad, layer.groups


def forward(net: Network, x: np.ndarray, keep: bool = False):
    """Batched forward pass; returns the output (and per-layer caches if ``keep``)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != net.spec.input_shape:
        raise ValueError(f"input {x.shape[1:]} does not match network input {net.spec.input_shape}")
    acts = {INPUT: x}
    caches = {}
    for layer in net.spec.layers:
        srcs = net.spec.sources(layer)
        xin = acts[srcs[0]]
        if layer.is_linear:
            stride, pad, groups = _linear_args(layer)
            p = net.params[layer.name]
            y, cache = L.conv2d_fwd(xin, p["weight"], p.get("bias"), stride, pad, groups)
        elif layer.kind == "relu":
            y, cache = np.maximum(xin, 0.0), xin > 0
        elif layer.kind == "maxpool":
            y, cache = L.maxpool_fwd(xin, layer.window, layer.stride, layer.pad, layer.ceil_mode)
        elif layer.kind == "avgpool":
            y, cache = L.avgpool_fwd(xin, layer.window, layer.stride, layer.pad, layer.ceil_mode)
        elif layer.kind == "concat":
            y, cache = np.concatenate([acts[s] for s in srcs], axis=-1), None
        else:
            raise NotImplementedError(f"{layer.name}: no numeric forward for {layer.kind!r} layers")
        acts[layer.name] = y
        if keep:
            caches[layer.name] = cache
    out = acts[net.spec.output]
    return (out, caches) if keep else out


def backward(net: Network, caches: dict, dout: np.ndarray, need_input_grad: bool = False):
    """Parameter gradients for a :func:`forward` run with ``keep=True``."""
    spec = net.spec
    grads = {}
    pending = {spec.output: dout}
    for layer in reversed(spec.layers):
        g = pending.pop(layer.name, None)
        if g is None:
            continue
        srcs = spec.sources(layer)
        cache = caches[layer.name]
        if layer.is_linear:
            stride, pad, groups = _linear_args(layer)
            w = net.params[layer.name]["weight"]
            need_dx = need_input_grad or srcs[0] != INPUT
            dx, dw, db = L.conv2d_bwd(g, cache, w, stride, pad, groups, need_dx=need_dx)
            grads[layer.name] = {"weight": dw, "bias": db if layer.bias else None}
            parts = [dx]
        elif layer.kind == "relu":
            parts = [g * cache]
        elif layer.kind == "maxpool":
            parts = [L.maxpool_bwd(g, cache, layer.window, layer.stride, layer.pad)]
        elif layer.kind == "avgpool":
            parts = [L.avgpool_bwd(g, cache, layer.window, layer.stride, layer.pad)]
        else:  # concat
            sizes = [spec.shape(s)[2] for s in srcs]
            parts = np.split(g, np.cumsum(sizes)[:-1], axis=-1)
        for s, part in zip(srcs, parts):
            if part is None:
                continue
            pending[s] = part if s not in pending else pending[s] + part
    return (grads, pending.get(INPUT)) if need_input_grad else grads


def network_forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Forward pass for one ``H x W x C`` input or a batch of them."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return forward(net, x[None])[0]
    return forward(net, x)


def conv_forward(x: np.ndarray, layer: LayerSpec, weight: np.ndarray, bias=None) -> np.ndarray:
    """Single-image convolution ``H x W x S -> H' x W' x T``."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != weight.shape[2] * layer.groups:
        raise ValueError(f"input {x.shape} does not match kernel {weight.shape}")
    stride, pad, groups = _linear_args(layer)
    return L.conv2d(x[None], weight, bias, stride, pad, groups)[0]


# -- decomposition plumbing -----------------------------------------------------

def kernel_groups(net: Network, name: str) -> list:
    """Per-group ``D x D x S/g x T/g`` kernels of a conv/fc layer."""
    layer = net.spec.layer(name)
    if not layer.is_linear:
        raise ValueError(f"{name} is not a conv/fc layer")
    w = net.weight(name)
    tg = layer.out // layer.groups
    return [w[..., g * tg:(g + 1) * tg] for g in range(layer.groups)]


def _as_group_list(factors) -> list:
    return [factors] if isinstance(factors, TuckerFactors) else list(factors)


def ranks_of(factors) -> LayerRanks:
    groups = _as_group_list(factors)
    first = groups[0]
    r3 = first.core.shape[2] if first.factors[2] is not None else None
    r4 = first.core.shape[3] if first.factors[3] is not None else None
    for f in groups[1:]:
        if (f.factors[2] is None) != (r3 is None) or (f.factors[3] is None) != (r4 is None) \
                or (r3 is not None and f.core.shape[2] != r3) or (r4 is not None and f.core.shape[3] != r4):
            raise ValueError("all groups must share the same decomposition ranks")
    if first.factors[0] is not None or first.factors[1] is not None:
        raise ValueError("spatial modes must not be decomposed")
    return LayerRanks(r3, r4)


def reconstructed_kernel(factors) -> np.ndarray:
    """Full ``D x D x S/g x T`` kernel from per-group factors."""
    return np.concatenate([reconstruct(f) for f in _as_group_list(factors)], axis=3)


def stage_weights(factors) -> dict:
    """Kernels of the ``in`` / ``core`` / ``out`` stages, grouped along the output axis."""
    groups = _as_group_list(factors)
    out = {}
    if groups[0].factors[2] is not None:
        out["in"] = np.concatenate([f.factors[2][None, None] for f in groups], axis=3)
    out["core"] = np.concatenate([f.core for f in groups], axis=3)
    if groups[0].factors[3] is not None:
        out["out"] = np.concatenate([f.factors[3].T[None, None] for f in groups], axis=3)
    return out


def substitute_layer(net: Network, name: str, factors) -> Network:
    """Replace a conv/fc layer by its decomposed stages.

    ``factors`` is one :class:`TuckerFactors` or one per group.  The last
    stage inherits the original bias.
    """
    layer = net.spec.layer(name)
    if not layer.is_linear:
        raise ValueError(f"{name} is not a conv/fc layer")
    groups = _as_group_list(factors)
    if len(groups) != layer.groups:
        raise ValueError(f"{name}: expected {layer.groups} group factorizations, got {len(groups)}")
    expected = layer.weight_shape()[:3] + (layer.out // layer.groups,)
    for f in groups:
        if f.shape != expected:
            raise ValueError(f"{name}: factors describe {f.shape}, layer kernel is {expected}")
    ranks = ranks_of(groups)
    spec = substitute_spec(net.spec, {name: ranks})
    params = {k: v for k, v in net.params.items() if k != name}
    weights = stage_weights(groups)
    for stage_name, w in weights.items():
        full = f"{name}.{stage_name}"
        st = spec.layer(full)
        params[full] = {"weight": w, "bias": net.bias(name) if st.bias else None}
    return Network(spec, params)


def decomposed_forward(x: np.ndarray, u3, core, u4, bias=None, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Three-stage evaluation of a Tucker-2 convolution.

    ``x -> 1x1 (u3) -> DxD core at (stride, pad) -> 1x1 (u4) + bias``;
    ``u3`` or ``u4`` may be ``None`` for a Tucker-1 layer.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    z = x[None] if single else x
    if u3 is not None:
        if u3.shape[0] != z.shape[-1] or u3.shape[1] != core.shape[2]:
            raise ValueError(f"u3 {u3.shape} does not chain {z.shape[-1]} -> {core.shape[2]}")
        z = L.conv2d(z, u3[None, None])
    if z.shape[-1] != core.shape[2]:
        raise ValueError(f"core expects {core.shape[2]} channels, got {z.shape[-1]}")
    z = L.conv2d(z, core, None, stride, pad)
    if u4 is not None:
        if u4.shape[1] != core.shape[3]:
            raise ValueError(f"u4 {u4.shape} does not chain from {core.shape[3]} channels")
        z = L.conv2d(z, u4.T[None, None])
    if bias is not None:
        z = z + bias
    return z[0] if single else z


def relative_difference(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return 0.0 if scale == 0 else float(np.max(np.abs(a - b)) / scale)


def compare(net_a: Network, net_b: Network, x: np.ndarray):
    """``(max_abs, relative)`` output difference on input ``x``."""
    ya, yb = network_forward(net_a, x), network_forward(net_b, x)
    if ya.shape != yb.shape:
        raise ValueError(f"output shapes differ: {ya.shape} vs {yb.shape}")
    return float(np.max(np.abs(ya - yb))), relative_difference(ya, yb)

