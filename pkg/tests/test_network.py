import numpy as np
import pytest

from tuckershot import layers as L
from tuckershot.graph import LayerRanks, LayerSpec, NetworkSpec
from tuckershot.network import (Network, backward, compare, conv_forward, decomposed_forward, forward,
                                init_network, network_forward, reconstructed_kernel, relative_difference,
                                stage_weights, substitute_layer)
from tuckershot.pipeline import decompose_layer
from tuckershot.tucker import tucker2_kernel


def conv_by_definition(x, k, stride, pad, groups=1):
    """Direct evaluation of Y[h', w', t] = sum_ijs K[i, j, s, t] X[h'*stride + i - pad, ...]."""
    h, w, c = x.shape
    d, _, sg, t = k.shape
    tg = t // groups
    oh, ow = (h + 2 * pad - d) // stride + 1, (w + 2 * pad - d) // stride + 1
    y = np.zeros((oh, ow, t))
    for a in range(oh):
        for b in range(ow):
            for tt in range(t):
                g = tt // tg
                acc = 0.0
                for i in range(d):
                    for j in range(d):
                        hi, wj = a * stride + i - pad, b * stride + j - pad
                        if 0 <= hi < h and 0 <= wj < w:
                            acc += x[hi, wj, g * sg:(g + 1) * sg] @ k[i, j, :, tt]
                y[a, b, tt] = acc
    return y


def conv_layer(d, t, stride=1, pad=0, groups=1, s=None):
    layer = LayerSpec("c", "conv", out=t, kernel=d, stride=stride, pad=pad, groups=groups)
    return layer if s is None else LayerSpec("c", "conv", out=t, kernel=d, stride=stride, pad=pad,
                                             groups=groups, in_channels=s)


def test_hand_example():
    x = np.arange(1.0, 10.0).reshape(3, 3, 1)
    k = np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(2, 2, 1, 1)
    y = conv_forward(x, conv_layer(2, 1), k)
    np.testing.assert_array_equal(y[..., 0], [[6, 8], [12, 14]])


def test_identity_1x1(rng):
    x = rng.standard_normal((4, 5, 3))
    np.testing.assert_array_equal(conv_forward(x, conv_layer(1, 3), np.eye(3)[None, None]), x)


@pytest.mark.parametrize("d,stride,pad,groups", [(3, 1, 1, 1), (3, 2, 0, 2), (5, 2, 2, 1), (2, 3, 1, 2)])
def test_conv_matches_definition(rng, d, stride, pad, groups):
    x = rng.standard_normal((7, 8, 4))
    k = rng.standard_normal((d, d, 4 // groups, 6))
    y = conv_forward(x, conv_layer(d, 6, stride, pad, groups), k)
    np.testing.assert_allclose(y, conv_by_definition(x, k, stride, pad, groups), atol=1e-12)


def test_conv_shape_mismatch(rng):
    with pytest.raises(ValueError):
        conv_forward(rng.standard_normal((5, 5, 3)), conv_layer(3, 2), rng.standard_normal((3, 3, 4, 2)))


def test_alexnet_conv1_output_side():
    assert L.out_side(227, 11, 4, 0) == 55


def test_decomposed_identity_stages(rng):
    x = rng.standard_normal((6, 6, 4))
    k = rng.standard_normal((3, 3, 4, 5))
    y = decomposed_forward(x, np.eye(4), k, np.eye(5), stride=2, pad=1)
    np.testing.assert_allclose(y, conv_forward(x, conv_layer(3, 5, 2, 1), k), rtol=0, atol=1e-12)


def test_decomposed_matches_reconstructed_kernel(rng):
    k = rng.standard_normal((3, 3, 16, 32))
    f = tucker2_kernel(k, 8, 16)
    x = rng.standard_normal((9, 9, 16))
    b = rng.standard_normal(32)
    direct = conv_forward(x, conv_layer(3, 32, 1, 1), reconstructed_kernel(f), b)
    staged = decomposed_forward(x, f.factors[2], f.core, f.factors[3], b, stride=1, pad=1)
    assert relative_difference(direct, staged) <= 1e-5


def test_decomposed_intermediate_shapes(rng):
    x = rng.standard_normal((10, 10, 6))
    f = tucker2_kernel(rng.standard_normal((3, 3, 6, 8)), 2, 4)
    z = L.conv2d(x[None], f.factors[2][None, None])
    assert z.shape[1:] == (10, 10, 2)
    z2 = L.conv2d(z, f.core, None, 2, 1)
    assert z2.shape[1:] == (5, 5, 4)
    assert decomposed_forward(x, f.factors[2], f.core, f.factors[3], stride=2, pad=1).shape == (5, 5, 8)


def test_decomposed_chain_mismatch(rng):
    with pytest.raises(ValueError):
        decomposed_forward(rng.standard_normal((4, 4, 3)), np.eye(4), rng.standard_normal((1, 1, 4, 2)), None)


def small_net(seed=0, with_pool=True):
    layers = [LayerSpec("c1", "conv", out=6, kernel=3, pad=1), LayerSpec("r1", "relu")]
    if with_pool:
        layers.append(LayerSpec("p1", "maxpool", window=2, stride=2))
    layers += [LayerSpec("c2", "conv", out=8, kernel=3, stride=2, pad=1, groups=2), LayerSpec("r2", "relu"),
               LayerSpec("f", "fc", out=3)]
    net = init_network(NetworkSpec("small", (8, 8, 4), layers), seed=seed)
    rng = np.random.default_rng(seed + 1)
    return Network(net.spec, {k: {"weight": v["weight"], "bias": rng.standard_normal(v["bias"].shape)}
                              for k, v in net.params.items()})


def test_substitution_full_rank_preserves_output(rng):
    net = small_net()
    x = rng.standard_normal((2, 8, 8, 4))
    out = net
    for name, r in (("c1", LayerRanks(4, 6)), ("c2", LayerRanks(3, 4)), ("f", LayerRanks(8, 3))):
        out = substitute_layer(out, name, decompose_layer(out, name, r))
    assert relative_difference(network_forward(net, x), network_forward(out, x)) <= 1e-10
    assert "c2.core" in [layer.name for layer in out.spec.layers]


def test_substitution_equals_reconstructed_network(rng):
    net = small_net()
    factors = decompose_layer(net, "c2", LayerRanks(2, 3))
    sub = substitute_layer(net, "c2", factors)
    ref = net.with_params("c2", weight=reconstructed_kernel(factors))
    x = rng.standard_normal((3, 8, 8, 4))
    assert relative_difference(network_forward(sub, x), network_forward(ref, x)) <= 1e-10


def test_substitution_only_touches_named_layer():
    net = small_net()
    sub = substitute_layer(net, "c2", decompose_layer(net, "c2", LayerRanks(2, 3)))
    assert np.array_equal(sub.weight("c1"), net.weight("c1"))
    assert "c1" in sub.params and "c2" not in sub.params


def test_substitution_errors(rng):
    net = small_net()
    with pytest.raises(KeyError):
        substitute_layer(net, "nope", [])
    with pytest.raises(ValueError):
        substitute_layer(net, "r1", [])
    f = tucker2_kernel(rng.standard_normal((3, 3, 5, 4)), 2, 2)
    with pytest.raises(ValueError):
        substitute_layer(net, "c2", [f, f])


def test_stage_weights_layout(rng):
    f = [tucker2_kernel(rng.standard_normal((3, 3, 4, 5)), 2, 3) for _ in range(2)]
    w = stage_weights(f)
    assert w["in"].shape == (1, 1, 4, 4)
    assert w["core"].shape == (3, 3, 2, 6)
    assert w["out"].shape == (1, 1, 3, 10)


def test_zero_weights_give_bias_output():
    net = small_net(with_pool=False)
    zero = Network(net.spec, {k: {"weight": np.zeros_like(v["weight"]), "bias": v["bias"]}
                              for k, v in net.params.items()})
    y = network_forward(zero, np.ones((8, 8, 4)))
    np.testing.assert_array_equal(y.ravel(), net.bias("f"))


def test_toy_net_by_hand():
    spec = NetworkSpec("hand", (4, 4, 1), (
        LayerSpec("c", "conv", out=1, kernel=2, stride=2), LayerSpec("r", "relu"),
        LayerSpec("f", "fc", out=1)))
    net = Network(spec, {"c": {"weight": np.array([1.0, -1.0, 0.0, 2.0]).reshape(2, 2, 1, 1),
                               "bias": np.array([-1.0])},
                         "f": {"weight": np.array([1.0, 2.0, 3.0, 4.0]).reshape(2, 2, 1, 1),
                               "bias": np.array([0.5])}})
    x = np.arange(16.0).reshape(4, 4, 1)
    # blocks: [[0,1],[4,5]] -> 0-1+10-1 = 8; [[2,3],[6,7]] -> 2-3+14-1 = 12
    #         [[8,9],[12,13]] -> 8-9+26-1 = 24; [[10,11],[14,15]] -> 10-11+30-1 = 28
    assert network_forward(net, x).ravel()[0] == 1 * 8 + 2 * 12 + 3 * 24 + 4 * 28 + 0.5


def test_relu():
    spec = NetworkSpec("r", (2, 2, 1), (LayerSpec("r", "relu"),))
    x = np.array([[-1.0, 2.0], [0.0, -3.5]]).reshape(2, 2, 1)
    np.testing.assert_array_equal(network_forward(Network(spec, {}), x), np.maximum(x, 0))


def test_linear_network_superposition(rng):
    spec = NetworkSpec("lin", (6, 6, 3), (LayerSpec("a", "conv", out=4, kernel=3, pad=1, bias=False),
                                          LayerSpec("b", "conv", out=2, kernel=3, stride=2, bias=False),
                                          LayerSpec("f", "fc", out=3, bias=False)))
    net = init_network(spec, seed=3)
    x1, x2 = rng.standard_normal((6, 6, 3)), rng.standard_normal((6, 6, 3))
    lhs = network_forward(net, 2.0 * x1 - 3.0 * x2)
    rhs = 2.0 * network_forward(net, x1) - 3.0 * network_forward(net, x2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * np.abs(lhs).max())


def test_forward_deterministic(rng):
    net = small_net()
    x = rng.standard_normal((8, 8, 4))
    assert np.array_equal(network_forward(net, x), network_forward(net, x.copy()))


def test_input_shape_checked(rng):
    with pytest.raises(ValueError):
        network_forward(small_net(), rng.standard_normal((7, 8, 4)))


def test_weight_shapes_validated(rng):
    net = small_net()
    with pytest.raises(ValueError):
        net.with_params("c1", weight=np.zeros((3, 3, 4, 5)))
    with pytest.raises(ValueError):
        Network(net.spec, {})


def test_compare_reports_difference(rng):
    a = small_net(0)
    b = small_net(5)
    max_abs, rel = compare(a, b, rng.standard_normal((8, 8, 4)))
    assert max_abs > 0 and 0 < rel <= 2


def test_avgpool_and_concat_forward(rng):
    spec = NetworkSpec("inc", (5, 5, 2), (
        LayerSpec("a", "conv", out=3, kernel=1),
        LayerSpec("b", "conv", out=2, kernel=3, pad=1, inputs=("data",)),
        LayerSpec("cat", "concat", inputs=("a", "b")),
        LayerSpec("p", "avgpool", window=3, stride=2, ceil_mode=True)))
    net = init_network(spec, seed=0)
    x = rng.standard_normal((5, 5, 2))
    y = network_forward(net, x)
    ya = conv_forward(x, spec.layer("a"), net.weight("a"), net.bias("a"))
    yb = conv_forward(x, spec.layer("b"), net.weight("b"), net.bias("b"))
    cat = np.concatenate([ya, yb], axis=-1)
    assert y.shape == (2, 2, 5)
    np.testing.assert_allclose(y[0, 0], cat[:3, :3].mean(axis=(0, 1)), atol=1e-12)


# -- gradients -------------------------------------------------------------------

def numeric_grad(f, a, eps=1e-6):
    g = np.zeros_like(a)
    it = np.nditer(a, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = a[i]
        a[i] = old + eps
        fp = f()
        a[i] = old - eps
        fm = f()
        a[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def loss_of(net, x, y):
    out = forward(net, x)
    return L.softmax_cross_entropy(out.reshape(len(x), -1), y)[0]


def check_gradients(net, x, y):
    out, caches = forward(net, x, keep=True)
    _, d = L.softmax_cross_entropy(out.reshape(len(x), -1), y)
    grads, dx = backward(net, caches, d.reshape(out.shape), need_input_grad=True)
    for name, p in net.params.items():
        for kind, arr in p.items():
            if arr is None:
                continue
            num = numeric_grad(lambda: loss_of(net, x, y), arr)
            ana = grads[name][kind]
            assert np.linalg.norm(ana - num) <= 1e-4 * max(np.linalg.norm(num), 1e-8), (name, kind)
    num_x = numeric_grad(lambda: loss_of(net, x, y), x)
    assert np.linalg.norm(dx - num_x) <= 1e-4 * np.linalg.norm(num_x)


def test_gradients_two_layer_net(rng):
    spec = NetworkSpec("two", (5, 5, 2), (LayerSpec("c", "conv", out=3, kernel=3, stride=2, pad=1),
                                          LayerSpec("r", "relu"), LayerSpec("f", "fc", out=4)))
    net = init_network(spec, seed=2)
    check_gradients(net, rng.standard_normal((3, 5, 5, 2)), np.array([0, 3, 1]))


def test_gradients_with_pooling_groups_and_stages(rng):
    net = small_net()
    net = substitute_layer(net, "c2", decompose_layer(net, "c2", LayerRanks(2, 3)))
    check_gradients(net, rng.standard_normal((2, 8, 8, 4)), np.array([2, 0]))


def test_gradients_through_concat_and_avgpool(rng):
    spec = NetworkSpec("inc", (4, 4, 2), (
        LayerSpec("a", "conv", out=2, kernel=1),
        LayerSpec("b", "conv", out=2, kernel=3, pad=1, inputs=("data",)),
        LayerSpec("cat", "concat", inputs=("a", "b")),
        LayerSpec("p", "avgpool", window=3, stride=2, ceil_mode=True),
        LayerSpec("f", "fc", out=3)))
    check_gradients(init_network(spec, seed=1), rng.standard_normal((2, 4, 4, 2)), np.array([1, 2]))


def test_staged_backprop_matches_reconstructed_conv(rng):
    k = rng.standard_normal((3, 3, 4, 5))
    spec = NetworkSpec("one", (6, 6, 4), (LayerSpec("c", "conv", out=5, kernel=3, stride=2, pad=1),))
    net = Network(spec, {"c": {"weight": k, "bias": rng.standard_normal(5)}})
    sub = substitute_layer(net, "c", [tucker2_kernel(k, 4, 5)])
    x = rng.standard_normal((2, 6, 6, 4))
    dout = rng.standard_normal((2, 3, 3, 5))
    grads = []
    for n in (net, sub):
        _, caches = forward(n, x, keep=True)
        grads.append(backward(n, caches, dout, need_input_grad=True)[1])
    np.testing.assert_allclose(grads[0], grads[1], atol=1e-6)
