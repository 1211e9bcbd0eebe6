import numpy as np
import pytest

from dualsr.autodiff import Tensor, add, backward, mse_half, relu, smul
from dualsr.errors import ConfigurationError
from dualsr.layers import ConvLayer, ParamStore, ResidualBlock
from dualsr.models import ForwardResult, build_model
from dualsr.models.single_state import SingleStateModel


def _input(rng, n=1, size=8):
    return Tensor(rng.uniform(-1, 1, size=(n, 1, size, size)))


def _copy_conv(dst: ConvLayer, src: ConvLayer) -> None:
    dst.kernel.data[...] = src.kernel.data
    dst.bias.data[...] = src.bias.data


def _copy_block(dst: ResidualBlock, src: ResidualBlock) -> None:
    _copy_conv(dst.conv1, src.conv1)
    _copy_conv(dst.conv2, src.conv2)


def _grads_close(a: np.ndarray, b: np.ndarray, rel=1e-10):
    assert np.all(np.abs(a - b) <= rel * np.maximum(1.0, np.abs(b)))


# -- unfolding equivalence: the loop equals an explicit T-block graph ------


def test_resnet_loop_matches_explicit_graph(rng):
    T = 5
    m = build_model("resnet", 2, T, 6, rng=np.random.default_rng(21))
    x = _input(rng)
    target = Tensor(rng.uniform(-0.2, 0.2, size=x.shape))

    store = ParamStore()
    init_rng = np.random.default_rng(0)
    embed = ConvLayer(store, "e", 1, 6, init_rng)
    blocks = [ResidualBlock(store, f"b{t}", 6, init_rng) for t in range(T)]
    out = ConvLayer(store, "o", 6, 1, init_rng)
    _copy_conv(embed, m.embed)
    _copy_conv(out, m.out_conv)
    for b in blocks:
        _copy_block(b, m.recurrent)

    res = m.forward(x)
    s = embed(Tensor(x.data.copy()))
    for b in blocks:
        s = b(s)
    explicit = out(s)
    assert np.array_equal(res.residual.data, explicit.data)

    backward(mse_half(res.residual, target))
    backward(mse_half(explicit, Tensor(target.data.copy())))
    tied_grad = m.recurrent.conv1.kernel.grad
    summed = np.sum([b.conv1.kernel.grad for b in blocks], axis=0)
    _grads_close(tied_grad, summed)
    _grads_close(m.embed.kernel.grad, embed.kernel.grad)
    _grads_close(m.out_conv.bias.grad, out.bias.grad)


def test_drrn_loop_matches_explicit_graph(rng):
    T = 5
    m = build_model("drrn", 2, T, 5, rng=np.random.default_rng(22))
    x = _input(rng)

    store = ParamStore()
    init_rng = np.random.default_rng(0)
    embed = ConvLayer(store, "e", 1, 5, init_rng)
    blocks = [ResidualBlock(store, f"b{t}", 5, init_rng) for t in range(T)]
    out = ConvLayer(store, "o", 5, 1, init_rng)
    _copy_conv(embed, m.embed)
    _copy_conv(out, m.out_conv)
    for b in blocks:
        _copy_block(b, m.recurrent)

    res = m.forward(x)
    s0 = embed(Tensor(x.data.copy()))
    s = s0
    for b in blocks:
        s = add(s0, b.body(s))
    explicit = out(s)
    assert np.array_equal(res.residual.data, explicit.data)

    backward(mse_half(res.residual, Tensor(np.zeros(x.shape))))
    backward(mse_half(explicit, Tensor(np.zeros(x.shape))))
    summed = np.sum([b.conv2.kernel.grad for b in blocks], axis=0)
    _grads_close(m.recurrent.conv2.kernel.grad, summed)


def test_drcn_loop_matches_explicit_graph(rng):
    T = 4
    m = build_model("drcn", 2, T, 5, rng=np.random.default_rng(23))
    x = _input(rng)

    store = ParamStore()
    init_rng = np.random.default_rng(0)
    embed = ConvLayer(store, "e", 1, 5, init_rng)
    convs = [ConvLayer(store, f"c{t}", 5, 5, init_rng) for t in range(T)]
    out = ConvLayer(store, "o", 5, 1, init_rng)
    _copy_conv(embed, m.embed)
    _copy_conv(out, m.out_conv)
    for c in convs:
        _copy_conv(c, m.recurrent)

    res = m.forward(x)
    s = embed(Tensor(x.data.copy()))
    acc = None
    for t, c in enumerate(convs):
        s = c(s)
        y = smul(out(s), Tensor(m.combine[t].data.copy()))
        acc = y if acc is None else add(acc, y)
    assert np.array_equal(res.residual.data, acc.data)

    backward(mse_half(res.residual, Tensor(np.zeros(x.shape))))
    backward(mse_half(acc, Tensor(np.zeros(x.shape))))
    summed = np.sum([c.kernel.grad for c in convs], axis=0)
    _grads_close(m.recurrent.kernel.grad, summed)


# -- drcn output combination ----------------------------------------------


def test_drcn_initial_combination_is_uniform(rng):
    m = build_model("drcn", 2, 4, 4, rng=np.random.default_rng(3))
    for w in m.combine:
        assert float(w.data) == 0.25
    res = m.forward(_input(rng))
    assert len(res.step_outputs) == 4
    mean = np.mean([s.data for s in res.step_outputs], axis=0)
    assert np.allclose(res.residual.data, mean, rtol=0, atol=1e-15)


def test_drcn_post_step_renormalizes_preserving_ratios():
    m = build_model("drcn", 2, 3, 4, rng=np.random.default_rng(3))
    raw = [0.5, 0.3, 0.8]
    for w, v in zip(m.combine, raw):
        w.data[...] = v
    m.post_step()
    total = sum(float(w.data) for w in m.combine)
    assert abs(total - 1.0) < 1e-15
    for w, v in zip(m.combine, raw):
        assert abs(float(w.data) - v / 1.6) < 1e-15


def test_drcn_post_step_skips_degenerate_total():
    m = build_model("drcn", 2, 2, 4, rng=np.random.default_rng(3))
    m.combine[0].data[...] = 1e-13
    m.combine[1].data[...] = -1e-13
    m.post_step()
    assert float(m.combine[0].data) == 1e-13


def test_post_step_is_noop_for_resnet(rng):
    m = build_model("resnet", 2, 3, 4, rng=np.random.default_rng(3))
    before = {n: t.data.copy() for n, t in m.params.items()}
    m.post_step()
    for n, t in m.params.items():
        assert np.array_equal(t.data, before[n])


# -- recurrence topology ---------------------------------------------------


def test_drrn_skips_from_initial_state(rng):
    m = build_model("drrn", 2, 3, 4, rng=np.random.default_rng(7))
    x = _input(rng)
    res = m.forward(x)
    s0 = m.embed(Tensor(x.data.copy()))
    s1 = add(s0, m.recurrent.body(s0))
    s2 = add(s0, m.recurrent.body(s1))
    assert np.array_equal(res.state_trace[2].data, s2.data)
    resnet_s2 = add(s1, m.recurrent.body(s1))
    assert not np.array_equal(res.state_trace[2].data, resnet_s2.data)


def test_identity_wiring_reproduces_input(rng):
    m = build_model("resnet", 2, 4, 3, rng=np.random.default_rng(2))
    for t in m.params.tensors():
        t.data[...] = 0.0
    m.embed.kernel.data[0, 0, 1, 1] = 1.0
    m.out_conv.kernel.data[0, 0, 1, 1] = 1.0
    x = _input(rng)
    res = m.forward(x)
    assert np.array_equal(res.residual.data, x.data)


# -- bookkeeping ------------------------------------------------------------


def test_parameter_counts_by_variant():
    resnet = build_model("resnet", 2, 5, 8, rng=np.random.default_rng(0))
    drrn = build_model("drrn", 2, 5, 8, rng=np.random.default_rng(0))
    drcn = build_model("drcn", 2, 5, 8, rng=np.random.default_rng(0))
    assert resnet.parameter_counts() == drrn.parameter_counts()
    assert resnet.parameter_counts()["per_step"] == 0
    assert drcn.parameter_counts()["per_step"] == 5


def test_tied_parameter_count_does_not_grow_with_t():
    short = build_model("resnet", 2, 3, 8, rng=np.random.default_rng(0))
    long = build_model("resnet", 2, 9, 8, rng=np.random.default_rng(0))
    assert short.params.total_count == long.params.total_count
    drcn3 = build_model("drcn", 2, 3, 8, rng=np.random.default_rng(0))
    drcn9 = build_model("drcn", 2, 9, 8, rng=np.random.default_rng(0))
    assert drcn9.params.total_count - drcn3.params.total_count == 6


def test_trace_and_output_shapes(rng):
    m = build_model("drcn", 2, 3, 4, rng=np.random.default_rng(1))
    x = _input(rng)
    res = m.forward(x)
    assert isinstance(res, ForwardResult)
    assert res.residual.shape == x.shape
    assert len(res.state_trace) == 4
    assert len(res.step_outputs) == 3
    resnet = build_model("resnet", 2, 3, 4, rng=np.random.default_rng(1))
    assert resnet.forward(x).step_outputs == []


def test_variant_validation():
    with pytest.raises(ConfigurationError, match="unknown single-state variant"):
        SingleStateModel("vdsr", 2, 3, 4, np.random.default_rng(0))
    with pytest.raises(ConfigurationError, match="t_steps"):
        SingleStateModel("resnet", 2, 0, 4, np.random.default_rng(0))


def test_manifest_round_trip():
    from dualsr.models import model_from_manifest
    m = build_model("drrn", 3, 4, 6, rng=np.random.default_rng(5))
    clone = model_from_manifest(m.manifest(), np.random.default_rng(9))
    assert clone.variant == "drrn"
    assert clone.scale == 3
    assert clone.t_steps == 4
    assert clone.params.names() == m.params.names()
