import math
import warnings

import numpy as np
import pytest

import eqnet.diffcore as dc
from eqnet.diffcore import Tensor
from eqnet.errors import BuildError, ContractError, DegenerateInputWarning, InvalidSpecError, LookupSpecError
from eqnet.quantizer import QuantParams, QuantSpec, fake_quantize
from eqnet.supernet import (
    ElasticSpace,
    ForwardContext,
    GroupLogits,
    LayerConfig,
    SubnetSpec,
    TrainConfig,
    Trainer,
    build_supernet,
    forward_subnet,
    gpg_losses,
    kurtosis,
    parse_subnet,
    sample_subnet,
    sandwich_specs,
    skewness,
    subnet_losses,
    train_step,
    wdr_loss,
)
from oracles import central_diff, moments_ref, rel_err

SMALL = ElasticSpace((2, 4, 8), (2, 4, 8))


def mlp(space=SMALL, seed=0, layers=("linear:4:6", "relu", "linear:6:3")):
    cin = int(layers[0].split(":")[1])
    return build_supernet(list(layers), space, np.random.default_rng(seed), input_shape=(cin,))


# -- space and construction ------------------------------------------------

def test_space_normalizes():
    sp = ElasticSpace((8, 2, 4, 4), (4, 2), ("asym", "sym"), ("pc", "pt"))
    assert sp.weight_bits == (2, 4, 8)
    assert [s.value for s in sp.symmetries] == ["symmetric", "asymmetric"]
    assert len(sp.weight_specs()) == 12 and len(sp.act_specs()) == 4
    assert all(not s.per_channel for s in sp.act_specs())


@pytest.mark.parametrize("kw", [dict(weight_bits=()), dict(act_bits=())])
def test_empty_bit_set_is_build_error(kw):
    args = dict(weight_bits=(2, 4), act_bits=(2, 4), **{})
    args.update(kw)
    with pytest.raises(BuildError):
        ElasticSpace(**args)
    with pytest.raises(InvalidSpecError):
        ElasticSpace(**args)


def test_qparam_table_sizes():
    net = mlp()
    for layer in net.quantized_layers:
        assert len(layer.weight_qparams) == 12
        assert len(layer.act_qparams) == 6


def test_conv_per_channel_step_length():
    net = build_supernet(["conv:2:5:3:1:1", "gap", "linear:5:2"], SMALL, np.random.default_rng(0), input_shape=(2, 4, 4))
    step, zero = net.quantized_layers[0].weight_qparams[QuantSpec(4, "asymmetric", "per_channel")]
    assert step.shape == (5,) and zero.shape == (5,)
    step, _ = net.quantized_layers[0].weight_qparams[QuantSpec(4, "symmetric", "per_tensor")]
    assert step.shape == ()


@pytest.mark.parametrize("layers", [["pool:2"], ["linear:4"], ["conv:1:2"], []])
def test_bad_architecture(layers):
    with pytest.raises(BuildError):
        build_supernet(layers, SMALL, input_shape=(4,))


def test_unknown_registered_arch():
    with pytest.raises(BuildError):
        build_supernet("resnet9000", SMALL)


def test_toy_architectures_build():
    for name, n in [("toy_mlp", 4), ("toy_resnet", 7)]:
        net = build_supernet(name, SMALL, np.random.default_rng(0))
        assert net.n_layers == n
        x = np.random.default_rng(1).normal(size=(2,) + net.input_shape)
        assert forward_subnet(net, sample_subnet(SMALL, n, "random", np.random.default_rng(2)), x).shape == (2, 10)


def test_first_last_flag():
    net = build_supernet("toy_mlp", SMALL, np.random.default_rng(0), quantize_first_last=False)
    assert net.n_layers == 2


# -- sampling and spec strings -------------------------------------------

def test_sandwich_extremes():
    r = np.random.default_rng(0)
    hi = sample_subnet(SMALL, 5, "highest", r)
    lo = sample_subnet(SMALL, 5, "lowest", r)
    assert hi.weight_bits().tolist() == [8] * 5 and hi.act_bits().tolist() == [8] * 5
    assert lo.weight_bits().tolist() == [2] * 5 and lo.act_bits().tolist() == [2] * 5


def test_random_bits_are_uniform():
    r = np.random.default_rng(3)
    n = 10_000
    counts = np.zeros(3)
    for _ in range(n):
        b = sample_subnet(SMALL, 1, "random", r).weight_bits()[0]
        counts[(2, 4, 8).index(b)] += 1
    p = 1 / 3
    sigma = math.sqrt(n * p * (1 - p))
    assert np.all(np.abs(counts - n * p) <= 3 * sigma)


def test_sandwich_order():
    specs = sandwich_specs(mlp(), 2, np.random.default_rng(0))
    assert len(specs) == 4
    assert specs[0].weight_bits().max() == 8 and specs[-1].weight_bits().max() == 2


def test_parse_subnet_roundtrip():
    s = parse_subnet("all:8,asym,per_channel", 3)
    assert all(c.weight == QuantSpec(8, "asymmetric", "per_channel") for c in s)
    assert all(c.act == QuantSpec(8, "asymmetric", "per_tensor") for c in s)
    mixed = parse_subnet("2,sym,pt/4|8,asym,pc/2,sym", 2)
    assert mixed[1].act == QuantSpec(2, "symmetric", "per_tensor")
    assert parse_subnet(mixed.to_string(), 2) == mixed
    for bad in ["", "all:8,asym", "8,sym,pt", "x,sym,pt|8,sym,pt", "all:8,sym,diag"]:
        with pytest.raises(InvalidSpecError):
            parse_subnet(bad, 2)


def test_spec_outside_space():
    net = mlp()
    with pytest.raises(LookupSpecError):
        forward_subnet(net, SubnetSpec.uniform(2, 3), np.zeros((1, 4)))
    with pytest.raises(LookupSpecError):
        forward_subnet(net, SubnetSpec.uniform(3, 8), np.zeros((1, 4)))


# -- forward ------------------------------------------------------------------

def test_hand_computed_linear():
    net = mlp(layers=["linear:2:1"])
    layer = net.quantized_layers[0]
    wspec = QuantSpec(4, "asymmetric", "per_tensor")
    aspec = QuantSpec(4, "asymmetric", "per_tensor")
    layer.weight.data = np.array([[0.26, -0.74]])
    layer.bias.data = np.array([0.5])
    ws, wz = layer.weight_qparams[wspec]
    ws.data, wz.data = np.array(0.25), np.array(1.0)
    as_, az = layer.act_qparams[aspec]
    as_.data, az.data = np.array(0.5), np.array(-2.0)
    x = np.array([[1.2, 0.4]])
    # weights: rint(1.04)+1=2 -> 0.25*(2-1)=0.25 ; rint(-2.96)+1=-2 -> 0.25*(-3)=-0.75
    # acts: rint(2.4)-2=0 -> 0.5*2=1.0 ; rint(0.8)-2=-1 -> 0.5*1=0.5
    out = forward_subnet(net, SubnetSpec((LayerConfig(wspec, aspec),)), x).data
    assert out[0, 0] == pytest.approx(0.25 * 1.0 - 0.75 * 0.5 + 0.5, abs=1e-15)


def test_grid_aligned_weights_are_lossless():
    net = mlp(layers=["linear:3:2"])
    layer = net.quantized_layers[0]
    spec = parse_subnet("all:8,asym,per_channel", 1)
    ws, wz = layer.weight_qparams[spec[0].weight]
    as_, az = layer.act_qparams[spec[0].act]
    r = np.random.default_rng(0)
    layer.weight.data = ws.data[:, None] * (r.integers(-100, 100, size=(2, 3)) - np.rint(wz.data)[:, None])
    x = float(as_.data) * (r.integers(-100, 100, size=(5, 3)) - np.rint(float(az.data)))
    q = forward_subnet(net, spec, x).data
    f = net.forward(x).data
    assert np.allclose(q, f, rtol=0, atol=1e-12)


def test_forward_deterministic():
    net = mlp()
    spec = sample_subnet(SMALL, 2, "random", np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(3, 4))
    assert np.array_equal(forward_subnet(net, spec, x, "eval").data, forward_subnet(net, spec, x, "eval").data)


def test_weight_sharing_and_parameter_splitting():
    net = mlp()
    x = np.random.default_rng(1).normal(size=(3, 4))
    a = SubnetSpec.uniform(2, 8, 8, "symmetric", "per_tensor")
    b = SubnetSpec.uniform(2, 4, 4, "asymmetric", "per_channel")
    ya, yb = forward_subnet(net, a, x, "eval").data, forward_subnet(net, b, x, "eval").data
    # touching spec A's step leaves spec B unchanged
    step, _ = net.quantized_layers[0].weight_qparams[a[0].weight]
    step.data = step.data * 1.7
    assert not np.array_equal(forward_subnet(net, a, x, "eval").data, ya)
    assert np.array_equal(forward_subnet(net, b, x, "eval").data, yb)
    # touching the shared weight changes both
    net.quantized_layers[0].weight.data = net.quantized_layers[0].weight.data * 3
    assert not np.array_equal(forward_subnet(net, b, x, "eval").data, yb)
    assert sum(1 for p in net.parameters() if p.name and p.name.endswith(".weight")) == 2


# -- moments and WDR ------------------------------------------------------------

def test_moment_examples():
    assert skewness(np.array([-1.0, 1.0])).item() == 0.0
    assert skewness(np.array([0.0, 0, 0, 1])).item() == pytest.approx(2 / math.sqrt(3), abs=1e-12)
    assert kurtosis(np.array([-1.0, 1.0, -1.0, 1.0])).item() == 1.0
    u = np.random.default_rng(0).uniform(-1, 1, 1_000_000)
    assert abs(kurtosis(u).item() - 1.8) <= 0.02
    g = np.random.default_rng(1).normal(size=1_000_000)
    assert abs(kurtosis(g).item() - 3.0) <= 0.03


def test_moments_match_reference(rng):
    for _ in range(10):
        w = rng.gamma(2.0, size=50)
        s, k = moments_ref(w)
        assert skewness(w).item() == pytest.approx(s, rel=1e-12)
        assert kurtosis(w).item() == pytest.approx(k, rel=1e-12)


def test_moment_symmetries(rng):
    w = rng.gamma(2.0, size=40)
    assert skewness(-w).item() == pytest.approx(-skewness(w).item(), rel=1e-12)
    assert kurtosis(-3.0 * w + 7).item() == pytest.approx(kurtosis(w).item(), rel=1e-10)
    perm = rng.permutation(40)
    assert wdr_loss([Tensor(w[perm])]).item() == pytest.approx(wdr_loss([Tensor(w)]).item(), rel=1e-12)


def test_degenerate_moments_warn():
    with pytest.warns(DegenerateInputWarning):
        assert skewness(np.ones(5)).item() == 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateInputWarning)
        assert wdr_loss([Tensor(np.ones(4))]).item() == pytest.approx(1.8**2)


def test_wdr_examples():
    grid = np.linspace(-1, 1, 101)
    # a discrete uniform grid has kurtosis slightly below 1.8; build an exact one
    two = np.array([-1.0, 1.0])
    assert wdr_loss([Tensor(two)]).item() == pytest.approx(0.64, abs=1e-12)
    assert wdr_loss([Tensor(two), Tensor(two)], kurtosis_target=1.0).item() == 0.0
    s, k = moments_ref(grid)
    assert wdr_loss([Tensor(grid)], kurtosis_target=k).item() == pytest.approx(0.0, abs=1e-24)


def test_wdr_gradient(rng):
    ws = [rng.normal(size=(3, 4)), rng.gamma(2.0, size=(5,))]

    def f(a, b):
        return wdr_loss([Tensor(a), Tensor(b)]).item()

    ta, tb = Tensor(ws[0], requires_grad=True), Tensor(ws[1], requires_grad=True)
    dc.backward(wdr_loss([ta, tb]))
    assert rel_err(ta.grad, central_diff(lambda a: f(a, ws[1]), ws[0])) <= 1e-5
    assert rel_err(tb.grad, central_diff(lambda b: f(ws[0], b), ws[1])) <= 1e-5


# -- GPG -------------------------------------------------------------------------

def test_gpg_examples(rng):
    y = np.array([0, 2, 1])
    sat = np.full((3, 3), -50.0)
    sat[np.arange(3), y] = 50.0
    _, _, _, tot = gpg_losses(GroupLogits(Tensor(sat), Tensor(sat), Tensor(sat), y), 0.5)
    assert tot.item() < 1e-20
    h, r, l = (Tensor(rng.normal(size=(3, 3))) for _ in range(3))
    ce = [dc.cross_entropy(t, y).item() for t in (h, r, l)]
    _, _, _, tot0 = gpg_losses(GroupLogits(h, r, l, y), 0.0)
    assert tot0.item() == pytest.approx(sum(ce), rel=1e-14)
    _, lr1, ll1, _ = gpg_losses(GroupLogits(h, r, l, y), 1.0)
    assert lr1.item() == pytest.approx(dc.kl_divergence(r, h).item(), rel=1e-14)
    assert ll1.item() == pytest.approx(dc.kl_divergence(l, r).item(), rel=1e-14)
    _, _, _, swapped = gpg_losses(GroupLogits(l, r, h, y), 0.5)
    _, _, _, orig = gpg_losses(GroupLogits(h, r, l, y), 0.5)
    assert swapped.item() != orig.item()
    for lam in (-0.1, 1.5):
        with pytest.raises(ContractError):
            gpg_losses(GroupLogits(h, r, l, y), lam)


def test_gpg_teachers_detached(rng):
    y = np.array([0, 1])
    h, r, l = (Tensor(rng.normal(size=(2, 3)), requires_grad=True) for _ in range(3))
    _, _, loss_l, _ = gpg_losses(GroupLogits(h, r, l, y), 1.0)
    dc.backward(loss_l)
    assert r.grad is None and l.grad is not None


def test_chained_random_teachers(rng):
    y = np.array([0, 1])
    z = [Tensor(rng.normal(size=(2, 3))) for _ in range(4)]
    cfg = TrainConfig(lam=1.0)
    losses = subnet_losses(z, y, cfg)
    assert losses[1].item() == pytest.approx(dc.kl_divergence(z[1], z[0]).item())
    assert losses[2].item() == pytest.approx(dc.kl_divergence(z[2], z[0]).item())
    assert losses[3].item() == pytest.approx(dc.kl_divergence(z[3], z[2]).item())


# -- training step ---------------------------------------------------------------

def _grads_after_step(net, specs, x, y, cfg):
    opt = dc.Adam(list(net.parameters()), lr=0.0)
    train_step(net, opt, x, y, np.random.default_rng(0), cfg, lr=0.0, specs=specs)
    return {id(p): (None if p.grad is None else p.grad.copy()) for p in net.parameters()}


def test_aggregated_gradient_is_sum_of_independent(rng):
    net = mlp()
    x, y = rng.normal(size=(8, 4)), rng.integers(0, 3, 8)
    specs = sandwich_specs(net, 1, np.random.default_rng(5))
    cfg = TrainConfig(lam=0.0, wdr_weight=0.0, n_random=1)
    got = _grads_after_step(net, specs, x, y, cfg)
    total = {id(p): np.zeros_like(p.data) for p in net.parameters()}
    for s in specs:
        for p in net.parameters():
            p.grad = None
        dc.backward(dc.cross_entropy(net.forward(Tensor(x), s, ForwardContext(mode="train")), y))
        for p in net.parameters():
            if p.grad is not None:
                total[id(p)] += p.grad
    for p in net.parameters():
        g = got[id(p)]
        if g is None:
            assert not np.any(total[id(p)])
        else:
            assert np.allclose(g, total[id(p)], rtol=1e-13, atol=1e-15)


def test_wdr_only_touches_weights(rng):
    x, y = rng.normal(size=(8, 4)), rng.integers(0, 3, 8)
    net = mlp()
    specs = sandwich_specs(net, 2, np.random.default_rng(5))
    g0 = _grads_after_step(net, specs, x, y, TrainConfig(wdr_weight=0.0))
    g1 = _grads_after_step(net, specs, x, y, TrainConfig(wdr_weight=0.5))
    weights = net.weight_tensors()
    tw = [Tensor(w.data, requires_grad=True) for w in weights]
    dc.backward(wdr_loss(tw))
    for w, t in zip(weights, tw):
        assert np.allclose(g1[id(w)] - g0[id(w)], 0.5 * t.grad, rtol=1e-9, atol=1e-12)
    wid = {id(w) for w in weights}
    for p in net.parameters():
        if id(p) not in wid and g0[id(p)] is not None:
            assert np.array_equal(g0[id(p)], g1[id(p)])


def test_training_smoke_and_determinism():
    def run():
        net = build_supernet("toy_mlp", SMALL, np.random.default_rng(0))
        r = np.random.default_rng(1)
        x, y = r.normal(size=(256, 64)), r.integers(0, 10, 256)
        tr = Trainer(net, TrainConfig(epochs=25, batch_size=64), np.random.default_rng(2))
        losses = []
        tr.fit(x, y, on_epoch=lambda e, rec: losses.append(rec["loss"]))
        return net, losses

    net_a, la = run()
    net_b, lb = run()
    assert len(la) == 25 and all(math.isfinite(v) for v in la)
    assert la == lb
    sa, sb = net_a.state_arrays(), net_b.state_arrays()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_projection_keeps_qparams_valid():
    net = mlp()
    for layer in net.quantized_layers:
        for spec, (s, z) in layer.qparam_tensors():
            s.data = -np.abs(s.data)
            z.data = z.data + 1000
    net.project_qparams()
    for layer in net.quantized_layers:
        for spec, (s, z) in layer.qparam_tensors():
            assert np.all(s.data > 0)
            qmin, qmax = spec.bounds
            if not spec.symmetric:
                assert np.all(z.data <= qmax)
