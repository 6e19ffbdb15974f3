import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqnet.errors import InputError, InvalidSpecError, ShapeError
from eqnet.quantizer import (
    IntCodeTensor,
    QuantParams,
    QuantSpec,
    clip_bounds,
    dequantize,
    fake_quantize,
    fake_quantize_with_grads,
    heuristic_per_tensor,
    init_params,
    integer_product,
    lsq_grad_scale,
    quantize,
    quantizer_gradients,
)
from oracles import central_diff, quantize_ref, rel_err

SYM_PT = QuantSpec(8, "symmetric", "per_tensor")


def spec(bits, sym="symmetric", gran="per_tensor"):
    return QuantSpec(bits, sym, gran)


def codes(w, s, z, bits, sym=None):
    sym = sym or ("symmetric" if z == 0 else "asymmetric")
    return quantize(np.array(w), QuantParams(s, z), spec(bits, sym)).codes


@pytest.mark.parametrize("bits,expected", [(2, (-2, 1)), (8, (-128, 127)), (4, (-8, 7))])
def test_clip_bounds(bits, expected):
    assert clip_bounds(bits) == expected


@pytest.mark.parametrize("bits", [1, 0, -3])
def test_clip_bounds_rejects_small(bits):
    with pytest.raises(InvalidSpecError):
        clip_bounds(bits)
    with pytest.raises(InvalidSpecError):
        QuantSpec(bits, "symmetric", "per_tensor")


def test_quantize_examples():
    assert codes([0.6], 0.5, 0, 8).tolist() == [1]
    assert codes([1.7], 0.5, 0, 2).tolist() == [1]
    assert codes([-0.3], 0.1, 5, 4).tolist() == [2]


def test_dequantize_examples():
    p = QuantParams(0.5, 0)
    assert dequantize(IntCodeTensor(np.array([1]), SYM_PT), p).tolist() == [0.5]
    out = dequantize(IntCodeTensor(np.array([2]), spec(4, "asymmetric")), QuantParams(0.1, 5))
    assert out[0] == pytest.approx(-0.3, abs=1e-15)
    assert dequantize(IntCodeTensor(np.array([0]), SYM_PT), QuantParams(0.37, 0)).tolist() == [0.0]


def test_fake_quantize_examples():
    assert fake_quantize(np.array([0.6]), QuantParams(0.5, 0), spec(8)).tolist() == [0.5]
    assert fake_quantize(np.array([10.0]), QuantParams(0.5, 0), spec(2)).tolist() == [0.5]
    grid = 0.25 * (np.arange(-8, 8) - 3)
    assert np.array_equal(fake_quantize(grid, QuantParams(0.25, 3), spec(4, "asymmetric")), grid)


def test_rounding_is_half_to_even():
    w = np.array([0.25, 0.75, -0.25, -0.75, 1.25])
    assert codes(w, 0.5, 0, 8).tolist() == [0, 2, 0, -2, 2]


def test_quantize_matches_reference(rng):
    for _ in range(50):
        bits = int(rng.integers(2, 9))
        qmin, qmax = clip_bounds(bits)
        s = float(rng.uniform(0.01, 1))
        z = int(rng.integers(qmin, qmax + 1))
        w = rng.normal(scale=s * 2 ** bits / 4, size=40)
        got = quantize(w, QuantParams(s, z), spec(bits, "asymmetric")).codes
        assert np.array_equal(got, quantize_ref(w, s, z, bits))


def test_per_channel_broadcast():
    w = np.array([[0.5, 1.0], [0.5, 1.0]])
    c = quantize(w, QuantParams([0.5, 0.25], [0, 0]), spec(8, gran="per_channel")).codes
    assert c.tolist() == [[1, 2], [2, 4]]


def test_shape_errors():
    with pytest.raises(ShapeError):
        quantize(np.ones((3, 2)), QuantParams([1.0, 1.0], [0, 0]), spec(8, gran="per_channel"))
    with pytest.raises(ShapeError):
        quantize(np.ones(3), QuantParams([1.0, 1.0, 1.0], [0, 0, 0]), spec(8))
    with pytest.raises(ShapeError):
        QuantParams([1.0, 2.0], 0.0)


def test_param_invariants():
    with pytest.raises(InvalidSpecError):
        quantize(np.ones(2), QuantParams(0.1, 3), spec(8))
    with pytest.raises(InvalidSpecError):
        quantize(np.ones(2), QuantParams(0.0, 0), spec(8))


def test_integer_product_examples():
    p_w, p_x = QuantParams(0.5, 1), QuantParams(0.25, 2)
    wc = IntCodeTensor(np.array([[3]]), spec(8, "asymmetric"))
    xc = IntCodeTensor(np.array([[4]]), spec(8, "asymmetric"))
    assert integer_product(wc, xc, p_w, p_x)[0, 0] == pytest.approx(0.5, abs=1e-15)
    w = np.array([[1, -2], [3, 4]])
    x = np.array([[5], [-6]])
    out = integer_product(IntCodeTensor(w, SYM_PT), IntCodeTensor(x, SYM_PT), QuantParams(0.5, 0), QuantParams(0.1, 0))
    assert np.allclose(out, 0.05 * (w @ x), rtol=0, atol=1e-15)


def test_integer_product_random_vs_float(rng):
    for _ in range(100):
        bits = int(rng.integers(2, 9))
        qmin, qmax = clip_bounds(bits)
        per_channel = bool(rng.integers(2))
        w = rng.integers(qmin, qmax + 1, size=(4, 3))
        x = rng.integers(qmin, qmax + 1, size=(3, 2))
        if per_channel:
            pw = QuantParams(rng.uniform(0.01, 1, 4), rng.integers(qmin, qmax + 1, 4).astype(float))
        else:
            pw = QuantParams(rng.uniform(0.01, 1), float(rng.integers(qmin, qmax + 1)))
        px = QuantParams(rng.uniform(0.01, 1), float(rng.integers(qmin, qmax + 1)))
        gran = "per_channel" if per_channel else "per_tensor"
        wc = IntCodeTensor(w, spec(bits, "asymmetric", gran))
        xc = IntCodeTensor(x, spec(bits, "asymmetric"))
        ref = dequantize(wc, pw) @ dequantize(xc, px)
        got = integer_product(wc, xc, pw, px)
        assert np.max(np.abs(got - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_integer_product_shape_error():
    a = IntCodeTensor(np.ones((2, 3), dtype=int), SYM_PT)
    with pytest.raises(ShapeError):
        integer_product(a, a, QuantParams(1.0, 0), QuantParams(1.0, 0))


def test_gradient_examples():
    gw, gs, gz = quantizer_gradients(np.array([0.6]), QuantParams(0.5, 0), spec(8), np.array([1.0]), grad_scale=1.0)
    assert gw.tolist() == [1.0]
    assert gs == pytest.approx(1 - 1.2)
    assert gz == 0.0
    # w/s = 3.4 saturates at qmax = 1
    gw, gs, gz = quantizer_gradients(np.array([1.7]), QuantParams(0.5, 0), spec(2), np.array([1.0]), grad_scale=1.0)
    assert gw.tolist() == [0.0]
    assert gs == pytest.approx(1.0)
    gw, gs, gz = quantizer_gradients(np.array([1.7]), QuantParams(0.5, -1), spec(2, "asymmetric"), np.array([2.0]),
                                     grad_scale=1.0)
    assert gs == pytest.approx(2.0 * (1 - (-1)))
    assert gz == pytest.approx(-0.5 * 2.0)


def test_default_grad_scale():
    assert lsq_grad_scale(100, 4) == pytest.approx(1 / np.sqrt(700))
    w = np.array([0.6, -0.2, 0.3])
    _, g1, _ = quantizer_gradients(w, QuantParams(0.5, 0), spec(4), np.ones(3), grad_scale=1.0)
    _, g2, _ = quantizer_gradients(w, QuantParams(0.5, 0), spec(4), np.ones(3))
    assert g2 == pytest.approx(g1 / np.sqrt(3 * 7))


def _away_from_boundaries(rng, shape, s, z, bits, margin=0.01):
    """Values whose w/s + z sits at least ``margin`` from every rounding
    boundary, including some beyond the clip range."""
    qmin, qmax = clip_bounds(bits)
    ints = rng.integers(qmin - 3, qmax + 4, size=shape)
    frac = rng.uniform(-0.5 + margin, 0.5 - margin, size=shape)
    return (ints - z + frac) * s


def ste_surrogate(w0, s0, z0, spec_):
    """Smooth function whose derivative is the documented estimator: the
    rounding offset and the clip pattern are frozen at (w0, s0)."""
    qmin, qmax = spec_.bounds
    z0r = np.rint(z0)
    s0b = s0 if np.ndim(s0) == 0 else np.reshape(s0, (-1,) + (1,) * (w0.ndim - 1))
    z0b = z0r if np.ndim(z0r) == 0 else np.reshape(z0r, (-1,) + (1,) * (w0.ndim - 1))
    v0 = w0 / s0b
    delta = np.rint(v0) - v0
    r0 = np.rint(v0) + z0b
    clipped = np.clip(r0, qmin, qmax)
    inside = (r0 >= qmin) & (r0 <= qmax)

    def f(w, s, z):
        sb = s if np.ndim(s) == 0 else np.reshape(s, s0b.shape)
        zb = z if np.ndim(z) == 0 else np.reshape(z, z0b.shape)
        return np.where(inside, w + sb * delta, sb * (clipped - zb))

    return f


@pytest.mark.parametrize("bits", [2, 3, 4, 8])
@pytest.mark.parametrize("sym", ["symmetric", "asymmetric"])
@pytest.mark.parametrize("gran", ["per_tensor", "per_channel"])
def test_gradients_vs_finite_differences(bits, sym, gran, rng):
    sp = spec(bits, sym, gran)
    qmin, qmax = sp.bounds
    shape = (3, 5)
    if gran == "per_channel":
        s = rng.uniform(0.05, 0.5, 3)
        z = np.zeros(3) if sym == "symmetric" else rng.integers(qmin, qmax + 1, 3).astype(float)
        zcol = z[:, None]
    else:
        s = float(rng.uniform(0.05, 0.5))
        z = 0.0 if sym == "symmetric" else float(rng.integers(qmin, qmax + 1))
        zcol = z
    scol = s[:, None] if np.ndim(s) else s
    w = _away_from_boundaries(rng, shape, scol, zcol, bits)
    up = rng.normal(size=shape)
    p = QuantParams(s, z)
    gw, gs, gz = quantizer_gradients(w, p, sp, up, grad_scale=1.0)
    f = ste_surrogate(w, np.asarray(s), np.asarray(z), sp)
    # forward of the surrogate equals fake_quantize at the base point
    assert np.allclose(f(w, np.asarray(s), np.asarray(z)), fake_quantize(w, p, sp), rtol=0, atol=1e-12)
    nw = central_diff(lambda t: np.sum(up * f(t, np.asarray(s), np.asarray(z))), w)
    ns = central_diff(lambda t: np.sum(up * f(w, t, np.asarray(z))), np.asarray(s))
    assert rel_err(gw, nw) <= 1e-5
    assert rel_err(gs, ns) <= 1e-5
    if sym == "asymmetric":
        nz = central_diff(lambda t: np.sum(up * f(w, np.asarray(s), t)), np.asarray(z))
        assert rel_err(gz, nz) <= 1e-5
    else:
        assert np.all(gz == 0)


def test_heuristic_examples():
    v = [0.1, 0.4, 1.0]
    assert heuristic_per_tensor(v, "max") == 1.0
    assert heuristic_per_tensor(v, "mean") == pytest.approx(0.5)
    assert heuristic_per_tensor(v, "min") == 0.1
    with pytest.raises(InputError):
        heuristic_per_tensor([], "max")
    with pytest.raises(InputError):
        heuristic_per_tensor([0.1, -1.0], "max")
    with pytest.raises(InputError):
        heuristic_per_tensor(v, "median")


def test_heuristic_mse_ordering(rng):
    scales = np.geomspace(0.1, 1.0, 8)
    w = rng.normal(size=(8, 64)) * scales[:, None]
    sp = spec(2)
    pc = init_params(w, spec(2, gran="per_channel"))
    mse = {}
    for mode in ("min", "mean", "max"):
        s = heuristic_per_tensor(pc.step, mode)
        mse[mode] = float(np.mean((fake_quantize(w, QuantParams(s, 0), sp) - w) ** 2))
    assert mse["min"] > mse["max"]


def test_init_params():
    w = np.array([[-1.0, 2.0, 3.0], [0.5, -0.5, 0.5]])
    p = init_params(w, spec(4, gran="per_channel"))
    assert np.allclose(p.step, [2 * 2.0 / np.sqrt(7), 2 * 0.5 / np.sqrt(7)])
    assert np.all(p.zero_point == 0)
    pa = init_params(w, spec(4, "asymmetric"))
    qmin, _ = clip_bounds(4)
    assert quantize(w, pa, spec(4, "asymmetric")).codes.min() == qmin


# -- properties -------------------------------------------------------------

bits_st = st.integers(2, 8)
sym_st = st.sampled_from(["symmetric", "asymmetric"])
gran_st = st.sampled_from(["per_tensor", "per_channel"])


@st.composite
def instances(draw):
    bits, sym, gran = draw(bits_st), draw(sym_st), draw(gran_st)
    sp = spec(bits, sym, gran)
    qmin, qmax = sp.bounds
    seed = draw(st.integers(0, 2**32 - 1))
    r = np.random.default_rng(seed)
    c = int(r.integers(1, 5))
    w = r.normal(scale=float(r.uniform(0.01, 10)), size=(c, int(r.integers(1, 7))))
    n = c if gran == "per_channel" else None
    s = r.uniform(0.001, 2, size=n) if n else float(r.uniform(0.001, 2))
    if sym == "symmetric":
        z = np.zeros(n) if n else 0.0
    else:
        z = r.integers(qmin, qmax + 1, size=n).astype(float) if n else float(r.integers(qmin, qmax + 1))
    return w, QuantParams(s, z), sp


@settings(max_examples=200, deadline=None)
@given(instances())
def test_idempotence(inst):
    w, p, sp = inst
    once = fake_quantize(w, p, sp)
    assert np.array_equal(fake_quantize(once, p, sp), once)


@settings(max_examples=200, deadline=None)
@given(instances())
def test_codes_and_values_in_range(inst):
    w, p, sp = inst
    qmin, qmax = sp.bounds
    c = quantize(w, p, sp).codes
    assert c.min() >= qmin and c.max() <= qmax
    s = p.step if p.step.ndim == 0 else p.step[:, None]
    z = p.zero_point if p.step.ndim == 0 else p.zero_point[:, None]
    out = fake_quantize(w, p, sp)
    assert np.all(out >= s * (qmin - z) - 1e-12) and np.all(out <= s * (qmax - z) + 1e-12)


@settings(max_examples=100, deadline=None)
@given(instances())
def test_single_channel_equals_per_tensor(inst):
    w, p, sp = inst
    row = w[:1]
    s = float(np.ravel(p.step)[0])
    z = float(np.ravel(p.zero_point)[0])
    pt = fake_quantize_with_grads(row, QuantParams(s, z), spec(sp.bits, sp.symmetry, "per_tensor"))
    pc = fake_quantize_with_grads(row, QuantParams([s], [z]), spec(sp.bits, sp.symmetry, "per_channel"))
    for a, b in zip(pt, pc):
        assert np.array_equal(a, b)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 8), st.floats(0.01, 2.0), st.integers(0, 2**32 - 1))
def test_symmetric_negation(bits, s, seed):
    qmin, qmax = clip_bounds(bits)
    w = np.random.default_rng(seed).uniform(-qmax * s, qmax * s, 20)
    p = QuantParams(s, 0)
    c = quantize(w, p, spec(bits)).codes
    cn = quantize(-w, p, spec(bits)).codes
    assert np.array_equal(cn, -c)
