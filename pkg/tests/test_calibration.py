import numpy as np
import pytest

from eqnet.calibration import CalibrationConfig, accuracy, bn_calibrate, evaluate
from eqnet.diffcore import Tensor
from eqnet.errors import ContractError, InputError
from eqnet.harness.data import make_blobs
from eqnet.supernet import ElasticSpace, SubnetSpec, TrainConfig, Trainer, build_supernet, sample_subnet
from eqnet.supernet.network import ForwardContext

SPACE = ElasticSpace((2, 4, 8), (2, 4, 8))


def small_net(seed=0):
    return build_supernet(["linear:4:5", "bn", "relu", "linear:5:3"], SPACE, np.random.default_rng(seed),
                          input_shape=(4,))


def test_constant_batch_statistics():
    net = small_net()
    spec = SubnetSpec.uniform(2, 8)
    x = np.tile(np.array([[0.3, -1.0, 2.0, 0.5]]), (16, 1))
    cal = bn_calibrate(net, spec, x, CalibrationConfig(n_batches=3, batch_size=8))
    # pre-BN activations of a constant batch are one repeated row
    pre = net.quantized_layers[0].forward(Tensor(x[:1]), spec[0], ForwardContext(mode="eval")).data[0]
    mean, var = cal.stats[0]
    assert np.allclose(mean, pre, atol=1e-12)
    assert np.allclose(var, 0.0, atol=1e-12)


def test_pooled_statistics_match_direct(rng):
    net = small_net()
    spec = sample_subnet(SPACE, 2, "random", rng)
    x = rng.normal(size=(40, 4))
    cal = bn_calibrate(net, spec, x, CalibrationConfig(n_batches=4, batch_size=10))
    pre = net.quantized_layers[0].forward(Tensor(x), spec[0], ForwardContext(mode="eval")).data
    assert np.allclose(cal.stats[0][0], pre.mean(axis=0), atol=1e-12)
    assert np.allclose(cal.stats[0][1], pre.var(axis=0), atol=1e-12)


def test_calibration_is_deterministic_and_pure(rng):
    net = small_net()
    before = {k: v.copy() for k, v in net.state_arrays().items()}
    spec = sample_subnet(SPACE, 2, "random", rng)
    x = rng.normal(size=(50, 4))
    a = bn_calibrate(net, spec, x)
    b = bn_calibrate(net, spec, x)
    for (m1, v1), (m2, v2) in zip(a.stats, b.stats):
        assert np.array_equal(m1, m2) and np.array_equal(v1, v2)
    after = net.state_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_empty_calibration_data():
    with pytest.raises(InputError):
        bn_calibrate(small_net(), SubnetSpec.uniform(2, 8), np.zeros((0, 4)))


def test_config_validation():
    with pytest.raises(ContractError):
        CalibrationConfig(n_batches=0)


def test_evaluate_requires_calibration(rng):
    net = small_net()
    spec = SubnetSpec.uniform(2, 8)
    x, y = rng.normal(size=(10, 4)), rng.integers(0, 3, 10)
    with pytest.raises(ContractError):
        evaluate(net, spec, x, y)
    acc = evaluate(net, spec, x, y, require_calibrated=False)
    assert 0.0 <= acc <= 1.0
    cal = bn_calibrate(net, spec, x)
    assert evaluate(cal, None, x, y) == evaluate(cal, spec, x, y)
    with pytest.raises(ContractError):
        evaluate(cal, SubnetSpec.uniform(2, 4), x, y)


def test_accuracy_examples(rng):
    y = rng.integers(0, 5, 200)
    perfect = np.eye(5)[y]
    assert accuracy(perfect, y) == 1.0
    k, n = 4, 20_000
    y = np.repeat(np.arange(k), n // k)
    acc = accuracy(rng.normal(size=(n, k)), y)
    p = 1 / k
    assert abs(acc - p) <= 3 * np.sqrt(p * (1 - p) / n)


def test_calibration_helps_lowest_bit_subnet():
    """Evaluating the lowest-bit subnet with the training-time running
    statistics versus statistics recalibrated for it."""
    wins = 0
    for seed in range(10):
        ds = make_blobs(1500, 10, 64, seed=seed, separation=1.5, clusters_per_class=2)
        space = ElasticSpace((2, 3, 4, 6, 8), (2, 3, 4, 6, 8))
        net = build_supernet("toy_mlp", space, np.random.default_rng(seed))
        net.init_activation_params(ds.x[:256])
        tr = Trainer(net, TrainConfig(epochs=5, batch_size=64), np.random.default_rng(seed))
        tr.fit(ds.x[:1000], ds.y[:1000])
        spec = sample_subnet(space, net.n_layers, "lowest", np.random.default_rng(seed))
        xv, yv = ds.x[1000:], ds.y[1000:]
        before = evaluate(net, spec, xv, yv, require_calibrated=False)
        after = evaluate(bn_calibrate(net, spec, ds.x[:1000]), None, xv, yv)
        wins += after >= before
    assert wins >= 8
