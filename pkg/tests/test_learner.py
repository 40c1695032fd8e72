import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from otafd import learner
from otafd.learner import Architecture, ModelParams
from otafd.validate import gradient_check


def test_zero_model_loss_frozen():
    # uniform softmax: CE = ln K; distillation term gamma * ||1/K - r||^2
    arch = Architecture(3, 4)
    p = ModelParams(np.zeros(arch.dim), arch)
    x = np.ones((2, 3))
    r = np.eye(4)
    got = learner.loss(p, x, [1, 3], r, 0.5)
    assert got == pytest.approx(math.log(4) + 0.5 * (0.75**2 + 3 * 0.0625), rel=1e-14)


def test_large_logits_stable():
    arch = Architecture(1, 2)
    p = ModelParams(np.array([1000.0, -1000.0, 0.0, 0.0]), arch)
    v = learner.loss(p, np.array([[1.0]]), [2], np.full((2, 2), 0.5), 0.1)
    assert math.isfinite(v) and v == pytest.approx(2000.0 + 0.1 * 0.5, rel=1e-12)


def test_softmax_rows_sum_to_one(rng):
    p = learner.softmax(rng.normal(scale=50, size=(100, 7)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, rtol=1e-14)


@pytest.mark.parametrize("hidden", [None, 3])
def test_gradient_finite_differences(rng, hidden):
    for _ in range(10):
        arch = Architecture(4, 3, hidden)
        params = ModelParams(rng.normal(size=arch.dim), arch)
        err = gradient_check(params, rng.normal(size=(8, 4)), rng.integers(1, 4, 8), rng.normal(size=(3, 3)), 0.7)
        assert err <= 1e-5


def test_gradient_gamma_zero_is_cross_entropy(rng):
    arch = Architecture(2, 3)
    params = ModelParams(rng.normal(size=arch.dim), arch)
    x, v = rng.normal(size=(5, 2)), rng.integers(1, 4, 5)
    g0 = learner.gradient(params, x, v, rng.normal(size=(3, 3)), 0.0)
    g1 = learner.gradient(params, x, v, np.zeros((3, 3)), 0.0)
    np.testing.assert_array_equal(g0, g1)


def test_learning_rate():
    assert learner.learning_rate(1, 0.01) == 0.01
    assert learner.learning_rate(4, 0.01) == pytest.approx(0.005)
    np.testing.assert_allclose(learner.learning_rate(np.array([1, 100]), 1.0), [1.0, 0.1])
    with pytest.raises(ValueError):
        learner.learning_rate(0, 0.01)


def test_sgd_step():
    arch = Architecture(1, 2)
    p = ModelParams(np.ones(arch.dim), arch)
    out = learner.sgd_step(p, np.full(arch.dim, 2.0), 4, 0.1)
    np.testing.assert_allclose(out.theta, 1 - 0.05 * 2)
    with pytest.raises(ValueError):
        learner.sgd_step(p, np.ones(3), 1, 0.1)


def test_predict_and_evaluate():
    arch = Architecture(2, 2)
    # logits = x @ I
    p = ModelParams(np.array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]), arch)
    x = np.array([[2.0, 0.0], [0.0, 3.0], [1.0, 1.0]])
    np.testing.assert_array_equal(learner.predict(p, x), [1, 2, 1])
    assert learner.evaluate(p, x, [1, 2, 2]) == pytest.approx(2 / 3)


def test_input_validation():
    arch = Architecture(2, 2)
    p = ModelParams(np.zeros(arch.dim), arch)
    with pytest.raises(ValueError):
        learner.loss(p, np.zeros((2, 3)), [1, 1], np.eye(2), 0.1)
    with pytest.raises(ValueError):
        learner.loss(p, np.zeros((2, 2)), [1], np.eye(2), 0.1)
    with pytest.raises(ValueError):
        learner.loss(p, np.zeros((2, 2)), [1, 2], np.eye(3), 0.1)
    with pytest.raises(ValueError):
        ModelParams(np.zeros(5), arch)


def test_training_reduces_loss(rng):
    arch = Architecture(2, 2)
    x = np.vstack([rng.normal(-2, 1, (50, 2)), rng.normal(2, 1, (50, 2))])
    v = np.repeat([1, 2], 50)
    r = np.eye(2)
    p = learner.init_params(arch, rng)
    start = learner.loss(p, x, v, r, 0.1)
    for t in range(1, 51):
        p = learner.sgd_step(p, learner.gradient(p, x, v, r, 0.1), t, 0.1)
    assert learner.loss(p, x, v, r, 0.1) < start
    assert learner.evaluate(p, x, v) > 0.9


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([None, 2, 5]))
def test_checkpoint_roundtrip(tmp_path_factory, seed, hidden):
    rng = np.random.default_rng(seed)
    arch = Architecture(3, 4, hidden)
    p = ModelParams(rng.normal(size=arch.dim), arch)
    path = tmp_path_factory.mktemp("ckpt") / "m.bin"
    learner.save_params(p, path, seed=seed)
    q, header = learner.load_params(path)
    assert q.arch == arch and header["seed"] == seed
    np.testing.assert_array_equal(q.theta, p.theta)


def test_checkpoint_truncated(tmp_path):
    arch = Architecture(2, 2)
    path = tmp_path / "m.bin"
    learner.save_params(ModelParams(np.zeros(arch.dim), arch), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ValueError):
        learner.load_params(path)
    path.write_bytes(b"\x01")
    with pytest.raises(ValueError):
        learner.load_params(path)
