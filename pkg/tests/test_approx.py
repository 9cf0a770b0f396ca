import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from gpirl import approx
from gpirl.errors import UsageError

SIZES = [(4, (16,), 3), (6, (8, 8), 4), (16, (32, 16), 4)]


def net(sizes, seed=0):
    spec = approx.MlpSpec(*sizes)
    return spec, approx.init_params(spec, np.random.default_rng(seed))


def test_spec_layout_and_descriptor():
    spec = approx.MlpSpec(16, (64, 64), 4)
    assert spec.n_params == 16 * 64 + 64 + 64 * 64 + 64 + 64 * 4 + 4
    assert spec.descriptor() == "16-64-64-4:tanh"
    assert approx.MlpSpec.from_descriptor("16-64-64-4:tanh") == spec
    with pytest.raises(UsageError):
        approx.MlpSpec(0, (4,), 2)
    with pytest.raises(UsageError):
        approx.MlpSpec(2, (4,), 2, activation="relu")


def test_init_within_fan_in_bound():
    spec, params = net((9, (25,), 3))
    (w0, b0), (w1, b1) = approx.unpack(spec, params)
    assert np.max(np.abs(w0)) <= 1 / 3 and np.max(np.abs(w1)) <= 1 / 5
    assert w0.shape == (25, 9) and b1.shape == (3,)


def test_unpack_returns_views():
    spec, params = net((2, (3,), 1))
    w0, _ = approx.unpack(spec, params)[0]
    w0[0, 0] = 123.0
    assert params[0] == 123.0


def test_forward_matches_hand_computation():
    spec = approx.MlpSpec(2, (2,), 1)
    params = np.array([1.0, 0.0, 0.0, 1.0, 0.5, -0.5, 2.0, -1.0, 0.25])
    x = np.array([0.3, -0.1])
    h = np.tanh(x + np.array([0.5, -0.5]))
    expected = 2.0 * h[0] - h[1] + 0.25
    assert approx.forward(spec, params, x)[0] == pytest.approx(expected, abs=1e-15)


def test_batch_and_single_inputs_agree():
    spec, params = net(SIZES[1])
    x = np.random.default_rng(1).normal(size=(5, 6))
    batch = approx.forward(spec, params, x)
    for i in range(5):
        assert np.allclose(approx.forward(spec, params, x[i]), batch[i], rtol=0, atol=1e-14)
    with pytest.raises(UsageError):
        approx.forward(spec, params, np.zeros(5))


@pytest.mark.parametrize("sizes", SIZES)
def test_backward_matches_finite_differences(sizes):
    spec, params = net(sizes)
    gen = np.random.default_rng(2)
    x = gen.normal(size=(4, spec.input_dim))
    w = gen.normal(size=(4, spec.output_dim))

    def fn(p):
        return float(np.sum(w * approx.forward(spec, p, x))), approx.backward(spec, p, x, w)

    assert approx.finite_diff_check(spec, params, fn) <= 1e-6


@pytest.mark.parametrize("sizes", SIZES)
def test_logprob_and_entropy_gradients(sizes):
    spec, params = net(sizes, seed=3)
    gen = np.random.default_rng(4)
    x = gen.normal(size=(6, spec.input_dim))
    a = gen.integers(0, spec.output_dim, size=6)

    def lp(p):
        v, g = approx.logprob_and_grad(spec, p, x, a)
        return float(np.sum(v)), g

    def ent(p):
        v, g = approx.entropy_and_grad(spec, p, x)
        return float(np.sum(v)), g

    assert approx.finite_diff_check(spec, params, lp) <= 1e-4
    assert approx.finite_diff_check(spec, params, ent) <= 1e-4


def test_finite_diff_check_catches_wrong_gradient():
    spec, params = net(SIZES[0])
    x = np.ones(4)

    def wrong(p):
        v, g = approx.logprob_and_grad(spec, p, x, 0)
        return float(v), 2.0 * g

    assert approx.finite_diff_check(spec, params, wrong) > 0.4


@given(hnp.arrays(float, (3, 5), elements=st.floats(-50, 50)))
@settings(max_examples=100, deadline=None)
def test_softmax_normalised_and_shift_invariant(logits):
    p = approx.softmax(logits)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(approx.softmax(logits + 7.0), p, atol=1e-12)
    assert np.allclose(np.exp(approx.log_softmax(logits)), p, atol=1e-12)


def test_softmax_survives_huge_logits():
    p = approx.softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(p)) and p[0] == 1.0


def test_entropy_extremes():
    h, _ = approx.entropy_of_logits(np.zeros((1, 4)))
    assert h[0] == pytest.approx(np.log(4), abs=1e-15)
    h, dh = approx.entropy_of_logits(np.array([[0.0, 0.0, 0.0, 0.0]]))
    assert np.max(np.abs(dh)) <= 1e-15
    h, _ = approx.entropy_of_logits(np.array([[800.0, 0.0, 0.0, 0.0]]))
    assert h[0] == pytest.approx(0.0, abs=1e-12)


def test_logprob_action_range():
    spec, params = net(SIZES[0])
    with pytest.raises(UsageError):
        approx.logprob_and_grad(spec, params, np.zeros(4), 3)


def test_sgd_step_direction():
    p = np.array([1.0, 2.0])
    g = np.array([0.5, -1.0])
    assert approx.sgd_step(p, g, 0.1).tolist() == pytest.approx([0.95, 2.1])
    assert approx.sgd_step(p, g, 0.1, maximize=True).tolist() == pytest.approx([1.05, 1.9])
    with pytest.raises(UsageError):
        approx.sgd_step(p, g, 0.0)


def test_adam_minimises_quadratic():
    opt = approx.Optimizer("adam", 2)
    p = np.array([3.0, -2.0])
    for _ in range(2000):
        p = opt.step(p, 2 * p, 0.05)
    assert np.max(np.abs(p)) < 1e-2
    first = approx.Adam(1).step(np.array([1.0]), np.array([10.0]), 0.1)
    assert first[0] == pytest.approx(0.9, abs=1e-6)
    with pytest.raises(UsageError):
        approx.Optimizer("rmsprop", 2)


def test_checkpoint_round_trip_is_exact():
    spec, params = net(SIZES[2])
    text = approx.save_checkpoint(spec, params)
    assert text.startswith("CKPT v1 16-32-16-4:tanh ")
    spec2, params2 = approx.load_checkpoint(text)
    assert spec2 == spec and np.array_equal(params2, params)


def test_checkpoint_rejects_garbage():
    with pytest.raises(UsageError):
        approx.load_checkpoint("hello")
    spec, params = net(SIZES[0])
    lines = approx.save_checkpoint(spec, params).splitlines()
    with pytest.raises(UsageError):
        approx.load_checkpoint("\n".join(lines[:-1]))
