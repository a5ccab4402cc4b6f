import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import EmptySequenceError, InconsistentStateError, InvalidLabelError, InvalidShapeError
from slu.nn_core import (
    ParamSpec,
    ParamStore,
    adamw_step,
    clip_grad_norm,
    conv1d_backward,
    conv1d_forward,
    conv1d_output_length,
    cross_entropy,
    finite_diff_check,
    finite_diff_report,
    gelu,
    gelu_grad,
    init_params,
    linear_backward,
    linear_forward,
    log_softmax,
    maxpool_time,
    maxpool_time_backward,
    softmax,
    softmax_backward,
)


def _single(name: str, value) -> ParamStore:
    store = ParamStore()
    store.add(name, np.asarray(value, dtype=np.float64))
    store.zero_grad()
    return store


# ── linear ──────────────────────────────────────────────────
def test_linear_identity():
    assert_array_equal(linear_forward(np.array([1.0, 0.0]), np.eye(2), np.zeros(2)), [1.0, 0.0])


def test_linear_hand_arithmetic():
    assert_allclose(linear_forward(np.array([2.0, 3.0]), np.array([[1.0, 1.0]]), np.array([0.5])), [5.5])


def test_linear_matches_triple_loop(rng):
    weight = rng.normal(size=(4, 3))
    bias = rng.normal(size=4)
    x = rng.normal(size=3)
    expected = [sum(weight[i, j] * x[j] for j in range(3)) + bias[i] for i in range(4)]
    assert_allclose(linear_forward(x, weight, bias), expected, atol=1e-12)


def test_linear_batch_matches_per_frame(rng):
    weight, bias = rng.normal(size=(5, 3)), rng.normal(size=5)
    frames = rng.normal(size=(3, 3))
    batched = linear_forward(frames, weight, bias)
    for t in range(3):
        assert_allclose(batched[t], linear_forward(frames[t], weight, bias), atol=1e-15)


def test_linear_shape_mismatch():
    with pytest.raises(InvalidShapeError):
        linear_forward(np.ones(3), np.ones((2, 4)), np.zeros(2))


def test_linear_backward_against_finite_differences(rng):
    x = rng.normal(size=(4, 3))
    store = ParamStore()
    store.add("weight", rng.normal(size=(2, 3)))
    store.add("bias", rng.normal(size=2))
    store.zero_grad()
    target = rng.normal(size=(4, 2))

    def loss_fn(s):
        out = linear_forward(x, s["weight"], s["bias"])
        diff = out - target
        _, dw, db = linear_backward(x, s["weight"], diff)
        s.set_grad("weight", dw)
        s.set_grad("bias", db)
        return 0.5 * float(np.sum(diff ** 2))

    assert finite_diff_check(loss_fn, store) < 1e-5


# ── activations ─────────────────────────────────────────────
@pytest.mark.parametrize(
    "x, expected, tol",
    [(0.0, 0.0, 0.0), (10.0, 10.0, 1e-6), (1.0, 0.841345, 1e-5)],
)
def test_gelu_values(x, expected, tol):
    assert abs(float(gelu(np.array(x))) - expected) <= tol


def test_gelu_grad_matches_central_difference():
    xs = np.linspace(-3.0, 3.0, 13)
    h = 1e-6
    numeric = (gelu(xs + h) - gelu(xs - h)) / (2 * h)
    assert_allclose(gelu_grad(xs), numeric, atol=1e-8)


def test_softmax_uniform():
    assert_allclose(softmax(np.zeros(4)), [0.25] * 4)


def test_softmax_shift_invariant():
    for c in (-50.0, 0.0, 3.5, 700.0):
        assert_allclose(softmax(np.array([c + 5.0, c])), softmax(np.array([5.0, 0.0])), atol=1e-15)


def test_softmax_values():
    assert_allclose(softmax(np.array([1.0, 2.0])), [0.268941, 0.731059], atol=1e-6)


def test_log_softmax_rows_normalised(rng):
    log_probs = log_softmax(rng.normal(size=(5, 4)) * 30)
    assert_allclose(np.exp(log_probs).sum(axis=1), np.ones(5), atol=1e-12)


def test_softmax_backward_matches_jacobian(rng):
    logits = rng.normal(size=4)
    probs = softmax(logits)
    upstream = rng.normal(size=4)
    jacobian = np.diag(probs) - np.outer(probs, probs)
    assert_allclose(softmax_backward(probs, upstream), jacobian.T @ upstream, atol=1e-14)


# ── pooling ─────────────────────────────────────────────────
def test_maxpool_values_and_argmax():
    out, argmax = maxpool_time(np.array([[1.0, 5.0], [3.0, 2.0]]))
    assert_array_equal(out, [3.0, 5.0])
    assert_array_equal(argmax, [1, 0])


def test_maxpool_single_frame():
    out, argmax = maxpool_time(np.array([[7.0, -1.0]]))
    assert_array_equal(out, [7.0, -1.0])
    assert_array_equal(argmax, [0, 0])


def test_maxpool_tie_goes_to_earliest_frame():
    _, argmax = maxpool_time(np.array([[2.0, 0.0], [2.0, 0.0]]))
    assert_array_equal(argmax, [0, 0])


def test_maxpool_empty_sequence():
    with pytest.raises(EmptySequenceError):
        maxpool_time(np.zeros((0, 3)))


def test_maxpool_backward_routes_to_argmax():
    grad = maxpool_time_backward(np.array([1.5, -2.0]), np.array([1, 0]), 3)
    assert_array_equal(grad, [[0.0, -2.0], [1.5, 0.0], [0.0, 0.0]])


# ── convolution ─────────────────────────────────────────────
@pytest.mark.parametrize("num_frames, stride, expected", [(10, 2, 5), (11, 2, 6), (7, 1, 7), (1, 3, 1)])
def test_conv_output_length(num_frames, stride, expected):
    assert conv1d_output_length(num_frames, stride) == expected


def test_conv_identity_kernel(rng):
    x = rng.normal(size=(6, 3))
    weight = np.eye(3)[:, :, None]
    assert_allclose(conv1d_forward(x, weight, np.zeros(3), 1), x, atol=1e-15)


def test_conv_right_padding_and_stride():
    x = np.arange(1.0, 6.0)[:, None]         # 5 frames, one channel
    weight = np.ones((1, 1, 3))
    out = conv1d_forward(x, weight, np.zeros(1), 2)
    # windows start at 0, 2, 4 with zero frames past the end
    assert_allclose(out[:, 0], [1 + 2 + 3, 3 + 4 + 5, 5])


def test_conv_centered_padding_and_stride():
    x = np.arange(1.0, 6.0)[:, None]
    weight = np.ones((1, 1, 3))
    out = conv1d_forward(x, weight, np.zeros(1), 2, left_pad=1)
    # one zero frame before, one after
    assert_allclose(out[:, 0], [0 + 1 + 2, 2 + 3 + 4, 4 + 5 + 0])


@pytest.mark.parametrize("num_frames, stride", [(10, 2), (11, 2), (7, 1), (1, 3)])
def test_centered_conv_keeps_output_length(num_frames, stride, rng):
    out = conv1d_forward(rng.normal(size=(num_frames, 2)), rng.normal(size=(3, 2, 5)), np.zeros(3), stride, left_pad=2)
    assert out.shape == (conv1d_output_length(num_frames, stride), 3)


@pytest.mark.parametrize("left_pad", [-1, 3])
def test_conv_left_pad_outside_kernel(left_pad):
    with pytest.raises(InvalidShapeError):
        conv1d_forward(np.ones((4, 1)), np.ones((1, 1, 3)), np.zeros(1), 1, left_pad=left_pad)


@pytest.mark.parametrize("left_pad", [0, 1, 2])
def test_conv_backward_against_finite_differences(left_pad, rng):
    x = rng.normal(size=(7, 3))
    target = rng.normal(size=(4, 2))
    store = ParamStore()
    store.add("weight", rng.normal(size=(2, 3, 3)))
    store.add("bias", rng.normal(size=2))
    store.add("x", x)
    store.zero_grad()

    def loss_fn(s):
        out = conv1d_forward(s["x"], s["weight"], s["bias"], 2, left_pad)
        diff = out - target
        dx, dw, db = conv1d_backward(s["x"], s["weight"], 2, diff, left_pad)
        s.set_grad("weight", dw)
        s.set_grad("bias", db)
        s.set_grad("x", dx)
        return 0.5 * float(np.sum(diff ** 2))

    assert finite_diff_check(loss_fn, store) < 1e-5


# ── cross entropy ───────────────────────────────────────────
def test_cross_entropy_uniform():
    loss, _ = cross_entropy(np.zeros(4), 2)
    assert loss == pytest.approx(math.log(4), abs=1e-6)


def test_cross_entropy_saturated():
    loss, _ = cross_entropy(np.array([100.0, 0.0]), 0)
    assert loss == pytest.approx(0.0, abs=1e-9)


def test_cross_entropy_value():
    loss, grad = cross_entropy(np.array([1.0, 2.0, 3.0]), 1)
    assert loss == pytest.approx(1.407606, abs=1e-5)
    assert grad.sum() == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("label", [-1, 3])
def test_cross_entropy_label_out_of_range(label):
    with pytest.raises(InvalidLabelError):
        cross_entropy(np.zeros(3), label)


# ── optimizer ───────────────────────────────────────────────
def test_adamw_single_step():
    store = _single("p", [1.0])
    store.set_grad("p", np.array([1.0]))
    adamw_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01)
    assert store["p"][0] == pytest.approx(0.998990, abs=1e-6)


def test_adamw_zero_grad_zero_decay_keeps_param():
    store = _single("p", [0.7, -0.2])
    adamw_step(store, lr=1e-2, weight_decay=0.0)
    assert_array_equal(store["p"], [0.7, -0.2])


def test_adamw_sign_symmetry():
    plus, minus = _single("p", [0.5]), _single("p", [0.5])
    plus.set_grad("p", np.array([0.3]))
    minus.set_grad("p", np.array([-0.3]))
    adamw_step(plus, lr=1e-2, weight_decay=0.0)
    adamw_step(minus, lr=1e-2, weight_decay=0.0)
    assert plus["p"][0] - 0.5 == pytest.approx(-(minus["p"][0] - 0.5), abs=1e-15)


def test_adamw_missing_gradient():
    store = ParamStore()
    store.add("p", np.ones(2))
    with pytest.raises(InconsistentStateError):
        adamw_step(store, lr=1e-3)


def test_adamw_skips_frozen_names():
    store = ParamStore()
    store.add("a", np.ones(2))
    store.add("b", np.ones(2))
    store.zero_grad()
    store.set_grad("a", np.ones(2))
    store.set_grad("b", np.ones(2))
    adamw_step(store, lr=1e-2, names=["a"])
    assert_array_equal(store["b"], np.ones(2))
    assert store.state("b").step == 0
    assert store.state("a").step == 1


def test_clip_grad_norm_scales_to_max():
    store = _single("p", [0.0, 0.0])
    store.set_grad("p", np.array([30.0, 40.0]))
    before = clip_grad_norm(store, 5.0)
    assert before == pytest.approx(50.0)
    assert np.linalg.norm(store.grad("p")) == pytest.approx(5.0, rel=1e-9)


def test_clip_grad_norm_leaves_small_gradients():
    store = _single("p", [0.0])
    store.set_grad("p", np.array([0.5]))
    clip_grad_norm(store, 5.0)
    assert_array_equal(store.grad("p"), [0.5])


# ── initialisation ──────────────────────────────────────────
SPECS = [ParamSpec("w", (128, 128), 128, 128), ParamSpec("b", (128,))]


def test_init_is_deterministic():
    a, b = init_params(SPECS, seed=9), init_params(SPECS, seed=9)
    for name in a.names():
        assert_array_equal(a[name], b[name])


def test_init_zero_biases_and_centred_weights():
    store = init_params(SPECS, seed=9)
    assert not store["b"].any()
    assert abs(store["w"].mean()) < 0.01
    bound = math.sqrt(6.0 / 256)
    assert np.abs(store["w"]).max() <= bound


def test_init_rejects_zero_sized_layer():
    with pytest.raises(InvalidShapeError):
        init_params([ParamSpec("w", (0, 3), 3, 0)], seed=0)


# ── parameter store ─────────────────────────────────────────
def test_snapshot_restore_is_exact(rng):
    store = _single("p", rng.normal(size=3))
    saved = store.snapshot()
    store["p"] = np.zeros(3)
    store.restore(saved)
    assert_array_equal(store["p"], saved["p"])


def test_store_rejects_shape_change():
    store = _single("p", [1.0, 2.0])
    with pytest.raises(InvalidShapeError):
        store["p"] = np.zeros(3)


# ── gradient check ──────────────────────────────────────────
def test_finite_diff_quadratic():
    store = _single("theta", [3.0])

    def loss_fn(s):
        s.set_grad("theta", s["theta"].copy())
        return 0.5 * float(s["theta"][0] ** 2)

    assert finite_diff_check(loss_fn, store, h=1e-5) < 1e-8


def test_finite_diff_constant_loss():
    store = _single("theta", [1.0, -2.0])

    def loss_fn(s):
        s.set_grad("theta", np.zeros(2))
        return 4.0

    report = finite_diff_report(loss_fn, store)
    assert report.max_relative_error == 0.0
    assert report.checked == 2


def test_finite_diff_detects_wrong_gradient():
    store = _single("theta", [3.0])

    def loss_fn(s):
        s.set_grad("theta", -s["theta"])
        return 0.5 * float(s["theta"][0] ** 2)

    assert finite_diff_check(loss_fn, store) > 0.5
