import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from errors import DegenerateBatchError, InvalidShapeError, UtteranceTooShortError
from models import ConvLayerConfig, LossWeights, ModelConfig
from slu.nn_core import finite_diff_check, gelu, softmax
from slu.slu_model import (
    BagOfTokensClassifier,
    CascadePipeline,
    SluModel,
    acoustic_encode,
    architecture_hash,
    classify_label,
    frame_classify,
    select_tap,
    utterance_encode,
)

GRAD_CONFIG = dict(feature_dim=8, vocab_size=5, num_labels=6, encoder_hidden=8, utterance_hidden=16)


def _batch(rng):
    return [
        (rng.normal(size=(12, 8)), [0, 3, 1], 2),
        (rng.normal(size=(12, 8)), [4, 4], 5),
    ]


def _zero_params(model: SluModel) -> None:
    for name in model.params.names():
        model.params[name] = np.zeros_like(model.params[name])


# ── acoustic encoder ────────────────────────────────────────
def test_identity_encoder_is_gelu(rng):
    config = ModelConfig(
        feature_dim=3, vocab_size=2, num_labels=2, encoder_hidden=3,
        conv_layers=[ConvLayerConfig(kernel_width=1, stride=1)],
    )
    model = SluModel(config)
    model.params["encoder.conv0.weight"] = np.eye(3)[:, :, None]
    model.params["encoder.conv0.bias"] = np.zeros(3)
    X = rng.normal(size=(5, 3))
    H, _ = acoustic_encode(X, model.params, config)
    assert_allclose(H, gelu(X), atol=1e-15)


def test_stride_two_halves_frames(small_model_config, rng):
    model = SluModel(small_model_config)
    H, _ = acoustic_encode(rng.normal(size=(10, 8)), model.params, small_model_config)
    assert H.shape == (5, small_model_config.hidden_dim)


def _padding_model(conv_padding: str) -> tuple[SluModel, ModelConfig]:
    config = ModelConfig(
        feature_dim=3, vocab_size=2, num_labels=2, encoder_hidden=4,
        conv_layers=[ConvLayerConfig(kernel_width=3, stride=1)], conv_padding=conv_padding,
    )
    return SluModel(config, seed=2), config


def test_centered_padding_shows_the_first_frame_its_edge():
    model, config = _padding_model("centered")
    H, _ = acoustic_encode(np.ones((6, 3)), model.params, config)
    assert not np.allclose(H[0], H[2])
    assert_allclose(H[1], H[2], atol=1e-15)
    assert not np.allclose(H[-1], H[2])


def test_right_padding_hides_the_start():
    model, config = _padding_model("right")
    H, _ = acoustic_encode(np.ones((6, 3)), model.params, config)
    assert_allclose(H[0], H[2], atol=1e-15)
    assert not np.allclose(H[-1], H[2])


def test_unknown_padding_is_rejected():
    with pytest.raises(ValueError):
        ModelConfig(conv_padding="left")


def test_wrong_feature_dim(small_model_config, rng):
    model = SluModel(small_model_config)
    with pytest.raises(InvalidShapeError):
        acoustic_encode(rng.normal(size=(10, 7)), model.params, small_model_config)


def test_empty_utterance(small_model_config):
    model = SluModel(small_model_config)
    with pytest.raises(UtteranceTooShortError):
        acoustic_encode(np.zeros((0, 8)), model.params, small_model_config)


# ── frame classifier and tap ────────────────────────────────
def test_zero_weight_frame_classifier_outputs_bias(small_model_config, rng):
    model = SluModel(small_model_config)
    bias = rng.normal(size=small_model_config.num_classes)
    model.params["frame_classifier.weight"] = np.zeros_like(model.params["frame_classifier.weight"])
    model.params["frame_classifier.bias"] = bias
    logits = frame_classify(rng.normal(size=(4, small_model_config.hidden_dim)), model.params)
    assert_array_equal(logits, np.tile(bias, (4, 1)))


def test_frame_classifier_batch_matches_loop(small_model_config, rng):
    model = SluModel(small_model_config)
    H = rng.normal(size=(3, small_model_config.hidden_dim))
    batched = frame_classify(H, model.params)
    for t in range(3):
        assert_allclose(batched[t], frame_classify(H[t], model.params), atol=1e-15)


def test_tap_modes(rng):
    H, logits = rng.normal(size=(4, 8)), rng.normal(size=(4, 6))
    assert select_tap(H, logits, "hidden") is H
    probabilities = select_tap(H, logits, "probabilities")
    assert_allclose(probabilities.sum(axis=1), np.ones(4), atol=1e-12)
    assert_allclose(softmax(select_tap(H, logits, "logits"), axis=1), probabilities, atol=1e-15)


# ── utterance encoder and label classifier ──────────────────
def test_maxpool_of_constant_input(small_model_config, rng):
    model = SluModel(small_model_config)
    frame = rng.normal(size=small_model_config.tap_dim)
    constant = np.tile(frame, (5, 1))
    pooled, _ = utterance_encode(constant, model.params, small_model_config)
    single, _ = utterance_encode(frame[None, :], model.params, small_model_config)
    assert_array_equal(pooled, single)


def test_zero_weights_give_input_independent_embedding(small_model_config, rng):
    model = SluModel(small_model_config)
    for name in ("utterance.fc1.weight", "utterance.fc2.weight"):
        model.params[name] = np.zeros_like(model.params[name])
    a, _ = utterance_encode(rng.normal(size=(4, small_model_config.tap_dim)), model.params, small_model_config)
    b, _ = utterance_encode(rng.normal(size=(7, small_model_config.tap_dim)), model.params, small_model_config)
    assert_array_equal(a, b)


def test_zero_label_classifier_is_uniform(small_model_config, rng):
    model = SluModel(small_model_config)
    _zero_params(model)
    logits = classify_label(rng.normal(size=small_model_config.utterance_hidden), model.params)
    assert_allclose(softmax(logits), np.full(small_model_config.num_labels, 0.25))


# ── joint loss ──────────────────────────────────────────────
def test_joint_loss_arithmetic(small_model_config, rng):
    model = SluModel(small_model_config, seed=1)
    batch = [(rng.normal(size=(12, 8)), [0, 1], 3)]
    breakdown = model.joint_loss(batch, LossWeights(alpha_ctc=0.5, alpha_slu=1.0), compute_grad=False)
    assert breakdown.total == pytest.approx(0.5 * breakdown.ctc_mean + breakdown.slu_mean, rel=1e-12)


def test_asr_only_loss_is_half_ctc(small_model_config, rng):
    model = SluModel(small_model_config, seed=1)
    batch = [(rng.normal(size=(12, 8)), [0, 1], 3), (rng.normal(size=(10, 8)), [2], 0)]
    breakdown = model.joint_loss(batch, LossWeights(alpha_ctc=0.5, alpha_slu=0.0), compute_grad=False)
    assert breakdown.total == 0.5 * breakdown.ctc_mean


def test_infeasible_items_are_skipped(small_model_config, rng):
    model = SluModel(small_model_config, seed=1)
    short = (rng.normal(size=(4, 8)), [0, 0, 0], 1)      # 2 frames after subsampling
    ok = (rng.normal(size=(12, 8)), [0, 1], 3)
    breakdown = model.joint_loss([short, ok], LossWeights(), compute_grad=True)
    assert breakdown.skipped == 1
    assert breakdown.ctc_mean == pytest.approx(breakdown.ctc_losses[1])


def test_all_infeasible_without_slu_is_degenerate(small_model_config, rng):
    model = SluModel(small_model_config, seed=1)
    short = (rng.normal(size=(4, 8)), [0, 0, 0], 1)
    with pytest.raises(DegenerateBatchError):
        model.joint_loss([short], LossWeights(alpha_ctc=1.0, alpha_slu=0.0))


def test_empty_batch_is_degenerate(small_model_config):
    with pytest.raises(DegenerateBatchError):
        SluModel(small_model_config).joint_loss([], LossWeights())


def test_loss_is_linear_in_its_weights(rng):
    model = SluModel(ModelConfig(**GRAD_CONFIG), seed=1)
    batch = _batch(rng)
    single = model.joint_loss(batch, LossWeights(alpha_ctc=0.3, alpha_slu=0.7), compute_grad=False)
    double = model.joint_loss(batch, LossWeights(alpha_ctc=0.6, alpha_slu=1.4), compute_grad=False)
    assert double.total == pytest.approx(2.0 * single.total, rel=1e-12)


def test_zero_slu_weight_leaves_slu_gradients_zero(rng):
    model = SluModel(ModelConfig(**GRAD_CONFIG), seed=1)
    model.joint_loss(_batch(rng), LossWeights(alpha_ctc=1.0, alpha_slu=0.0))
    groups = model.parameter_groups()
    assert all(not model.params.grad(name).any() for name in groups["slu"])
    assert any(model.params.grad(name).any() for name in groups["asr"])


@pytest.mark.parametrize("tap_mode", ["logits", "hidden", "probabilities"])
def test_full_model_gradient(tap_mode, rng):
    model = SluModel(ModelConfig(tap_mode=tap_mode, **GRAD_CONFIG), seed=3)
    batch = _batch(rng)
    weights = LossWeights(alpha_ctc=0.5, alpha_slu=1.0)
    error = finite_diff_check(lambda store: model.joint_loss(batch, weights).total, model.params, subsample=150, seed=7)
    assert error < 1e-4


def test_cnn_encoder_gradient(rng):
    model = SluModel(ModelConfig(utterance_encoder="cnn", **GRAD_CONFIG), seed=3)
    batch = _batch(rng)
    error = finite_diff_check(lambda store: model.joint_loss(batch, LossWeights()).total, model.params, subsample=150, seed=7)
    assert error < 1e-4


def test_right_padded_model_gradient(rng):
    model = SluModel(ModelConfig(conv_padding="right", **GRAD_CONFIG), seed=3)
    batch = _batch(rng)
    error = finite_diff_check(lambda store: model.joint_loss(batch, LossWeights()).total, model.params, subsample=150, seed=7)
    assert error < 1e-4


def test_detached_tap_keeps_slu_gradient_out_of_trunk(rng):
    model = SluModel(ModelConfig(tap_detach=True, **GRAD_CONFIG), seed=3)
    model.joint_loss(_batch(rng), LossWeights(alpha_ctc=0.0, alpha_slu=1.0))
    groups = model.parameter_groups()
    assert all(not model.params.grad(name).any() for name in groups["asr"])
    assert any(model.params.grad(name).any() for name in groups["slu"])


def test_parameter_groups_partition_the_store(small_model_config):
    model = SluModel(small_model_config)
    groups = model.parameter_groups()
    assert sorted(groups["asr"] + groups["slu"]) == sorted(model.params.names())
    assert all(name.startswith(("encoder.", "frame_classifier.")) for name in groups["asr"])


def test_predict_returns_label_and_transcript(small_model_config, rng):
    label, decoded = SluModel(small_model_config).predict(rng.normal(size=(12, 8)))
    assert 0 <= label < small_model_config.num_labels
    assert all(0 <= t < small_model_config.vocab_size for t in decoded)


def test_architecture_hash_tracks_config(small_model_config):
    assert architecture_hash(small_model_config) == architecture_hash(small_model_config.model_copy())
    assert architecture_hash(small_model_config) != architecture_hash(
        small_model_config.model_copy(update={"tap_mode": "hidden"})
    )


def test_same_seed_same_model(small_model_config):
    a, b = SluModel(small_model_config, seed=4), SluModel(small_model_config, seed=4)
    for name in a.params.names():
        assert_array_equal(a.params[name], b.params[name])


# ── cascade ─────────────────────────────────────────────────
def test_bag_of_tokens_features():
    nlu = BagOfTokensClassifier(vocab_size=4, num_labels=2)
    assert_array_equal(nlu.features([1, 1, 3]), [0.0, 2.0, 0.0, 1.0])


def test_bag_of_tokens_gradient():
    nlu = BagOfTokensClassifier(vocab_size=4, num_labels=3, seed=2)
    batch = [([0, 1, 1], 2), ([3], 0), ([2, 3, 0], 1)]
    assert finite_diff_check(lambda store: nlu.loss(batch), nlu.params) < 1e-6


def test_cascade_predicts_from_decoded_transcript(small_model_config, rng):
    asr = SluModel(small_model_config)
    nlu = BagOfTokensClassifier(small_model_config.vocab_size, small_model_config.num_labels)
    X = rng.normal(size=(12, 8))
    label, decoded = CascadePipeline(asr, nlu).predict(X)
    assert decoded == asr.predict(X)[1]
    assert label == nlu.predict(decoded)
