"""
End-to-end SLU model: acoustic encoder -> frame classifier -> tap ->
utterance encoder -> label classifier, trained with
alpha_ctc * L_ctc + alpha_slu * L_slu.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from errors import ConfigError, DegenerateBatchError, InvalidShapeError, UtteranceTooShortError
from models import LossWeights, ModelConfig
from slu import ctc_core
from slu.nn_core import (
    Array,
    ParamSpec,
    ParamStore,
    conv1d_backward,
    conv1d_forward,
    cross_entropy,
    gelu,
    gelu_backward,
    init_params,
    linear_backward,
    linear_forward,
    log_softmax,
    maxpool_time,
    maxpool_time_backward,
    softmax,
    softmax_backward,
)

logger = logging.getLogger(__name__)

ASR_PREFIXES = ("encoder.", "frame_classifier.")
SLU_PREFIXES = ("utterance.", "label_classifier.")
CNN_UTTERANCE_KERNEL = 3

# one training triple (X, W, y)
Example = tuple[Array, Sequence[int], int]


def architecture_hash(config: ModelConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def param_specs(config: ModelConfig) -> list[ParamSpec]:
    specs: list[ParamSpec] = []
    channels = config.feature_dim
    for i, layer in enumerate(config.conv_layers):
        out = layer.out_channels or config.encoder_hidden
        k = layer.kernel_width
        specs.append(ParamSpec(f"encoder.conv{i}.weight", (out, channels, k), channels * k, out * k))
        specs.append(ParamSpec(f"encoder.conv{i}.bias", (out,)))
        channels = out

    specs.append(ParamSpec("frame_classifier.weight", (config.num_classes, channels), channels, config.num_classes))
    specs.append(ParamSpec("frame_classifier.bias", (config.num_classes,)))

    units = config.utterance_hidden
    tap_dim = config.tap_dim
    if config.utterance_encoder == "maxpool":
        specs.append(ParamSpec("utterance.fc1.weight", (units, tap_dim), tap_dim, units))
        specs.append(ParamSpec("utterance.fc1.bias", (units,)))
        specs.append(ParamSpec("utterance.fc2.weight", (units, units), units, units))
        specs.append(ParamSpec("utterance.fc2.bias", (units,)))
    else:
        k = CNN_UTTERANCE_KERNEL
        specs.append(ParamSpec("utterance.conv0.weight", (units, tap_dim, k), tap_dim * k, units * k))
        specs.append(ParamSpec("utterance.conv0.bias", (units,)))
        specs.append(ParamSpec("utterance.conv1.weight", (units, units, k), units * k, units * k))
        specs.append(ParamSpec("utterance.conv1.bias", (units,)))

    specs.append(ParamSpec("label_classifier.weight", (config.num_labels, units), units, config.num_labels))
    specs.append(ParamSpec("label_classifier.bias", (config.num_labels,)))
    return specs


# ---------------------------------------------------------
# Stages
# ---------------------------------------------------------
@dataclass
class ConvCache:
    inputs: Array
    preact: Array
    stride: int
    left_pad: int = 0


def acoustic_encode(X: Array, params: ParamStore, config: ModelConfig) -> tuple[Array, list[ConvCache]]:
    """Stack of temporal convolutions, each followed by GELU. Returns H (T', h) and the caches for backward."""
    if X.ndim != 2 or X.shape[1] != config.feature_dim:
        raise InvalidShapeError(f"expected frames (T, {config.feature_dim}), got {X.shape}")
    if X.shape[0] < 1:
        raise UtteranceTooShortError("utterance has no frames")
    x = X
    caches = []
    for i, layer in enumerate(config.conv_layers):
        left_pad = config.left_pad(layer.kernel_width)
        z = conv1d_forward(
            x, params[f"encoder.conv{i}.weight"], params[f"encoder.conv{i}.bias"], layer.stride, left_pad
        )
        caches.append(ConvCache(x, z, layer.stride, left_pad))
        x = gelu(z)
    if x.shape[0] < 1:
        raise UtteranceTooShortError(f"{X.shape[0]} frames leave no frames after subsampling")
    return x, caches


def frame_classify(H: Array, params: ParamStore) -> Array:
    """Pre-softmax per-frame logits W h_i + b, shape (T', V + 1)."""
    return linear_forward(H, params["frame_classifier.weight"], params["frame_classifier.bias"])


def select_tap(H: Array, frame_logits: Array, mode: str) -> Array:
    if mode == "hidden":
        return H
    if mode == "logits":
        return frame_logits
    if mode == "probabilities":
        return softmax(frame_logits, axis=1)
    raise ConfigError(f"unknown tap mode: {mode}")


@dataclass
class UtteranceCache:
    pool_argmax: np.ndarray
    num_frames: int
    pool: Optional[Array] = None
    z1: Optional[Array] = None
    a1: Optional[Array] = None
    z2: Optional[Array] = None
    convs: list[ConvCache] = field(default_factory=list)


def utterance_encode(H_u: Array, params: ParamStore, config: ModelConfig) -> tuple[Array, UtteranceCache]:
    """maxpool over time then two GELU dense layers; the cnn variant is two GELU temporal convs then maxpool."""
    if config.utterance_encoder == "maxpool":
        pool, argmax = maxpool_time(H_u)
        z1 = linear_forward(pool, params["utterance.fc1.weight"], params["utterance.fc1.bias"])
        a1 = gelu(z1)
        z2 = linear_forward(a1, params["utterance.fc2.weight"], params["utterance.fc2.bias"])
        cache = UtteranceCache(argmax, H_u.shape[0], pool=pool, z1=z1, a1=a1, z2=z2)
        return gelu(z2), cache

    x = H_u
    convs = []
    left_pad = config.left_pad(CNN_UTTERANCE_KERNEL)
    for i in range(2):
        z = conv1d_forward(x, params[f"utterance.conv{i}.weight"], params[f"utterance.conv{i}.bias"], 1, left_pad)
        convs.append(ConvCache(x, z, 1, left_pad))
        x = gelu(z)
    pool, argmax = maxpool_time(x)
    return pool, UtteranceCache(argmax, x.shape[0], convs=convs)


def classify_label(h_utt: Array, params: ParamStore) -> Array:
    return linear_forward(h_utt, params["label_classifier.weight"], params["label_classifier.bias"])


@dataclass
class ForwardTrace:
    X: Array
    encoder: list[ConvCache]
    H: Array
    frame_logits: Array
    tap: Array
    utterance: UtteranceCache
    h_utt: Array
    label_logits: Array


@dataclass
class LossBreakdown:
    total: float
    ctc_mean: Optional[float]        # None when every item was CTC-infeasible
    slu_mean: float
    ctc_losses: list[float]
    slu_losses: list[float]
    skipped: int = 0


# ---------------------------------------------------------
# Model
# ---------------------------------------------------------
class SluModel:
    def __init__(self, config: ModelConfig, params: Optional[ParamStore] = None, seed: int = 0):
        self.config = config
        self.params = params if params is not None else init_params(param_specs(config), seed)

    @property
    def blank(self) -> int:
        return self.config.vocab_size

    def parameter_groups(self) -> dict[str, list[str]]:
        names = self.params.names()
        return {
            "asr": [n for n in names if n.startswith(ASR_PREFIXES)],
            "slu": [n for n in names if n.startswith(SLU_PREFIXES)],
        }

    def forward(self, X: Array) -> ForwardTrace:
        H, encoder = acoustic_encode(X, self.params, self.config)
        frame_logits = frame_classify(H, self.params)
        tap = select_tap(H, frame_logits, self.config.tap_mode)
        h_utt, utterance = utterance_encode(tap, self.params, self.config)
        label_logits = classify_label(h_utt, self.params)
        return ForwardTrace(X, encoder, H, frame_logits, tap, utterance, h_utt, label_logits)

    def frame_logits(self, X: Array) -> Array:
        H, _ = acoustic_encode(X, self.params, self.config)
        return frame_classify(H, self.params)

    def predict(self, X: Array) -> tuple[int, list[int]]:
        trace = self.forward(X)
        return int(np.argmax(trace.label_logits)), ctc_core.greedy_decode(trace.frame_logits)

    # ── backward ────────────────────────────────────────────
    def _utterance_backward(self, trace: ForwardTrace, d_h_utt: Array) -> Array:
        params = self.params
        cache = trace.utterance
        if self.config.utterance_encoder == "maxpool":
            d_z2 = gelu_backward(cache.z2, d_h_utt)
            d_a1, dW2, db2 = linear_backward(cache.a1, params["utterance.fc2.weight"], d_z2)
            params.accumulate("utterance.fc2.weight", dW2)
            params.accumulate("utterance.fc2.bias", db2)
            d_z1 = gelu_backward(cache.z1, d_a1)
            d_pool, dW1, db1 = linear_backward(cache.pool, params["utterance.fc1.weight"], d_z1)
            params.accumulate("utterance.fc1.weight", dW1)
            params.accumulate("utterance.fc1.bias", db1)
            return maxpool_time_backward(d_pool, cache.pool_argmax, cache.num_frames)

        d_x = maxpool_time_backward(d_h_utt, cache.pool_argmax, cache.num_frames)
        for i in reversed(range(len(cache.convs))):
            conv = cache.convs[i]
            d_z = gelu_backward(conv.preact, d_x)
            d_x, dW, db = conv1d_backward(
                conv.inputs, params[f"utterance.conv{i}.weight"], 1, d_z, conv.left_pad
            )
            params.accumulate(f"utterance.conv{i}.weight", dW)
            params.accumulate(f"utterance.conv{i}.bias", db)
        return d_x

    def backward(
        self,
        trace: ForwardTrace,
        d_frame_logits: Optional[Array],
        d_label_logits: Optional[Array],
        update_trunk: bool = True,
    ) -> Array:
        """Accumulate parameter gradients; returns the gradient w.r.t. the input frames."""
        params = self.params
        d_H = np.zeros_like(trace.H)
        d_logits = np.zeros_like(trace.frame_logits) if d_frame_logits is None else d_frame_logits.copy()

        if d_label_logits is not None:
            d_h_utt, dWu, dbu = linear_backward(trace.h_utt, params["label_classifier.weight"], d_label_logits)
            params.accumulate("label_classifier.weight", dWu)
            params.accumulate("label_classifier.bias", dbu)
            d_tap = self._utterance_backward(trace, d_h_utt)
            if not self.config.tap_detach:
                mode = self.config.tap_mode
                if mode == "hidden":
                    d_H += d_tap
                elif mode == "logits":
                    d_logits += d_tap
                else:
                    d_logits += softmax_backward(trace.tap, d_tap)

        if not update_trunk:
            return np.zeros_like(trace.X)

        d_H_frames, dWf, dbf = linear_backward(trace.H, params["frame_classifier.weight"], d_logits)
        params.accumulate("frame_classifier.weight", dWf)
        params.accumulate("frame_classifier.bias", dbf)
        d_H += d_H_frames

        d_x = d_H
        for i in reversed(range(len(trace.encoder))):
            conv = trace.encoder[i]
            d_z = gelu_backward(conv.preact, d_x)
            d_x, dW, db = conv1d_backward(
                conv.inputs, params[f"encoder.conv{i}.weight"], conv.stride, d_z, conv.left_pad
            )
            params.accumulate(f"encoder.conv{i}.weight", dW)
            params.accumulate(f"encoder.conv{i}.bias", db)
        return d_x

    # ── loss ────────────────────────────────────────────────
    def joint_loss(
        self,
        batch: Sequence[Example],
        weights: LossWeights,
        compute_grad: bool = True,
        update_trunk: bool = True,
    ) -> LossBreakdown:
        """
        alpha_ctc * mean CTC loss over feasible items + alpha_slu * mean cross entropy.
        With compute_grad the store's gradients are zeroed and refilled.
        """
        if not batch:
            raise DegenerateBatchError("empty batch")

        traces = [self.forward(X) for X, _, _ in batch]
        need_ctc_grad = compute_grad and weights.alpha_ctc > 0 and update_trunk
        ctc_losses: list[float] = []
        ctc_grads: list[Optional[Array]] = []
        for trace, (_, transcript, _) in zip(traces, batch):
            if need_ctc_grad:
                loss, grad = ctc_core.ctc_loss_and_grad(trace.frame_logits, transcript)
            else:
                log_likelihood, _ = ctc_core.ctc_log_likelihood(log_softmax(trace.frame_logits), transcript)
                loss, grad = -log_likelihood, None
            ctc_losses.append(loss)
            ctc_grads.append(grad)

        feasible = [i for i, loss in enumerate(ctc_losses) if np.isfinite(loss)]
        skipped = len(batch) - len(feasible)
        if skipped:
            logger.warning("CTC: skipped %d infeasible item(s) of %d", skipped, len(batch))
        if not feasible and weights.alpha_slu == 0:
            raise DegenerateBatchError("every item in the batch is CTC-infeasible and alpha_slu is 0")

        slu_results = [cross_entropy(trace.label_logits, label) for trace, (_, _, label) in zip(traces, batch)]
        slu_losses = [loss for loss, _ in slu_results]
        slu_mean = float(np.mean(slu_losses))
        ctc_mean = float(np.mean([ctc_losses[i] for i in feasible])) if feasible else None
        if ctc_mean is None:
            logger.warning("CTC: no feasible item in batch, CTC component dropped")
            total = weights.alpha_slu * slu_mean
        else:
            total = weights.alpha_ctc * ctc_mean + weights.alpha_slu * slu_mean

        if compute_grad:
            self.params.zero_grad()
            ctc_scale = weights.alpha_ctc / len(feasible) if feasible else 0.0
            slu_scale = weights.alpha_slu / len(batch)
            for i, trace in enumerate(traces):
                grad = ctc_grads[i]
                d_frame = ctc_scale * grad if grad is not None and ctc_scale > 0 else None
                d_label = slu_scale * slu_results[i][1] if slu_scale > 0 else None
                if d_frame is None and d_label is None:
                    continue
                self.backward(trace, d_frame, d_label, update_trunk=update_trunk)

        return LossBreakdown(total, ctc_mean, slu_mean, ctc_losses, slu_losses, skipped)


# ---------------------------------------------------------
# Cascade: greedy transcript -> bag of token counts -> linear
# ---------------------------------------------------------
class BagOfTokensClassifier:
    def __init__(self, vocab_size: int, num_labels: int, seed: int = 0):
        self.vocab_size = vocab_size
        self.num_labels = num_labels
        self.params = init_params(
            [
                ParamSpec("cascade.weight", (num_labels, vocab_size), vocab_size, num_labels),
                ParamSpec("cascade.bias", (num_labels,)),
            ],
            seed,
        )

    def features(self, transcript: Sequence[int]) -> Array:
        return np.bincount(np.asarray(transcript, dtype=np.int64), minlength=self.vocab_size).astype(np.float64)

    def logits(self, transcript: Sequence[int]) -> Array:
        return linear_forward(self.features(transcript), self.params["cascade.weight"], self.params["cascade.bias"])

    def predict(self, transcript: Sequence[int]) -> int:
        return int(np.argmax(self.logits(transcript)))

    def loss(self, batch: Sequence[tuple[Sequence[int], int]], compute_grad: bool = True) -> float:
        """Mean cross entropy over (decoded transcript, label) pairs."""
        if compute_grad:
            self.params.zero_grad()
        losses = []
        for transcript, label in batch:
            x = self.features(transcript)
            logits = linear_forward(x, self.params["cascade.weight"], self.params["cascade.bias"])
            loss, d_logits = cross_entropy(logits, label)
            losses.append(loss)
            if compute_grad:
                _, dW, db = linear_backward(x, self.params["cascade.weight"], d_logits / len(batch))
                self.params.accumulate("cascade.weight", dW)
                self.params.accumulate("cascade.bias", db)
        return float(np.mean(losses))


class CascadePipeline:
    """Decode-then-classify system behind the same predict() as SluModel."""

    def __init__(self, asr: SluModel, nlu: BagOfTokensClassifier):
        self.asr = asr
        self.nlu = nlu

    def predict(self, X: Array) -> tuple[int, list[int]]:
        decoded = ctc_core.greedy_decode(self.asr.frame_logits(X))
        return self.nlu.predict(decoded), decoded
