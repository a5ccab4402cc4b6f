"""
Two-phase training: an ASR-only phase (alpha_slu = 0) with patience-based
early stopping, then a fixed-length joint phase with best-validation-accuracy
checkpoint selection. Also the ablation schedules and evaluation.
"""

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional, Protocol, Sequence

import numpy as np

from constants import ABLATION_MODES, ABLATION_TAPS, TRAIN_LOG_HEADER
from errors import ConfigError, DataError
from models import LossWeights, ModelConfig, TrainConfig, Utterance
from slu import ctc_core
from slu.metrics import accuracy, cer, confusion_counts, wer
from slu.nn_core import ParamStore, adamw_step, clip_grad_norm, log_softmax
from slu.slu_model import BagOfTokensClassifier, CascadePipeline, SluModel

logger = logging.getLogger(__name__)


@dataclass
class TrainData:
    train: list[Utterance]
    valid: list[Utterance]
    test: list[Utterance]
    vocab: list[str]
    labels: list[str]

    @classmethod
    def from_splits(cls, splits: dict[str, list[Utterance]], vocab: list[str], labels: list[str]) -> "TrainData":
        return cls(splits["train"], splits["valid"], splits["test"], vocab, labels)


# ---------------------------------------------------------
# Logs
# ---------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    phase: str
    ctc_loss: Optional[float]
    slu_loss: Optional[float]
    valid_acc: Optional[float]
    valid_wer: Optional[float]
    seconds: float
    valid_ctc: Optional[float] = None

    def row(self) -> list:
        return [self.epoch, self.phase, self.ctc_loss, self.slu_loss, self.valid_acc, self.valid_wer, self.seconds]


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    skipped_items: int = 0
    asr_before: Optional[dict] = None     # valid WER/CER/CTC entering the joint phase
    asr_after: Optional[dict] = None      # same, for the selected joint checkpoint

    header = TRAIN_LOG_HEADER

    def extend(self, other: "TrainLog") -> "TrainLog":
        self.records.extend(other.records)
        self.skipped_items += other.skipped_items
        self.asr_before = other.asr_before or self.asr_before
        self.asr_after = other.asr_after or self.asr_after
        return self

    @property
    def best_epoch(self) -> Optional[int]:
        """Epoch (within its phase) of the highest validation accuracy, earliest on ties."""
        scored = [r for r in self.records if r.valid_acc is not None]
        if not scored:
            return None
        return scored[best_index([r.valid_acc for r in scored])].epoch

    def rows(self) -> list[list]:
        return [record.row() for record in self.records]


def best_index(values: Sequence[float]) -> int:
    """Index of the maximum, earliest on ties."""
    return int(np.argmax(np.asarray(values, dtype=np.float64)))


class PatienceTracker:
    """Stop once the monitored loss has not improved by more than threshold for `patience` epochs."""

    def __init__(self, patience: int, threshold: float = 1e-6):
        if patience < 1:
            raise ConfigError("patience must be >= 1")
        self.patience = patience
        self.threshold = threshold
        self.best = math.inf
        self.best_epoch: Optional[int] = None
        self.bad_epochs = 0

    def update(self, epoch: int, value: float) -> bool:
        if value < self.best - self.threshold:
            self.best = value
            self.best_epoch = epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.bad_epochs >= self.patience


# ---------------------------------------------------------
# Evaluation
# ---------------------------------------------------------
class Predictor(Protocol):
    def predict(self, X: np.ndarray) -> tuple[int, list[int]]: ...


@dataclass
class EvalReport:
    accuracy: float
    wer: float
    cer: float
    confusion: dict[int, dict[int, int]]
    error_subset_accuracy: Optional[float]     # None when no utterance has an ASR error
    num_utterances: int
    num_asr_errors: int
    ctc_loss: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "wer": self.wer,
            "cer": self.cer,
            "error_subset_accuracy": self.error_subset_accuracy,
            "num_utterances": self.num_utterances,
            "num_asr_errors": self.num_asr_errors,
            "ctc_loss": self.ctc_loss,
            "confusion": {str(k): {str(p): c for p, c in row.items()} for k, row in self.confusion.items()},
        }


def _token_strings(transcript: Sequence[int], vocab: Optional[Sequence[str]]) -> list[str]:
    return [vocab[t] if vocab is not None else str(t) for t in transcript]


def evaluate(model: Predictor, utterances: Sequence[Utterance], vocab: Optional[Sequence[str]] = None) -> EvalReport:
    """Intent accuracy, greedy-decode WER/CER and accuracy restricted to utterances with ASR errors."""
    if not utterances:
        raise DataError("cannot evaluate an empty split")

    predictions, decodes, ctc_losses = [], [], []
    for utterance in utterances:
        if isinstance(model, SluModel):
            trace = model.forward(utterance.frames)
            predictions.append(int(np.argmax(trace.label_logits)))
            decodes.append(ctc_core.greedy_decode(trace.frame_logits))
            log_likelihood, _ = ctc_core.ctc_log_likelihood(log_softmax(trace.frame_logits), utterance.transcript)
            if np.isfinite(log_likelihood):
                ctc_losses.append(-log_likelihood)
        else:
            label, decoded = model.predict(utterance.frames)
            predictions.append(label)
            decodes.append(decoded)

    labels = [u.label for u in utterances]
    references = [u.transcript for u in utterances]
    with_errors = [i for i, (ref, hyp) in enumerate(zip(references, decodes)) if list(ref) != list(hyp)]
    subset = (
        accuracy([predictions[i] for i in with_errors], [labels[i] for i in with_errors])
        if with_errors else None
    )
    pairs = [(_token_strings(ref, vocab), _token_strings(hyp, vocab)) for ref, hyp in zip(references, decodes)]
    return EvalReport(
        accuracy=accuracy(predictions, labels),
        wer=wer(pairs),
        cer=cer(pairs),
        confusion=confusion_counts(predictions, labels),
        error_subset_accuracy=subset,
        num_utterances=len(utterances),
        num_asr_errors=len(with_errors),
        ctc_loss=float(np.mean(ctc_losses)) if ctc_losses else None,
    )


# ---------------------------------------------------------
# Epoch loop
# ---------------------------------------------------------
def epoch_order(seed: int, epoch: int, size: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(size)


def _optimizer_step(store: ParamStore, config: TrainConfig, names: list[str]) -> None:
    clip_grad_norm(store, config.grad_clip, names)
    adamw_step(
        store,
        lr=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
        names=names,
    )


def run_epoch(
    model: SluModel,
    utterances: Sequence[Utterance],
    config: TrainConfig,
    weights: LossWeights,
    trainable: list[str],
    epoch: int,
    update_trunk: bool = True,
) -> tuple[Optional[float], float, int]:
    """One pass of shuffled mini-batches; returns (mean train CTC, mean train SLU, skipped CTC items)."""
    order = epoch_order(config.seed, epoch, len(utterances))
    ctc_means, slu_means, skipped = [], [], 0
    for start in range(0, len(order), config.batch_size):
        batch = [utterances[i].as_example() for i in order[start:start + config.batch_size]]
        breakdown = model.joint_loss(batch, weights, compute_grad=True, update_trunk=update_trunk)
        _optimizer_step(model.params, config, trainable)
        if breakdown.ctc_mean is not None:
            ctc_means.append(breakdown.ctc_mean)
        slu_means.append(breakdown.slu_mean)
        skipped += breakdown.skipped
    if skipped:
        logger.warning("Epoch %d: %d CTC-infeasible item(s) skipped", epoch, skipped)
    ctc_mean = float(np.mean(ctc_means)) if ctc_means else None
    return ctc_mean, float(np.mean(slu_means)), skipped


def _elapsed(config: TrainConfig, started: float) -> float:
    seconds = time.perf_counter() - started
    return seconds if config.log_wall_time else 0.0


# ---------------------------------------------------------
# Phases
# ---------------------------------------------------------
def train_asr_phase(model: SluModel, data: TrainData, config: TrainConfig) -> tuple[SluModel, TrainLog]:
    """alpha_ctc = 1, alpha_slu = 0 until validation CTC stops improving; restores the best weights."""
    weights = LossWeights(alpha_ctc=1.0, alpha_slu=0.0)
    trainable = model.parameter_groups()["asr"]
    tracker = PatienceTracker(config.asr_patience, config.improvement_threshold)
    log = TrainLog()
    best_params = model.params.snapshot()

    for epoch in range(1, config.max_asr_epochs + 1):
        started = time.perf_counter()
        ctc_loss, slu_loss, skipped = run_epoch(model, data.train, config, weights, trainable, epoch)
        report = evaluate(model, data.valid, data.vocab)
        valid_ctc = report.ctc_loss if report.ctc_loss is not None else math.inf
        if tracker.update(epoch, valid_ctc):
            best_params = model.params.snapshot()
        log.skipped_items += skipped
        log.records.append(
            EpochRecord(epoch, "asr", ctc_loss, slu_loss, None, report.wer, _elapsed(config, started), valid_ctc)
        )
        logger.info(
            "ASR epoch %d: train CTC %.4f, valid CTC %.4f (best %.4f), valid WER %.4f, patience %d/%d",
            epoch, ctc_loss if ctc_loss is not None else math.nan, valid_ctc, tracker.best,
            report.wer, tracker.bad_epochs, tracker.patience,
        )
        if tracker.should_stop:
            logger.info("ASR phase: stopping after epoch %d, restoring epoch %s", epoch, tracker.best_epoch)
            break

    model.params.restore(best_params)
    return model, log


def _asr_summary(report: EvalReport) -> dict:
    return {"valid_wer": report.wer, "valid_cer": report.cer, "valid_ctc": report.ctc_loss}


def train_joint_phase(
    model: SluModel,
    data: TrainData,
    config: TrainConfig,
    weights: Optional[LossWeights] = None,
    trainable: Optional[list[str]] = None,
) -> tuple[SluModel, TrainLog]:
    """Fixed number of epochs; keeps the parameters of the best-validation-accuracy epoch."""
    weights = weights or config.loss_weights
    if weights.alpha_ctc == 0 and weights.alpha_slu == 0:
        raise ConfigError("alpha_ctc and alpha_slu cannot both be 0 in the joint phase")
    groups = model.parameter_groups()
    trainable = trainable if trainable is not None else groups["asr"] + groups["slu"]
    update_trunk = any(name in trainable for name in groups["asr"])

    log = TrainLog()
    before = evaluate(model, data.valid, data.vocab)
    log.asr_before = _asr_summary(before)
    best_params = model.params.snapshot()
    accuracies: list[float] = []

    for epoch in range(1, config.joint_epochs + 1):
        started = time.perf_counter()
        ctc_loss, slu_loss, skipped = run_epoch(
            model, data.train, config, weights, trainable, epoch, update_trunk=update_trunk
        )
        report = evaluate(model, data.valid, data.vocab)
        accuracies.append(report.accuracy)
        if best_index(accuracies) == len(accuracies) - 1:
            best_params = model.params.snapshot()
        log.skipped_items += skipped
        log.records.append(
            EpochRecord(epoch, "joint", ctc_loss, slu_loss, report.accuracy, report.wer,
                        _elapsed(config, started), report.ctc_loss)
        )
        logger.info(
            "Joint epoch %d: train CTC %s, train SLU %.4f, valid acc %.4f, valid WER %.4f",
            epoch, f"{ctc_loss:.4f}" if ctc_loss is not None else "n/a", slu_loss, report.accuracy, report.wer,
        )

    model.params.restore(best_params)
    after = evaluate(model, data.valid, data.vocab)
    log.asr_after = _asr_summary(after)
    logger.info(
        "Joint phase: best epoch %d, valid WER %.4f -> %.4f, valid CER %.4f -> %.4f",
        log.best_epoch, before.wer, after.wer, before.cer, after.cer,
    )
    if before.ctc_loss is not None and after.ctc_loss is not None:
        degradation = after.ctc_loss - before.ctc_loss
        if degradation > config.ctc_degradation_warning:
            logger.warning(
                "Joint phase: valid CTC degraded by %.4f (%.4f -> %.4f)",
                degradation, before.ctc_loss, after.ctc_loss,
            )
    return model, log


def train_cascade_phase(
    asr: SluModel, data: TrainData, config: TrainConfig
) -> tuple[CascadePipeline, TrainLog]:
    """Bag-of-token-counts classifier on greedy transcripts of the trained ASR model."""
    nlu = BagOfTokensClassifier(asr.config.vocab_size, asr.config.num_labels, seed=config.seed)
    pipeline = CascadePipeline(asr, nlu)
    train_pairs = [
        (ctc_core.greedy_decode(asr.frame_logits(u.frames)), u.label) for u in data.train
    ]
    names = nlu.params.names()
    log = TrainLog()
    best_params = nlu.params.snapshot()
    accuracies: list[float] = []

    for epoch in range(1, config.joint_epochs + 1):
        started = time.perf_counter()
        order = epoch_order(config.seed, epoch, len(train_pairs))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_pairs[i] for i in order[start:start + config.batch_size]]
            losses.append(nlu.loss(batch))
            _optimizer_step(nlu.params, config, names)
        report = evaluate(pipeline, data.valid, data.vocab)
        accuracies.append(report.accuracy)
        if best_index(accuracies) == len(accuracies) - 1:
            best_params = nlu.params.snapshot()
        log.records.append(
            EpochRecord(epoch, "cascade", None, float(np.mean(losses)), report.accuracy, report.wer,
                        _elapsed(config, started))
        )
        logger.info("Cascade epoch %d: train SLU %.4f, valid acc %.4f", epoch, float(np.mean(losses)), report.accuracy)

    nlu.params.restore(best_params)
    return pipeline, log


# ---------------------------------------------------------
# Ablations
# ---------------------------------------------------------
@dataclass
class AblationResult:
    mode: str
    log: TrainLog
    test: EvalReport
    model: SluModel
    predictor: Predictor
    slu_params: int                          # utterance encoder + label classifier, or the cascade NLU
    asr_params: Optional[dict] = None        # snapshot after the ASR phase


def ablation_model_config(mode: str, model_config: ModelConfig) -> ModelConfig:
    if mode not in ABLATION_MODES:
        raise ConfigError(f"unknown ablation mode: {mode}")
    update = {"tap_mode": ABLATION_TAPS[mode]}
    if mode == "cnn_encoder":
        update["utterance_encoder"] = "cnn"
    return ModelConfig.model_validate({**model_config.model_dump(), **update})


def run_ablation(mode: str, data: TrainData, config: TrainConfig, model_config: ModelConfig) -> AblationResult:
    model = SluModel(ablation_model_config(mode, model_config), seed=config.seed)
    groups = model.parameter_groups()
    log = TrainLog()
    asr_params = None

    if mode != "no_ctc":
        model, asr_log = train_asr_phase(model, data, config)
        log.extend(asr_log)
        asr_params = model.params.snapshot()

    if mode == "cascade":
        pipeline, cascade_log = train_cascade_phase(model, data, config)
        log.extend(cascade_log)
        test = evaluate(pipeline, data.test, data.vocab)
        return AblationResult(mode, log, test, model, pipeline, pipeline.nlu.params.num_params(), asr_params)

    weights = config.loss_weights
    trainable = None
    if mode == "no_ctc":
        weights = LossWeights(alpha_ctc=0.0, alpha_slu=config.alpha_slu)
    elif mode == "frozen_encoder":
        trainable = groups["slu"]

    model, joint_log = train_joint_phase(model, data, config, weights=weights, trainable=trainable)
    log.extend(joint_log)
    test = evaluate(model, data.test, data.vocab)
    slu_params = sum(model.params[name].size for name in groups["slu"])
    logger.info("Ablation %s: test accuracy %.4f, test WER %.4f", mode, test.accuracy, test.wer)
    return AblationResult(mode, log, test, model, model, int(slu_params), asr_params)
