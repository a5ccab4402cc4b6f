import argparse
import logging
from pathlib import Path
from typing import Optional

import storage
from commands.common import (
    CASCADE_NAME,
    CHECKPOINT_NAME,
    PRE_JOINT_NAME,
    add_config_arguments,
    add_training_arguments,
    config_from_args,
    load_training_data,
)
from constants import ABLATION_MODES, TRAIN_LOG_HEADER
from models import RunConfig, TrainConfig
from slu.slu_model import CascadePipeline
from slu.trainer import AblationResult, TrainData, evaluate, run_ablation

logger = logging.getLogger(__name__)

SWEEP_HEADER = ["alpha_ctc", "valid_acc", "valid_wer", "test_acc", "test_wer"]


def register(subparsers) -> None:
    parser = subparsers.add_parser("train", help="Train one configuration (ASR phase, then joint phase).")
    add_config_arguments(parser)
    add_training_arguments(parser)
    parser.add_argument("--ablation", choices=ABLATION_MODES, help="Training schedule / architecture variant.")
    parser.set_defaults(handler=run)


def save_result(result: AblationResult, out_dir: str | Path, alpha_ctc: Optional[float] = None) -> str:
    """Checkpoint, pre-joint checkpoint, cascade head, TrainLog CSV and summary; returns the checkpoint SHA-256."""
    out_dir = Path(out_dir)
    extra = {"ablation": result.mode, "alpha_ctc": alpha_ctc, "best_epoch": result.log.best_epoch}
    digest = storage.save_checkpoint(out_dir / CHECKPOINT_NAME, result.model.params, result.model.config, extra)

    if result.asr_params is not None:
        pre_joint = result.model.params.copy()
        pre_joint.restore(result.asr_params)
        storage.save_checkpoint(
            out_dir / PRE_JOINT_NAME, pre_joint, result.model.config, {"ablation": result.mode, "phase": "asr"}
        )
    if isinstance(result.predictor, CascadePipeline):
        storage.save_params(out_dir / CASCADE_NAME, result.predictor.nlu.params)

    storage.write_csv(out_dir / "train_log.csv", TRAIN_LOG_HEADER, result.log.rows())
    storage.write_json(
        out_dir / "train_summary.json",
        {
            "ablation": result.mode,
            "best_epoch": result.log.best_epoch,
            "skipped_items": result.log.skipped_items,
            "valid_asr_before_joint": result.log.asr_before,
            "valid_asr_after_joint": result.log.asr_after,
            "slu_params": result.slu_params,
            "test": result.test.as_dict(),
            "checkpoint_sha256": digest,
        },
    )
    return digest


def sweep_alpha_ctc(data: TrainData, config: RunConfig) -> tuple[AblationResult, float, list[list]]:
    """Train once per alpha_ctc in the grid; keep the best validation accuracy (earliest on ties)."""
    rows = []
    best: Optional[tuple[AblationResult, float]] = None
    best_accuracy = -1.0
    for alpha in config.train.alpha_ctc_grid:
        train_config = TrainConfig.model_validate({**config.train.model_dump(), "alpha_ctc": alpha})
        result = run_ablation(config.train.ablation, data, train_config, config.model)
        valid = evaluate(result.predictor, data.valid, data.vocab)
        rows.append([alpha, valid.accuracy, valid.wer, result.test.accuracy, result.test.wer])
        logger.info("Sweep: alpha_ctc %s valid acc %.4f", alpha, valid.accuracy)
        if valid.accuracy > best_accuracy:
            best, best_accuracy = (result, alpha), valid.accuracy
    result, alpha = best
    return result, alpha, rows


def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    data = load_training_data(config)
    out_dir = Path(config.out.dir)

    if config.train.alpha_ctc_grid:
        result, alpha, rows = sweep_alpha_ctc(data, config)
        storage.write_csv(out_dir / "sweep.csv", SWEEP_HEADER, rows)
        logger.info("Sweep: selected alpha_ctc %s", alpha)
    else:
        alpha = config.train.alpha_ctc
        result = run_ablation(config.train.ablation, data, config.train, config.model)

    digest = save_result(result, out_dir, alpha_ctc=alpha)
    print(
        f"Done. ablation={result.mode} best_epoch={result.log.best_epoch} "
        f"test_acc={result.test.accuracy:.4f} test_wer={result.test.wer:.4f} "
        f"checkpoint={out_dir / CHECKPOINT_NAME} sha256={digest[:12]}"
    )
    return 0
