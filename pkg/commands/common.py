"""Arguments and helpers shared by the subcommands."""

import argparse
import json
from pathlib import Path
from typing import Any

import storage
from errors import DataError
from models import RunConfig
from settings import SHORTCUTS, echo_config, resolve_config
from slu.slu_model import BagOfTokensClassifier, CascadePipeline, SluModel
from slu.synth_data import load_dataset
from slu.trainer import Predictor, TrainData

CHECKPOINT_NAME = "checkpoint.bin"
PRE_JOINT_NAME = "pre_joint.bin"
CASCADE_NAME = "cascade.bin"


def positive_int(value: str) -> int:
    parsed = int(value)
    if parsed <= 0:
        raise argparse.ArgumentTypeError("must be greater than 0")
    return parsed


def add_config_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file with corpus/model/train/out sections.")
    parser.add_argument(
        "--set", dest="assignments", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="Override one config field; the value is parsed as JSON. Repeatable.",
    )
    parser.add_argument("--out", help="Output directory for every artifact of the run (out.dir).")
    parser.add_argument("--dataset", help="Dataset directory (out.dataset_dir). Default: <out>/dataset.")
    parser.add_argument("--seed", type=int, help="Master seed for corpus generation and training.")


def add_training_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha-ctc", type=float, help="Weight of the CTC loss in the joint phase.")
    parser.add_argument("--lr", type=float, help="AdamW learning rate.")
    parser.add_argument("--batch-size", type=positive_int, help="Utterances per mini-batch.")
    parser.add_argument("--tap", choices=["hidden", "logits", "probabilities"], help="Frame signal fed to the utterance encoder.")
    parser.add_argument("--joint-epochs", type=positive_int, help="Epochs of the joint phase.")


def config_from_args(args: argparse.Namespace) -> RunConfig:
    flags = {name: getattr(args, name, None) for name in SHORTCUTS}
    config = resolve_config(args.config, args.assignments, flags)
    echo_config(config)
    return config


def load_training_data(config: RunConfig) -> TrainData:
    splits, vocab, labels = load_dataset(config.out.dataset_path)
    if len(vocab) != config.model.vocab_size or len(labels) != config.model.num_labels:
        raise DataError(
            f"dataset at {config.out.dataset_path} has {len(vocab)} tokens and {len(labels)} intents; "
            f"the model expects {config.model.vocab_size} and {config.model.num_labels}"
        )
    return TrainData.from_splits(splits, vocab, labels)


def load_predictor(checkpoint: str | Path) -> tuple[Predictor, SluModel, dict]:
    """The trained system behind a checkpoint: the SLU model, or the cascade when one was saved with it."""
    checkpoint = Path(checkpoint)
    model, extra = storage.load_checkpoint(checkpoint)
    if extra.get("ablation") != "cascade":
        return model, model, extra
    nlu = BagOfTokensClassifier(model.config.vocab_size, model.config.num_labels)
    storage.load_params_into(checkpoint.with_name(CASCADE_NAME), nlu.params)
    return CascadePipeline(model, nlu), model, extra


def check_dataset_fits(model: SluModel, data: TrainData) -> None:
    if model.config.vocab_size != len(data.vocab) or model.config.num_labels != len(data.labels):
        raise DataError("checkpoint vocabulary or intent count does not match the dataset")


def print_json(obj: Any) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))
