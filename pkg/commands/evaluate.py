import argparse
from pathlib import Path

import storage
from commands.common import (
    CHECKPOINT_NAME,
    add_config_arguments,
    check_dataset_fits,
    config_from_args,
    load_predictor,
    load_training_data,
    print_json,
)
from constants import SPLITS
from slu.trainer import evaluate


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="Report accuracy, WER, CER and confusion counts for a checkpoint.")
    add_config_arguments(parser)
    parser.add_argument("--checkpoint", help=f"Checkpoint to evaluate. Default: <out>/{CHECKPOINT_NAME}.")
    parser.add_argument("--split", choices=SPLITS, default="test", help="Dataset split. Default: test.")
    parser.add_argument("--compare", help="Second checkpoint (e.g. pre_joint.bin) whose WER/CER is reported alongside.")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    checkpoint = Path(args.checkpoint or Path(config.out.dir) / CHECKPOINT_NAME)
    predictor, model, _ = load_predictor(checkpoint)
    data = load_training_data(config)
    check_dataset_fits(model, data)
    utterances = getattr(data, args.split)

    report = evaluate(predictor, utterances, data.vocab).as_dict()
    report["checkpoint"] = str(checkpoint)
    report["split"] = args.split
    if args.compare:
        other, other_model, _ = load_predictor(args.compare)
        check_dataset_fits(other_model, data)
        baseline = evaluate(other, utterances, data.vocab)
        report["compare"] = {
            "checkpoint": str(args.compare),
            "accuracy": baseline.accuracy,
            "wer": baseline.wer,
            "cer": baseline.cer,
        }

    storage.write_json(Path(config.out.dir) / f"eval_{args.split}.json", report)
    print_json(report)
    return 0
