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
)
from constants import SPLITS
from slu import ctc_core


def register(subparsers) -> None:
    parser = subparsers.add_parser("decode", help="Greedy-decode a split to id<TAB>tokens lines.")
    add_config_arguments(parser)
    parser.add_argument("--checkpoint", help=f"Checkpoint to decode with. Default: <out>/{CHECKPOINT_NAME}.")
    parser.add_argument("--split", choices=SPLITS, default="test", help="Dataset split. Default: test.")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    checkpoint = Path(args.checkpoint or Path(config.out.dir) / CHECKPOINT_NAME)
    _, model, _ = load_predictor(checkpoint)
    data = load_training_data(config)
    check_dataset_fits(model, data)

    rows = []
    exact = 0
    utterances = getattr(data, args.split)
    for utterance in utterances:
        decoded = ctc_core.greedy_decode(model.frame_logits(utterance.frames))
        exact += decoded == utterance.transcript
        rows.append((utterance.id, [data.vocab[t] for t in decoded]))

    path = Path(config.out.dir) / f"decode_{args.split}.tsv"
    storage.write_decode(path, rows)
    print(f"Done. decoded={len(rows)} exact={exact} output={path}")
    return 0
