import argparse

import storage
from commands.common import add_config_arguments, config_from_args
from slu.synth_data import generate_corpus


def register(subparsers) -> None:
    parser = subparsers.add_parser("gen", help="Generate the synthetic SLU corpus.")
    add_config_arguments(parser)
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    dataset_dir = generate_corpus(config.corpus, config.out.dataset_path)
    manifest = storage.read_manifest(dataset_dir)
    sizes = config.corpus.split_sizes
    print(
        f"Done. dataset={dataset_dir} intents={config.corpus.num_intents} "
        f"train={sizes['train']} valid={sizes['valid']} test={sizes['test']} "
        f"config_hash={manifest['config_hash'][:12]}"
    )
    return 0
