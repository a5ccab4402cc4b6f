from dotenv import load_dotenv
load_dotenv()

import argparse
import logging
import sys
from typing import Optional, Sequence

from errors import SluError

# Commands
from commands import ablate, decode, evaluate, gen, train, verify

LOG_FORMAT = "%(levelname)s %(name)s: %(message)s"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctc-slu",
        description="End-to-end spoken language understanding on a CTC acoustic model, trained from scratch.",
    )
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Default: INFO."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    # ---------------------------------------------------------
    # Commands
    # ---------------------------------------------------------
    gen.register(subparsers)       # gen: synthetic corpus
    train.register(subparsers)     # train: two-phase schedule
    evaluate.register(subparsers)  # eval: accuracy / WER / CER
    decode.register(subparsers)    # decode: greedy transcripts
    ablate.register(subparsers)    # ablate: every mode, one table
    verify.register(subparsers)    # verify: oracle suites
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format=LOG_FORMAT)
    try:
        return args.handler(args)
    except SluError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
