import argparse
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import storage
from commands.common import add_config_arguments, add_training_arguments, config_from_args, load_training_data
from commands.train import save_result
from constants import ABLATION_MODES
from errors import SluError, VerificationError
from slu.trainer import run_ablation

logger = logging.getLogger(__name__)

ABLATION_HEADER = ["mode", "test_acc", "test_wer", "slu_params", "status"]


@dataclass
class OrderingCheck:
    name: str
    passed: bool
    detail: str


def _margin_check(name: str, accuracies: dict, better: str, worse: str, margin: float) -> OrderingCheck:
    a, b = accuracies.get(better), accuracies.get(worse)
    if a is None or b is None:
        return OrderingCheck(name, False, f"missing result for {better if a is None else worse}")
    return OrderingCheck(name, a - b >= margin, f"{better} {a:.4f} vs {worse} {b:.4f} (need >= {margin:+.3f})")


def ordering_checks(accuracies: dict[str, Optional[float]]) -> list[OrderingCheck]:
    """Accuracy orderings expected across ablation modes; accuracies are fractions."""
    checks = [
        _margin_check("full beats no_ctc", accuracies, "full", "no_ctc", 0.02),
        _margin_check("full beats frozen_encoder", accuracies, "full", "frozen_encoder", 0.05),
        _margin_check("full no worse than prob_tap", accuracies, "full", "prob_tap", -0.005),
    ]
    hidden, logits = accuracies.get("hidden_tap"), accuracies.get("full")
    if hidden is None or logits is None:
        checks.append(OrderingCheck("hidden and logits taps agree", False, "missing result"))
    else:
        checks.append(
            OrderingCheck(
                "hidden and logits taps agree",
                abs(hidden - logits) <= 0.01,
                f"hidden_tap {hidden:.4f} vs full {logits:.4f} (need |diff| <= 0.010)",
            )
        )
    return checks


def register(subparsers) -> None:
    parser = subparsers.add_parser("ablate", help="Train every ablation mode on one corpus and compare.")
    add_config_arguments(parser)
    add_training_arguments(parser)
    parser.add_argument("--modes", nargs="+", choices=ABLATION_MODES, help="Subset of modes to run. Default: all.")
    parser.add_argument("--strict", action="store_true", help="Exit with the verification code when an ordering fails.")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    data = load_training_data(config)
    out_dir = Path(config.out.dir)
    selected = set(args.modes or ABLATION_MODES)

    rows = []
    accuracies: dict[str, Optional[float]] = {}
    for mode in ABLATION_MODES:
        if mode not in selected:
            continue
        try:
            result = run_ablation(mode, data, config.train, config.model)
        except SluError as exc:
            logger.error("Ablation %s failed: %s", mode, exc)
            rows.append([mode, None, None, None, f"failed: {exc}"])
            accuracies[mode] = None
            continue
        save_result(result, out_dir / "ablation" / mode, alpha_ctc=config.train.alpha_ctc)
        rows.append([mode, result.test.accuracy, result.test.wer, result.slu_params, "ok"])
        accuracies[mode] = result.test.accuracy

    storage.write_csv(out_dir / "ablation.csv", ABLATION_HEADER, rows)
    print(f"{'mode':<16}{'test_acc':>10}{'test_wer':>10}{'slu_params':>12}  status")
    for mode, acc, error_rate, params, status in rows:
        acc_text = f"{acc:.4f}" if acc is not None else "-"
        wer_text = f"{error_rate:.4f}" if error_rate is not None else "-"
        print(f"{mode:<16}{acc_text:>10}{wer_text:>10}{params if params is not None else '-':>12}  {status}")

    failed = []
    if selected == set(ABLATION_MODES):
        for check in ordering_checks(accuracies):
            print(f"{'PASS' if check.passed else 'FAIL'}  {check.name}: {check.detail}")
            if not check.passed:
                failed.append(check.name)
    if failed and args.strict:
        raise VerificationError(f"ablation orderings failed: {', '.join(failed)}")
    return 0
