"""
Self-contained correctness suites: CTC against alignment enumeration,
forward-backward consistency, finite-difference gradients, edit-distance
oracles and run determinism.
"""

import argparse
import itertools
import logging
import math
import tempfile
import time
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional

import numpy as np

import storage
from errors import VerificationError
from models import CorpusConfig, LossWeights, ModelConfig, TrainConfig
from slu import ctc_core
from slu.metrics import edit_distance
from slu.nn_core import ParamStore, finite_diff_report, log_softmax
from slu.slu_model import SluModel
from slu.synth_data import generate_corpus, load_dataset
from slu.trainer import TrainData, run_ablation

logger = logging.getLogger(__name__)

LIKELIHOOD_TOLERANCE = 1e-9
GRADIENT_TOLERANCE = 1e-4
FINITE_DIFF_STEP = 1e-5


@dataclass
class SuiteResult:
    name: str
    max_error: float
    tolerance: float
    checked: int
    seconds: float = 0.0
    worst: str = ""                 # where max_error was found, when the suite can name it

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance


def _random_log_probs(rng: np.random.Generator, num_frames: int, num_classes: int) -> np.ndarray:
    return log_softmax(rng.normal(scale=1.5, size=(num_frames, num_classes)))


def ctc_instances(count: int = 200, seed: int = 0) -> list[tuple[np.ndarray, list[int]]]:
    """Seeded instances cycling through every (T' <= 6, V <= 3, U <= 3) shape."""
    shapes = list(itertools.product(range(1, 7), range(1, 4), range(0, 4)))
    rng = np.random.default_rng(seed)
    instances = []
    for i in range(count):
        num_frames, vocab_size, length = shapes[i % len(shapes)]
        transcript = rng.integers(0, vocab_size, size=length).tolist()
        instances.append((_random_log_probs(rng, num_frames, vocab_size + 1), transcript))
    return instances


def ctc_oracle_suite(count: int = 200, seed: int = 0) -> SuiteResult:
    worst = 0.0
    for log_probs, transcript in ctc_instances(count, seed):
        log_likelihood, _ = ctc_core.ctc_log_likelihood(log_probs, transcript)
        brute = ctc_core.ctc_brute_force(log_probs, transcript)
        if brute == 0.0 or not np.isfinite(log_likelihood):
            error = 0.0 if brute == 0.0 and not np.isfinite(log_likelihood) else math.inf
        else:
            error = abs(log_likelihood - math.log(brute))
        worst = max(worst, error)
    return SuiteResult("ctc_oracle", worst, LIKELIHOOD_TOLERANCE, count)


def forward_backward_suite(count: int = 200, seed: int = 0) -> SuiteResult:
    worst = 0.0
    for log_probs, transcript in ctc_instances(count, seed):
        _, table = ctc_core.ctc_log_likelihood(log_probs, transcript)
        worst = max(worst, ctc_core.forward_backward_gap(table))
    return SuiteResult("forward_backward", worst, LIKELIHOOD_TOLERANCE, count)


def _coordinate(coordinate: Optional[tuple[str, int]]) -> str:
    return "" if coordinate is None else f"{coordinate[0]}[{coordinate[1]}]"


def _ctc_logit_loss(transcript: list[int]) -> Callable[[ParamStore], float]:
    def loss_fn(store: ParamStore) -> float:
        loss, grad = ctc_core.ctc_loss_and_grad(store["logits"], transcript)
        store.set_grad("logits", grad)
        return float(loss)

    return loss_fn


def ctc_gradient_suite(count: int = 20, seed: int = 1) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst, checked, where = 0.0, 0, ""
    for instance in range(count):
        vocab_size = int(rng.integers(2, 5))
        length = int(rng.integers(1, 4))
        transcript = rng.integers(0, vocab_size, size=length).tolist()
        num_frames = ctc_core.min_frames(transcript) + int(rng.integers(0, 4))
        store = ParamStore()
        store.add("logits", rng.normal(size=(num_frames, vocab_size + 1)))
        store.zero_grad()
        report = finite_diff_report(_ctc_logit_loss(transcript), store, h=FINITE_DIFF_STEP)
        if report.max_relative_error > worst:
            worst = report.max_relative_error
            where = f"instance {instance} {_coordinate(report.worst_coordinate)}"
        checked += report.checked
    return SuiteResult("ctc_gradient", worst, GRADIENT_TOLERANCE, checked, worst=where)


def gradient_check_model() -> tuple[SluModel, list, LossWeights]:
    """T=12, d=8, V=5, K=6, batch of 2."""
    config = ModelConfig(feature_dim=8, vocab_size=5, num_labels=6, encoder_hidden=8, utterance_hidden=16)
    model = SluModel(config, seed=3)
    rng = np.random.default_rng(4)
    batch = [
        (rng.normal(size=(12, 8)), [0, 3, 1], 2),
        (rng.normal(size=(12, 8)), [4, 4], 5),
    ]
    return model, batch, LossWeights(alpha_ctc=0.5, alpha_slu=1.0)


def model_gradient_suite(subsample: int = 200, seed: int = 0) -> SuiteResult:
    model, batch, weights = gradient_check_model()

    def loss_fn(store: ParamStore) -> float:
        return model.joint_loss(batch, weights, compute_grad=True).total

    report = finite_diff_report(loss_fn, model.params, h=FINITE_DIFF_STEP, subsample=subsample, seed=seed)
    return SuiteResult(
        "model_gradient", report.max_relative_error, GRADIENT_TOLERANCE, report.checked,
        worst=_coordinate(report.worst_coordinate),
    )


@lru_cache(maxsize=None)
def _oracle_distance(reference: tuple, hypothesis: tuple) -> int:
    """Minimum edits by recursion over every alignment choice."""
    if not reference:
        return len(hypothesis)
    if not hypothesis:
        return len(reference)
    substitution = _oracle_distance(reference[1:], hypothesis[1:]) + (reference[0] != hypothesis[0])
    deletion = _oracle_distance(reference[1:], hypothesis) + 1
    insertion = _oracle_distance(reference, hypothesis[1:]) + 1
    return min(substitution, deletion, insertion)


def _sequences(max_length: int, alphabet: str = "abc") -> list[tuple]:
    return [seq for n in range(max_length + 1) for seq in itertools.product(alphabet, repeat=n)]


def metrics_oracle_suite(max_length: int = 6) -> SuiteResult:
    """Every pair of 3-symbol sequences up to max_length, plus kitten/sitting."""
    sequences = _sequences(max_length)
    pairs = itertools.chain(
        itertools.product(sequences, repeat=2), [(tuple("kitten"), tuple("sitting"))]
    )

    worst, checked, where = 0.0, 0, ""
    for reference, hypothesis in pairs:
        counts = edit_distance(reference, hypothesis)
        expected = _oracle_distance(reference, hypothesis)
        consistent = counts.deletions - counts.insertions == len(reference) - len(hypothesis)
        error = abs(counts.total - expected) + (0 if consistent else 1)
        if error > worst:
            worst, where = error, f"{''.join(reference)!r} vs {''.join(hypothesis)!r}"
        checked += 1
    _oracle_distance.cache_clear()
    return SuiteResult("metrics_oracle", float(worst), 0.5, checked, worst=where)


def _tiny_run(root: Path) -> tuple[str, bytes, list]:
    """Generate, reload and train a toy corpus; returns (manifest digest, checkpoint bytes, TrainLog rows)."""
    corpus = CorpusConfig(
        vocab_size=6, feature_dim=8, num_actions=2, num_scenarios=2,
        u_max=4, train_size=24, valid_size=8, test_size=8, seed=11,
    )
    dataset_dir = generate_corpus(corpus, root / "dataset")
    splits, vocab, labels = load_dataset(dataset_dir)
    model_config = ModelConfig(feature_dim=8, vocab_size=6, num_labels=4, encoder_hidden=8, utterance_hidden=16)
    train_config = TrainConfig(batch_size=8, max_asr_epochs=2, asr_patience=1, joint_epochs=2, seed=11)
    result = run_ablation("full", TrainData.from_splits(splits, vocab, labels), train_config, model_config)

    manifest = storage.read_manifest(dataset_dir)
    digest = manifest["config_hash"] + "".join(manifest["files"][name] for name in sorted(manifest["files"]))
    return digest, storage.encode_checkpoint(result.model.params.items()), result.log.rows()


def determinism_suite() -> SuiteResult:
    with tempfile.TemporaryDirectory() as first, tempfile.TemporaryDirectory() as second:
        a = _tiny_run(Path(first))
        b = _tiny_run(Path(second))
    mismatches = sum(x != y for x, y in zip(a, b))
    return SuiteResult("determinism", float(mismatches), 0.5, len(a))


SUITES: dict[str, Callable[[], SuiteResult]] = {
    "ctc_oracle": ctc_oracle_suite,
    "forward_backward": forward_backward_suite,
    "ctc_gradient": ctc_gradient_suite,
    "model_gradient": model_gradient_suite,
    "metrics_oracle": metrics_oracle_suite,
    "determinism": determinism_suite,
}


def run_suites(names: list[str]) -> list[SuiteResult]:
    results = []
    for name in names:
        started = time.perf_counter()
        result = SUITES[name]()
        result.seconds = time.perf_counter() - started
        logger.info("Verify: %s max error %.3g (%s)", name, result.max_error, "pass" if result.passed else "FAIL")
        results.append(result)
    return results


def register(subparsers) -> None:
    parser = subparsers.add_parser("verify", help="Run the oracle, gradient and determinism suites.")
    parser.add_argument("--suite", dest="suites", action="append", choices=list(SUITES), help="Run only this suite. Repeatable.")
    parser.set_defaults(handler=run)


def run(args: argparse.Namespace) -> int:
    results = run_suites(args.suites or list(SUITES))
    print(f"{'suite':<18}{'max_error':>12}{'tolerance':>12}{'checked':>9}{'seconds':>9}  result")
    for r in results:
        verdict = "PASS" if r.passed else "FAIL"
        worst = f"  worst at {r.worst}" if r.worst else ""
        print(f"{r.name:<18}{r.max_error:>12.3g}{r.tolerance:>12.3g}{r.checked:>9}{r.seconds:>9.2f}  {verdict}{worst}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise VerificationError(f"verification failed: {', '.join(failed)}")
    print(f"Done. suites={len(results)} failures=0")
    return 0
