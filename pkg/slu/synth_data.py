"""
Deterministic synthetic SLU corpora.

Each token is a run of noisy copies of a fixed random unit vector; the
intent is an exact function of the first and last tokens of the transcript.
"""

import hashlib
import logging
from functools import lru_cache
from pathlib import Path

import numpy as np

import storage
from constants import ACTION_NAMES, SCENARIO_NAMES, SPLITS
from errors import CorpusGenerationError, DataError
from models import CorpusConfig, Utterance
from slu.nn_core import Array

logger = logging.getLogger(__name__)


def derive_seed(master_seed: int, *parts: object) -> int:
    """Order-independent per-item seed: hash(master_seed, parts...)."""
    key = ":".join(str(p) for p in (master_seed, *parts))
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "little")


def token_names(vocab_size: int) -> list[str]:
    return [f"tok{i:02d}" for i in range(vocab_size)]


def intent_names(config: CorpusConfig) -> list[str]:
    names = []
    for action in range(config.num_actions):
        action_name = ACTION_NAMES[action] if action < len(ACTION_NAMES) else f"action{action}"
        for scenario in range(config.num_scenarios):
            scenario_name = SCENARIO_NAMES[scenario] if scenario < len(SCENARIO_NAMES) else f"scenario{scenario}"
            names.append(f"{scenario_name}_{action_name}")
    return names


def label_of(transcript: list[int], config: CorpusConfig) -> int:
    """intent = action(first token) * num_scenarios + scenario(last token)."""
    if not transcript:
        raise DataError("label_of an empty transcript")
    return config.action_of(transcript[0]) * config.num_scenarios + config.scenario_of(transcript[-1])


def reachable_intents(config: CorpusConfig) -> set[int]:
    actions = {config.action_of(t) for t in range(config.vocab_size)}
    scenarios = {config.scenario_of(t) for t in range(config.vocab_size)}
    return {a * config.num_scenarios + s for a in actions for s in scenarios}


@lru_cache(maxsize=16)
def _prototypes(master_seed: int, vocab_size: int, feature_dim: int) -> Array:
    rng = np.random.default_rng(derive_seed(master_seed, "prototypes"))
    vectors = rng.standard_normal((vocab_size, feature_dim))
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    vectors.setflags(write=False)
    return vectors


def token_prototypes(config: CorpusConfig) -> Array:
    return _prototypes(config.seed, config.vocab_size, config.feature_dim)


def render_utterance(transcript: list[int], config: CorpusConfig, utterance_seed: int) -> Array:
    """Concatenate, per token, n in [f_min, f_max] frames of prototype + N(0, sigma^2) noise."""
    rng = np.random.default_rng([utterance_seed, 1])
    prototypes = token_prototypes(config)
    runs = []
    for position, token in enumerate(transcript):
        if position > 0 and config.silence_frames > 0:
            silence = np.zeros((config.silence_frames, config.feature_dim))
            runs.append(silence + config.noise_sigma * rng.standard_normal(silence.shape))
        length = int(rng.integers(config.f_min, config.f_max + 1))
        noise = rng.standard_normal((length, config.feature_dim))
        runs.append(prototypes[token] + config.noise_sigma * noise)
    return np.concatenate(runs, axis=0)


def sample_transcript(rng: np.random.Generator, config: CorpusConfig, intent: int) -> list[int]:
    action, scenario = divmod(intent, config.num_scenarios)
    firsts = [t for t in range(config.vocab_size) if config.action_of(t) == action]
    lasts = [t for t in range(config.vocab_size) if config.scenario_of(t) == scenario]
    length = int(rng.integers(config.u_min, config.u_max + 1))
    first = firsts[int(rng.integers(len(firsts)))]
    interior = rng.integers(0, config.vocab_size, size=length - 2).tolist()
    last = lasts[int(rng.integers(len(lasts)))]
    return [first, *interior, last]


def make_utterance(config: CorpusConfig, split: str, index: int) -> Utterance:
    seed = derive_seed(config.seed, split, index)
    rng = np.random.default_rng([seed, 0])
    # the first num_intents train items cover every intent once
    if split == "train" and index < config.num_intents:
        intent = index
    else:
        intent = int(rng.integers(config.num_intents))
    transcript = sample_transcript(rng, config, intent)
    return Utterance(
        id=f"{split}-{index:06d}",
        frames=render_utterance(transcript, config, seed),
        transcript=transcript,
        label=label_of(transcript, config),
    )


def generate_split(config: CorpusConfig, split: str) -> list[Utterance]:
    return [make_utterance(config, split, i) for i in range(config.split_sizes[split])]


def check_generatable(config: CorpusConfig) -> None:
    reachable = reachable_intents(config)
    names = intent_names(config)
    for intent in range(config.num_intents):
        if intent not in reachable:
            raise CorpusGenerationError(f"intent class {intent} ({names[intent]}) is unreachable under the group maps")
    if config.train_size < config.num_intents:
        raise CorpusGenerationError(
            f"train split of {config.train_size} cannot cover all {config.num_intents} intent classes"
        )


def generate_corpus(config: CorpusConfig, out_dir: str | Path) -> Path:
    """Write train/valid/test splits, vocab, label map and manifest to out_dir."""
    check_generatable(config)
    out_dir = Path(out_dir)
    vocab = token_names(config.vocab_size)
    labels = intent_names(config)

    files = {
        "vocab.txt": storage.write_lines(out_dir / "vocab.txt", vocab),
        "labels.txt": storage.write_lines(out_dir / "labels.txt", labels),
    }
    for split in SPLITS:
        utterances = generate_split(config, split)
        if split == "train":
            missing = set(range(config.num_intents)) - {u.label for u in utterances}
            if missing:
                raise CorpusGenerationError(f"train split misses intent classes {sorted(missing)}")
        files[f"{split}.jsonl"] = storage.write_split(out_dir / f"{split}.jsonl", utterances, vocab, labels)
        logger.info("Corpus: wrote %d %s utterances", len(utterances), split)

    storage.write_manifest(out_dir, config.model_dump(mode="json"), files)
    return out_dir


def load_dataset(dataset_dir: str | Path) -> tuple[dict[str, list[Utterance]], list[str], list[str]]:
    """Returns ({split: utterances}, vocab, labels), verifying file hashes against the manifest."""
    dataset_dir = Path(dataset_dir)
    manifest = storage.read_manifest(dataset_dir)
    vocab = storage.read_lines(dataset_dir / "vocab.txt")
    labels = storage.read_lines(dataset_dir / "labels.txt")
    feature_dim = manifest.get("config", {}).get("feature_dim")
    splits = {}
    for split in SPLITS:
        path = dataset_dir / f"{split}.jsonl"
        storage.verify_file_hash(path, manifest)
        splits[split] = storage.read_split(path, vocab, labels, feature_dim)
    return splits, vocab, labels
