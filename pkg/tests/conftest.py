import numpy as np
import pytest

from models import CorpusConfig, ModelConfig, TrainConfig
from slu.synth_data import generate_corpus, load_dataset
from slu.trainer import TrainData


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_corpus_config():
    return CorpusConfig(
        vocab_size=6,
        feature_dim=8,
        num_actions=2,
        num_scenarios=2,
        u_max=4,
        noise_sigma=0.1,
        train_size=32,
        valid_size=8,
        test_size=8,
        seed=5,
    )


@pytest.fixture
def small_model_config():
    return ModelConfig(feature_dim=8, vocab_size=6, num_labels=4, encoder_hidden=8, utterance_hidden=16)


@pytest.fixture
def small_train_config():
    return TrainConfig(batch_size=8, max_asr_epochs=2, asr_patience=1, joint_epochs=2, seed=5)


@pytest.fixture
def dataset_dir(tmp_path, small_corpus_config):
    return generate_corpus(small_corpus_config, tmp_path / "dataset")


@pytest.fixture
def train_data(dataset_dir):
    splits, vocab, labels = load_dataset(dataset_dir)
    return TrainData.from_splits(splits, vocab, labels)
