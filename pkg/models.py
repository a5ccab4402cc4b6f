from dataclasses import dataclass
from typing import Annotated, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from constants import ABLATION_MODES, CONV_PADDINGS, TAP_MODES, UTTERANCE_ENCODERS


# ============================================================
# UTTERANCE: one (X, W, y) triple of a corpus split
# ============================================================
@dataclass
class Utterance:
    id: str
    frames: np.ndarray          # (T, d) float64
    transcript: list[int]       # token ids
    label: int                  # intent id

    def as_example(self) -> tuple[np.ndarray, list[int], int]:
        return self.frames, self.transcript, self.label


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============================================================
# CORPUS: synthetic SLU corpus generation
# ============================================================
class CorpusConfig(_Config):
    vocab_size: int = Field(default=20, ge=1)
    feature_dim: int = Field(default=16, ge=1)
    u_min: int = 2                      # tokens per utterance
    u_max: int = 8
    f_min: int = 4                      # frames per token
    f_max: int = 8
    noise_sigma: float = Field(default=0.3, ge=0.0)
    num_actions: int = Field(default=3, ge=1)
    num_scenarios: int = Field(default=3, ge=1)
    action_groups: Optional[list[int]] = None     # token -> action id
    scenario_groups: Optional[list[int]] = None   # token -> scenario id
    train_size: int = Field(default=2000, ge=1)
    valid_size: int = Field(default=200, ge=1)
    test_size: int = Field(default=500, ge=1)
    silence_frames: int = Field(default=0, ge=0)  # blank-prototype gap between tokens
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.u_min < 2:
            raise ValueError("u_min must be >= 2 so first and last tokens are distinct positions")
        if self.u_max < self.u_min:
            raise ValueError("u_max must be >= u_min")
        if self.f_min < 3:
            raise ValueError("f_min must be >= 3 to keep CTC targets feasible after stride-2 subsampling")
        if self.f_max < self.f_min:
            raise ValueError("f_max must be >= f_min")
        for name, groups, count in (
            ("action_groups", self.action_groups, self.num_actions),
            ("scenario_groups", self.scenario_groups, self.num_scenarios),
        ):
            if groups is None:
                continue
            if len(groups) != self.vocab_size:
                raise ValueError(f"{name} must map every token (expected {self.vocab_size} entries)")
            if any(g < 0 or g >= count for g in groups):
                raise ValueError(f"{name} values must lie in [0, {count})")
        return self

    @property
    def num_intents(self) -> int:
        return self.num_actions * self.num_scenarios

    def action_of(self, token: int) -> int:
        if self.action_groups is not None:
            return self.action_groups[token]
        return token % self.num_actions

    def scenario_of(self, token: int) -> int:
        if self.scenario_groups is not None:
            return self.scenario_groups[token]
        return (token // self.num_actions) % self.num_scenarios

    @property
    def split_sizes(self) -> dict[str, int]:
        return {"train": self.train_size, "valid": self.valid_size, "test": self.test_size}


# ============================================================
# MODEL: acoustic encoder, frame classifier, utterance encoder
# ============================================================
class ConvLayerConfig(_Config):
    kernel_width: int = Field(ge=1)
    stride: int = Field(default=1, ge=1)
    out_channels: Optional[int] = Field(default=None, ge=1)   # None -> encoder_hidden


class ModelConfig(_Config):
    feature_dim: int = Field(default=16, ge=1)
    conv_layers: list[ConvLayerConfig] = Field(
        default_factory=lambda: [
            ConvLayerConfig(kernel_width=3, stride=1),
            ConvLayerConfig(kernel_width=3, stride=2),
        ]
    )
    encoder_hidden: int = Field(default=32, ge=1)
    vocab_size: int = Field(default=20, ge=1)
    utterance_hidden: int = Field(default=128, ge=1)
    num_labels: int = Field(default=9, ge=1)
    tap_mode: str = "logits"
    tap_detach: bool = False
    utterance_encoder: str = "maxpool"
    conv_padding: str = "centered"     # "right": all kernel - 1 zero frames after the sequence

    @field_validator("tap_mode")
    @classmethod
    def _known_tap(cls, value: str) -> str:
        if value not in TAP_MODES:
            raise ValueError(f"tap_mode must be one of {TAP_MODES}")
        return value

    @field_validator("utterance_encoder")
    @classmethod
    def _known_encoder(cls, value: str) -> str:
        if value not in UTTERANCE_ENCODERS:
            raise ValueError(f"utterance_encoder must be one of {UTTERANCE_ENCODERS}")
        return value

    @field_validator("conv_padding")
    @classmethod
    def _known_padding(cls, value: str) -> str:
        if value not in CONV_PADDINGS:
            raise ValueError(f"conv_padding must be one of {CONV_PADDINGS}")
        return value

    @field_validator("conv_layers")
    @classmethod
    def _at_least_one_layer(cls, value: list[ConvLayerConfig]) -> list[ConvLayerConfig]:
        if not value:
            raise ValueError("the acoustic encoder needs at least one conv layer")
        return value

    @property
    def num_classes(self) -> int:
        """Frame classes: the vocabulary plus the blank (id V)."""
        return self.vocab_size + 1

    @property
    def hidden_dim(self) -> int:
        return self.conv_layers[-1].out_channels or self.encoder_hidden

    def left_pad(self, kernel_width: int) -> int:
        """Zero frames before the sequence; the remaining kernel_width - 1 - left go after it."""
        return (kernel_width - 1) // 2 if self.conv_padding == "centered" else 0

    @property
    def tap_dim(self) -> int:
        return self.hidden_dim if self.tap_mode == "hidden" else self.num_classes


class LossWeights(_Config):
    alpha_ctc: float = Field(default=0.5, ge=0.0)
    alpha_slu: float = Field(default=1.0, ge=0.0)


# ============================================================
# TRAIN: two-phase schedule and ablations
# ============================================================
class TrainConfig(_Config):
    learning_rate: float = Field(default=2e-3, gt=0.0)   # constant, no schedule
    batch_size: int = Field(default=16, ge=1)
    alpha_ctc: float = Field(default=0.5, ge=0.0)
    alpha_slu: float = Field(default=1.0, ge=0.0)
    alpha_ctc_grid: list[Annotated[float, Field(ge=0.0)]] = Field(default_factory=list)
    asr_patience: int = Field(default=5, ge=1)
    max_asr_epochs: int = Field(default=40, ge=1)
    joint_epochs: int = Field(default=50, ge=1)
    improvement_threshold: float = Field(default=1e-6, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    weight_decay: float = Field(default=0.01, ge=0.0)
    grad_clip: float = Field(default=5.0, gt=0.0)
    ctc_degradation_warning: float = Field(default=0.1, ge=0.0)
    seed: int = 0
    ablation: str = "full"
    log_wall_time: bool = False

    @field_validator("ablation")
    @classmethod
    def _known_ablation(cls, value: str) -> str:
        if value not in ABLATION_MODES:
            raise ValueError(f"ablation must be one of {ABLATION_MODES}")
        return value

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(alpha_ctc=self.alpha_ctc, alpha_slu=self.alpha_slu)


class OutConfig(_Config):
    dir: str = "runs/default"
    dataset_dir: Optional[str] = None    # None -> <dir>/dataset

    @property
    def dataset_path(self) -> str:
        return self.dataset_dir or f"{self.dir}/dataset"


class RunConfig(_Config):
    corpus: CorpusConfig = Field(default_factory=CorpusConfig)
    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    out: OutConfig = Field(default_factory=OutConfig)

    @model_validator(mode="after")
    def _corpus_matches_model(self):
        if self.model.feature_dim != self.corpus.feature_dim:
            raise ValueError("model.feature_dim must equal corpus.feature_dim")
        if self.model.vocab_size != self.corpus.vocab_size:
            raise ValueError("model.vocab_size must equal corpus.vocab_size")
        if self.model.num_labels != self.corpus.num_intents:
            raise ValueError("model.num_labels must equal corpus.num_actions * corpus.num_scenarios")
        return self
