# -------------------------------------------------------
# ABLATION MODES
# Row order of the ablation table. To add a mode, append it here and
# give it a schedule in slu/trainer.py.
# -------------------------------------------------------

ABLATION_MODES: list[str] = [
    "cascade",
    "no_ctc",
    "frozen_encoder",
    "prob_tap",
    "cnn_encoder",
    "hidden_tap",
    "full",
]

TAP_MODES: list[str] = ["hidden", "logits", "probabilities"]

UTTERANCE_ENCODERS: list[str] = ["maxpool", "cnn"]

# where the kernel - 1 zero frames of each temporal conv go
CONV_PADDINGS: list[str] = ["centered", "right"]

# tap used by each ablation mode
ABLATION_TAPS: dict[str, str] = {
    "full": "logits",
    "hidden_tap": "hidden",
    "prob_tap": "probabilities",
    "no_ctc": "hidden",
    "frozen_encoder": "logits",
    "cnn_encoder": "logits",
    "cascade": "logits",
}


# -------------------------------------------------------
# INTENT NAMES
# Intent = scenario combined with action. Groups beyond the end of a
# list fall back to "scenario<n>" / "action<n>".
# -------------------------------------------------------

SCENARIO_NAMES: list[str] = [
    "alarm",
    "calendar",
    "music",
    "weather",
    "lists",
    "news",
]

ACTION_NAMES: list[str] = [
    "set",
    "query",
    "remove",
    "play",
    "create",
    "update",
]


# -------------------------------------------------------
# FILES
# -------------------------------------------------------

SPLITS: tuple[str, ...] = ("train", "valid", "test")

CHECKPOINT_MAGIC = b"SLUC"
CHECKPOINT_VERSION = 0x01

TRAIN_LOG_HEADER: list[str] = [
    "epoch",
    "phase",
    "ctc_loss",
    "slu_loss",
    "valid_acc",
    "valid_wer",
    "seconds",
]

SEED_ENV_VAR = "CTC_SLU_SEED"


# -------------------------------------------------------
# EXIT CODES
# -------------------------------------------------------

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERIFY = 4
EXIT_TRAINING = 5
