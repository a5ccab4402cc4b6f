"""Exception hierarchy. Each error carries the exit code the CLI reports."""

from constants import EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING, EXIT_VERIFY


class SluError(Exception):
    exit_code = EXIT_DATA


# ── configuration ───────────────────────────────────────────
class ConfigError(SluError):
    exit_code = EXIT_CONFIG


class InvalidShapeError(ConfigError):
    pass


class InstanceTooLargeError(ConfigError):
    pass


class CorpusGenerationError(ConfigError):
    pass


# ── data ────────────────────────────────────────────────────
class DataError(SluError):
    exit_code = EXIT_DATA


class EmptySequenceError(DataError):
    pass


class InvalidLabelError(DataError):
    pass


class UtteranceTooShortError(DataError):
    pass


# ── training ────────────────────────────────────────────────
class InconsistentStateError(SluError):
    exit_code = EXIT_TRAINING


class DegenerateBatchError(SluError):
    exit_code = EXIT_TRAINING


# ── verification ────────────────────────────────────────────
class VerificationError(SluError):
    exit_code = EXIT_VERIFY
