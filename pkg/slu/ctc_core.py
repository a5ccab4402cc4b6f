"""
CTC likelihood by forward-backward over the blank-extended target, its
gradient, a brute-force alignment enumerator and the greedy decoder.

Frame distributions have V + 1 classes; the blank is the last class (id V).
All lattice math is in log space.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from errors import InconsistentStateError, InstanceTooLargeError, InvalidShapeError
from slu.nn_core import Array, log_softmax

logger = logging.getLogger(__name__)

NEG_INF = -np.inf
BRUTE_FORCE_LIMIT = 10**7
NORMALIZATION_TOLERANCE = 1e-6


@dataclass
class CtcTable:
    log_alpha: Array          # (T', 2U + 1)
    log_beta: Array           # (T', 2U + 1)
    log_likelihood: float
    extended: np.ndarray
    infeasible: bool = False


def expand_target(transcript: Sequence[int], blank: int) -> np.ndarray:
    """[w1, ..., wU] -> [blank, w1, blank, ..., wU, blank]."""
    extended = np.full(2 * len(transcript) + 1, blank, dtype=np.int64)
    extended[1::2] = np.asarray(transcript, dtype=np.int64)
    return extended


def min_frames(transcript: Sequence[int]) -> int:
    """Shortest alignment: one frame per token plus a blank between equal neighbours."""
    repeats = sum(1 for a, b in zip(transcript, transcript[1:]) if a == b)
    return len(transcript) + repeats


def collapse(alignment: Sequence[int], blank: int) -> list[int]:
    """Merge repeated labels, then drop blanks."""
    return [label for label, _ in itertools.groupby(alignment) if label != blank]


def _skip_allowed(extended: np.ndarray, blank: int) -> np.ndarray:
    """allowed[s]: state s may be entered from s - 2 (non-blank, differs from s - 2)."""
    allowed = np.zeros(len(extended), dtype=bool)
    if len(extended) > 2:
        allowed[2:] = (extended[2:] != blank) & (extended[2:] != extended[:-2])
    return allowed


def _check_log_probs(frame_log_probs: Array, transcript: Sequence[int]) -> None:
    if frame_log_probs.ndim != 2 or frame_log_probs.shape[0] == 0:
        raise InvalidShapeError(f"frame log-probs must be (T', V + 1) with T' >= 1, got {frame_log_probs.shape}")
    num_classes = frame_log_probs.shape[1]
    if any(not 0 <= token < num_classes - 1 for token in transcript):
        raise InvalidShapeError(f"transcript token outside [0, {num_classes - 1})")
    row_norms = logsumexp(frame_log_probs, axis=1)
    if np.max(np.abs(row_norms)) > NORMALIZATION_TOLERANCE:
        raise InvalidShapeError("frame log-probs rows are not normalized distributions")


def ctc_log_likelihood(frame_log_probs: Array, transcript: Sequence[int]) -> tuple[float, CtcTable]:
    """
    log p(W | X) summed over every alignment that collapses to the transcript.

    An infeasible target (too few frames) returns -inf with table.infeasible
    set instead of raising.
    """
    _check_log_probs(frame_log_probs, transcript)
    num_frames, num_classes = frame_log_probs.shape
    blank = num_classes - 1
    extended = expand_target(transcript, blank)
    num_states = len(extended)

    log_alpha = np.full((num_frames, num_states), NEG_INF)
    log_beta = np.full((num_frames, num_states), NEG_INF)

    if num_frames < min_frames(transcript):
        return NEG_INF, CtcTable(log_alpha, log_beta, NEG_INF, extended, infeasible=True)

    emissions = frame_log_probs[:, extended]          # (T', S)
    skip = _skip_allowed(extended, blank)

    # forward
    log_alpha[0, 0] = emissions[0, 0]
    if num_states > 1:
        log_alpha[0, 1] = emissions[0, 1]
    for t in range(1, num_frames):
        prev = log_alpha[t - 1]
        total = prev.copy()
        total[1:] = np.logaddexp(total[1:], prev[:-1])
        total[2:] = np.where(skip[2:], np.logaddexp(total[2:], prev[:-2]), total[2:])
        log_alpha[t] = total + emissions[t]

    # backward, excluding the emission at t itself
    log_beta[-1, -1] = 0.0
    if num_states > 1:
        log_beta[-1, -2] = 0.0
    for t in range(num_frames - 2, -1, -1):
        nxt = log_beta[t + 1] + emissions[t + 1]
        total = nxt.copy()
        total[:-1] = np.logaddexp(total[:-1], nxt[1:])
        total[:-2] = np.where(skip[2:], np.logaddexp(total[:-2], nxt[2:]), total[:-2])
        log_beta[t] = total

    if num_states > 1:
        log_likelihood = float(np.logaddexp(log_alpha[-1, -1], log_alpha[-1, -2]))
    else:
        log_likelihood = float(log_alpha[-1, -1])

    return log_likelihood, CtcTable(log_alpha, log_beta, log_likelihood, extended)


def ctc_grad(frame_log_probs: Array, transcript: Sequence[int], table: CtcTable) -> Array:
    """
    Gradient of -log p(W | X) w.r.t. the pre-softmax frame logits:
    softmax(logits)[t, k] - posterior mass of states emitting k at frame t.
    """
    if table.infeasible or not np.isfinite(table.log_likelihood):
        raise InconsistentStateError("ctc_grad called with an infeasible CTC table")
    occupancy = np.exp(table.log_alpha + table.log_beta - table.log_likelihood)   # (T', S)
    posterior = np.zeros_like(frame_log_probs)
    for s, label in enumerate(table.extended):
        posterior[:, label] += occupancy[:, s]
    return np.exp(frame_log_probs) - posterior


def ctc_loss_and_grad(frame_logits: Array, transcript: Sequence[int]) -> tuple[float, Array | None]:
    """(-log p(W | X), gradient w.r.t. logits); (inf, None) when the target is infeasible."""
    frame_log_probs = log_softmax(frame_logits)
    log_likelihood, table = ctc_log_likelihood(frame_log_probs, transcript)
    if table.infeasible:
        return np.inf, None
    return -log_likelihood, ctc_grad(frame_log_probs, transcript, table)


def forward_backward_gap(table: CtcTable) -> float:
    """Largest per-frame |logsumexp(alpha_t + beta_t) - log p| (0 for a consistent table)."""
    if table.infeasible:
        return 0.0
    per_frame = logsumexp(table.log_alpha + table.log_beta, axis=1)
    return float(np.max(np.abs(per_frame - table.log_likelihood)))


@lru_cache(maxsize=64)
def _enumerate_alignments(num_frames: int, num_classes: int) -> tuple[np.ndarray, tuple[tuple[int, ...], ...]]:
    alignments = np.array(list(itertools.product(range(num_classes), repeat=num_frames)), dtype=np.int64)
    alignments = alignments.reshape(-1, num_frames)
    blank = num_classes - 1
    collapsed = tuple(tuple(collapse(row.tolist(), blank)) for row in alignments)
    return alignments, collapsed


def ctc_brute_force(frame_log_probs: Array, transcript: Sequence[int]) -> float:
    """p(W | X) by enumerating every length-T' alignment. Small instances only."""
    num_frames, num_classes = frame_log_probs.shape
    if num_classes ** num_frames > BRUTE_FORCE_LIMIT:
        raise InstanceTooLargeError(
            f"{num_classes}^{num_frames} alignments exceeds the brute-force limit of {BRUTE_FORCE_LIMIT}"
        )
    if len(transcript) > num_frames:
        return 0.0

    alignments, collapsed = _enumerate_alignments(num_frames, num_classes)
    target = tuple(int(token) for token in transcript)
    keep = np.array([c == target for c in collapsed], dtype=bool)
    if not keep.any():
        return 0.0
    path_log_probs = frame_log_probs[np.arange(num_frames), alignments[keep]].sum(axis=1)
    return float(np.sum(np.exp(path_log_probs)))


def greedy_decode(frame_logits: Array) -> list[int]:
    """Per-frame argmax (ties to the lowest class), then the collapse rule. Blank is the last class."""
    if frame_logits.shape[0] == 0:
        return []
    best = np.argmax(frame_logits, axis=1)
    return collapse(best.tolist(), frame_logits.shape[1] - 1)
