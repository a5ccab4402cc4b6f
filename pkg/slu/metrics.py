from collections import Counter
from dataclasses import dataclass
from typing import Hashable, Sequence

from errors import DataError


@dataclass(frozen=True)
class EditCounts:
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    reference_length: int = 0

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(
            self.substitutions + other.substitutions,
            self.deletions + other.deletions,
            self.insertions + other.insertions,
            self.reference_length + other.reference_length,
        )


def edit_distance(reference: Sequence[Hashable], hypothesis: Sequence[Hashable]) -> EditCounts:
    """
    Unit-cost Levenshtein alignment. Among minimal alignments the one with
    the fewest insertions, then fewest deletions, is reported.
    """
    n, m = len(reference), len(hypothesis)
    # cell = (total, insertions, deletions, substitutions); tuple order is the tie-break
    prev = [(j, j, 0, 0) for j in range(m + 1)]
    for i in range(1, n + 1):
        row = [(i, 0, i, 0)]
        for j in range(1, m + 1):
            diag = prev[j - 1]
            if reference[i - 1] == hypothesis[j - 1]:
                match = diag
            else:
                match = (diag[0] + 1, diag[1], diag[2], diag[3] + 1)
            up = prev[j]
            delete = (up[0] + 1, up[1], up[2] + 1, up[3])
            left = row[j - 1]
            insert = (left[0] + 1, left[1] + 1, left[2], left[3])
            row.append(min(match, delete, insert))
        prev = row
    total, insertions, deletions, substitutions = prev[m]
    return EditCounts(substitutions, deletions, insertions, n)


def _pooled(counts: Sequence[EditCounts]) -> float:
    pooled = sum(counts, EditCounts())
    if pooled.reference_length == 0:
        raise DataError("error rate over zero reference tokens")
    return pooled.total / pooled.reference_length


def wer(pairs: Sequence[tuple[Sequence[Hashable], Sequence[Hashable]]]) -> float:
    """Corpus-pooled word error rate: sum of edits over sum of reference lengths."""
    return _pooled([edit_distance(ref, hyp) for ref, hyp in pairs])


def cer(pairs: Sequence[tuple[Sequence[Hashable], Sequence[Hashable]]]) -> float:
    """Character error rate on tokens joined with single spaces."""
    return _pooled([
        edit_distance(" ".join(map(str, ref)), " ".join(map(str, hyp)))
        for ref, hyp in pairs
    ])


def accuracy(predictions: Sequence[Hashable], labels: Sequence[Hashable]) -> float:
    if len(predictions) != len(labels):
        raise DataError(f"{len(predictions)} predictions for {len(labels)} labels")
    if not labels:
        raise DataError("accuracy over an empty set")
    return sum(1 for p, y in zip(predictions, labels) if p == y) / len(labels)


def confusion_counts(predictions: Sequence[int], labels: Sequence[int]) -> dict[int, dict[int, int]]:
    """labels -> predictions -> count, keys sorted."""
    counts = Counter(zip(labels, predictions))
    table: dict[int, dict[int, int]] = {}
    for (label, prediction), count in sorted(counts.items()):
        table.setdefault(label, {})[prediction] = count
    return table
