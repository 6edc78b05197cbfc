"""Labeled samples and their class partition.

A :class:`LabeledSample` holds an ``(n, p)`` feature matrix together with
integer class labels in ``{0, ..., K}``; class 0 is the majority
("control") class and classes 1..K are the rare ("case") classes.
:func:`group_by_label` splits it into per-class matrices while retaining
the original row positions, so label permutations can reuse the feature
matrix without copying rows.

All containers are frozen and their arrays are marked read-only; they
can be shared freely across workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateDataError, ValidationError

__all__ = ["LabeledSample", "GroupedSample", "group_by_label", "standardize"]


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class LabeledSample:
    """Feature matrix plus per-row class labels.

    ``features`` is coerced to a read-only float64 ``(n, p)`` array and
    ``labels`` to read-only int64.  Non-finite feature values and
    negative labels are rejected at construction.
    """

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2 or x.shape[1] < 1:
            raise ValidationError("features must be an (n, p) matrix with p >= 1")
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValidationError(
                f"labels length {y.shape} does not match {x.shape[0]} feature rows"
            )
        if y.size == 0:
            raise ValidationError("empty sample")
        if not np.issubdtype(y.dtype, np.integer):
            yi = y.astype(np.int64)
            if not np.array_equal(yi, y):
                raise ValidationError("labels must be integers")
            y = yi
        if y.min() < 0:
            raise ValidationError("labels must be >= 0")
        if not np.all(np.isfinite(x)):
            raise ValidationError("features contain non-finite values")
        object.__setattr__(self, "features", _freeze(x))
        object.__setattr__(self, "labels", _freeze(y.astype(np.int64)))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        """K + 1, where K is the largest label present."""
        return int(self.labels.max()) + 1

    def with_labels(self, labels: np.ndarray) -> "LabeledSample":
        """Same features under a new label vector (no feature copy)."""
        out = object.__new__(LabeledSample)
        y = np.ascontiguousarray(labels, dtype=np.int64)
        object.__setattr__(out, "features", self.features)
        object.__setattr__(out, "labels", _freeze(y))
        return out


@dataclass(frozen=True)
class GroupedSample:
    """Per-class feature matrices, counts, and original row positions."""

    groups: tuple
    counts: tuple
    indices: tuple

    @property
    def n_classes(self) -> int:
        return len(self.groups)

    @property
    def n(self) -> int:
        return int(sum(self.counts))

    @property
    def p(self) -> int:
        return self.groups[0].shape[1]

    @property
    def imbalance(self) -> float:
        """n1 / n0, the case-to-control ratio."""
        return self.counts[1] / self.counts[0]

    def group(self, k: int) -> np.ndarray:
        return self.groups[k]


def group_by_label(sample: LabeledSample) -> GroupedSample:
    """Partition rows by class label, preserving within-class row order.

    Raises :class:`DegenerateDataError` when any class in
    ``0..max(labels)`` is empty (in particular when all rows share one
    label, which leaves nothing to compare).
    """
    n_classes = sample.n_classes
    groups = []
    counts = []
    indices = []
    for k in range(n_classes):
        idx = np.flatnonzero(sample.labels == k)
        if idx.size == 0:
            raise DegenerateDataError(
                f"degenerate partition: class {k} has no observations"
            )
        groups.append(_freeze(sample.features[idx]))
        counts.append(int(idx.size))
        indices.append(_freeze(idx))
    if n_classes < 2:
        raise DegenerateDataError(
            "degenerate partition: need at least one case class besides class 0"
        )
    return GroupedSample(tuple(groups), tuple(counts), tuple(indices))


def standardize(sample: LabeledSample) -> LabeledSample:
    """Center each feature column to mean 0 and scale to sample sd 1.

    The sample standard deviation uses the n-1 denominator.  A column
    with zero variance cannot be scaled and raises
    :class:`DegenerateDataError` naming the column.
    """
    x = sample.features
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    bad = np.flatnonzero(sd <= 0)
    if bad.size:
        raise DegenerateDataError(f"zero-variance feature column {bad[0]}")
    return LabeledSample((x - mean) / sd, sample.labels)
