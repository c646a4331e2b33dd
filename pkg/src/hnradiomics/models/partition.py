"""Imbalance-adjustment partitioning of a (bootstrap) sample."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import UndefinedStatisticError


@dataclass(frozen=True, eq=False)
class PartitionScheme:
    """``partitions[k]`` lists sample positions: every event (label 1) plus one share of the non-events.

    With P = 1 (non-events not outnumbering events) the single partition is the whole sample.
    """

    P: int
    partitions: tuple
    minority_indices: np.ndarray
    minority_label: int

    @property
    def majority_sizes(self):
        return [len(p) - len(self.minority_indices) for p in self.partitions]


def partition_count(n_majority, n_minority):
    """P = N-/N+ rounded half up, at least 1."""
    return max(1, math.floor(n_majority / n_minority + 0.5))


def make_partitions(labels, rng: np.random.Generator) -> PartitionScheme:
    labels = np.asarray(labels).astype(np.int8)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedStatisticError("partitioning needs both classes")
    minority_label = 1
    minority = np.flatnonzero(labels == 1)
    majority = np.flatnonzero(labels == 0)
    P = partition_count(n_neg, n_pos)
    shuffled = rng.permutation(majority)
    shares = np.array_split(shuffled, P)
    partitions = tuple(np.sort(np.concatenate([minority, share])) for share in shares)
    return PartitionScheme(P, partitions, minority, minority_label)
