"""Per-anchor positive/negative index sets built from batch labels.

For anchor ``i`` the positives ``eta[i]`` start with ``i`` itself and then
list every other same-label index in ascending order; the negatives
``xi[i]`` are the different-label indices.  Counts are per anchor, so
``k[i] + n[i] == B`` always holds.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class PairIndex:
    labels: np.ndarray
    eta: tuple[np.ndarray, ...]
    xi: tuple[np.ndarray, ...]
    k: np.ndarray
    n: np.ndarray
    multi_set: np.ndarray

    @property
    def batch_size(self) -> int:
        return len(self.labels)

    @property
    def w(self) -> int:
        return len(self.multi_set)

    def positive_mask(self) -> np.ndarray:
        mask = np.zeros((self.batch_size, self.batch_size))
        for i, pos in enumerate(self.eta):
            mask[i, pos] = 1.0
        return mask

    def negative_mask(self) -> np.ndarray:
        mask = np.zeros((self.batch_size, self.batch_size))
        for i, neg in enumerate(self.xi):
            mask[i, neg] = 1.0
        return mask

    def class_prior(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-anchor ``(q(C=1), q(C=0)) = (k/B, N/B)``."""
        b = float(self.batch_size)
        return self.k / b, self.n / b


def build_pair_index(labels) -> PairIndex:
    labels = np.asarray(labels, dtype=np.int64)
    b = len(labels)
    if b < 2:
        raise ConfigurationError(f"pairing needs at least 2 samples, got {b}")
    same = labels[:, None] == labels[None, :]
    eta, xi = [], []
    for i in range(b):
        others = np.flatnonzero(same[i])
        others = others[others != i]
        eta.append(np.concatenate(([i], others)).astype(np.int64))
        xi.append(np.flatnonzero(~same[i]).astype(np.int64))
    k = np.array([len(e) for e in eta], dtype=np.int64)
    n = np.array([len(x) for x in xi], dtype=np.int64)
    multi = np.flatnonzero(k >= 2).astype(np.int64)
    return PairIndex(labels, tuple(eta), tuple(xi), k, n, multi)


def instance_pair_index(batch_size: int) -> PairIndex:
    """Self-pair-only positives: every other sample is a negative."""
    return build_pair_index(np.arange(batch_size))


def multi_sample_pairs(index: PairIndex, rng: np.random.Generator) -> list[tuple[int, int]]:
    """One uniformly drawn same-class partner for every element of the multi set."""
    pairs = []
    for v in index.multi_set:
        partners = index.eta[v][1:]
        pairs.append((int(v), int(partners[rng.integers(len(partners))])))
    return pairs
