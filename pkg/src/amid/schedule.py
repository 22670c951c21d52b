"""Adaptive discriminator weights, the ``d`` normaliser, and the warm-up gate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .pairing import PairIndex


def softmax2(logits) -> np.ndarray:
    """Two-way softmax whose entries add to exactly 1.0 in floating point.

    The smaller weight comes from a stable sigmoid and the larger is ``1 - small``;
    that subtraction and the sum of the pair then round exactly.
    """
    z1, z2 = (float(v) for v in np.asarray(logits, dtype=np.float64))
    small = 1.0 / (1.0 + np.exp(abs(z1 - z2)))
    big = 1.0 - small
    return np.array([big, small] if z1 >= z2 else [small, big])


@dataclass
class LambdaState:
    """Moving-average logits for (D1, D2) plus this epoch's cosine accumulators.

    ``sums[0]/counts[0]`` track same-instance teacher/student cosine,
    ``sums[1]/counts[1]`` same-class cross-sample cosine.
    """

    logits: np.ndarray = field(default_factory=lambda: np.zeros(2))
    beta: float = 0.9
    sums: np.ndarray = field(default_factory=lambda: np.zeros(2))
    counts: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=np.int64))

    @property
    def lam(self) -> np.ndarray:
        return softmax2(self.logits)

    def averages(self) -> tuple[float, float]:
        if self.counts[0] == 0:
            raise ValueError("no same-instance similarities accumulated this epoch")
        a1 = self.sums[0] / self.counts[0]
        a2 = self.sums[1] / self.counts[1] if self.counts[1] else a1
        return float(a1), float(a2)

    def reset(self) -> None:
        self.sums = np.zeros(2)
        self.counts = np.zeros(2, dtype=np.int64)

    def state_dict(self) -> dict:
        return {"logits": self.logits.tolist(), "beta": self.beta,
                "sums": self.sums.tolist(), "counts": self.counts.tolist()}

    @classmethod
    def from_state(cls, state: dict) -> "LambdaState":
        return cls(np.array(state["logits"], dtype=np.float64), float(state["beta"]),
                   np.array(state["sums"], dtype=np.float64), np.array(state["counts"], dtype=np.int64))


def accumulate_similarities(m: np.ndarray, s: np.ndarray, index: PairIndex, state: LambdaState) -> LambdaState:
    m = dc.normalize_rows(dc.Tensor(m)).data
    s = dc.normalize_rows(dc.Tensor(s)).data
    cos = m @ s.T
    state.sums[0] += float(np.trace(cos))
    state.counts[0] += cos.shape[0]
    for v in index.multi_set:
        others = index.eta[v][1:]
        state.sums[1] += float(cos[v, others].sum())
        state.counts[1] += len(others)
    return state


def end_of_epoch_lambda(state: LambdaState, beta: float | None = None) -> tuple[float, float, LambdaState]:
    """One moving-average step on the logits from the epoch's mean misalignment, then reset."""
    beta = state.beta if beta is None else beta
    a1, a2 = state.averages()
    state.logits = beta * state.logits + (1.0 - beta) * np.array([1.0 - a1, 1.0 - a2])
    state.reset()
    lam = state.lam
    return float(lam[0]), float(lam[1]), state


def update_d(w: int, est: float, rate: float = 0.1) -> float:
    return max(1.0, (1.0 - rate) * est + rate * w)


def static_d(labels, batch_size: int) -> float:
    """Expected multi-set size of a batch, from the label frequencies of a whole split.

    Uses the probability that at least one of the other ``B - 1`` draws shares
    a sample's class (with-replacement approximation).
    """
    labels = np.asarray(labels)
    _, counts = np.unique(labels, return_counts=True)
    p = counts / counts.sum()
    frac = float(np.sum(p * (1.0 - (1.0 - p) ** (batch_size - 1))))
    return max(1.0, frac * batch_size)


@dataclass(frozen=True)
class WarmupGate:
    t_start: int

    def warming(self, epoch: int) -> bool:
        return epoch < self.t_start
