"""Objective terms.

All functions build differentiable :class:`~amid.diffcore.Tensor` scalars.
Probabilities pass through ``log_prob`` (clamped to ``[eps, 1 - eps]``)
before any log is taken.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigurationError, DataError, NumericalError
from .pairing import PairIndex


@dataclass
class LossBreakdown:
    cls: float = 0.0
    jsd: float = 0.0
    mi_s: float = 0.0
    mi_a: float = 0.0
    adv: float = 0.0
    disc: float = 0.0
    total: float = 0.0

    @property
    def finite(self) -> dict[str, bool]:
        return {f.name: math.isfinite(getattr(self, f.name)) for f in fields(self)}

    def as_row(self) -> dict[str, float]:
        return {f"loss_{k}": v for k, v in asdict(self).items() if k != "total"}


def h_matrix(m: Tensor, x: Tensor, tau: float) -> Tensor:
    """Row-softmax of cosine similarity over temperature: row ``i`` scores every column against ``m_i``."""
    if tau <= 0:
        raise ConfigurationError(f"temperature must be positive, got {tau}")
    return dc.softmax(dc.cosine_matrix(m, x) * (1.0 / tau), axis=1)


def loss_mi(m: Tensor, x: Tensor, index: PairIndex, tau: float) -> Tensor:
    """Class-aware contrastive loss whose negative is the MI lower bound (up to ``log(N/k)``).

    Positives of anchor ``i`` are all same-label columns including ``i``;
    negatives are the different-label columns.  Normalised by the batch size.
    """
    h = h_matrix(m, x, tau)
    pos = index.positive_mask()
    neg = index.negative_mask()
    terms = dc.log_prob(h) * pos + dc.log_prob(1.0 - h) * neg
    return dc.sum(terms) * (-1.0 / index.batch_size)


def _disc_probs(disc, d_id: int, reps: Tensor, frozen: bool) -> Tensor:
    return disc.discriminate(d_id, reps, frozen=frozen)


def loss_adv(s_eta0: Tensor, s_eta1: Tensor, disc, lam1: float, lam2: float, d_est: float) -> Tensor:
    """Generator side: the student tries to make both discriminators say "teacher".

    Discriminator weights are used as constants, so no gradient reaches them.
    """
    b = s_eta0.shape[0]
    loss = dc.sum(dc.log_prob(_disc_probs(disc, 1, s_eta0, True))) * (-lam1 / b)
    if s_eta1.shape[0] and lam2:
        loss = loss + dc.sum(dc.log_prob(_disc_probs(disc, 2, s_eta1, True))) * (-lam2 / d_est)
    return loss


def disc_terms(m: Tensor, s_eta0: Tensor, m_multi: Tensor, s_eta1: Tensor, disc) -> tuple[Tensor, Tensor]:
    """Unweighted summed GAN terms for D1 and D2 on detached representations."""
    m, s_eta0, m_multi, s_eta1 = (t.detach() for t in (m, s_eta0, m_multi, s_eta1))
    t1 = -(dc.sum(dc.log_prob(_disc_probs(disc, 1, m, False)))
           + dc.sum(dc.log_prob(1.0 - _disc_probs(disc, 1, s_eta0, False))))
    if m_multi.shape[0] == 0:
        return t1, Tensor(0.0)
    t2 = -(dc.sum(dc.log_prob(_disc_probs(disc, 2, m_multi, False)))
           + dc.sum(dc.log_prob(1.0 - _disc_probs(disc, 2, s_eta1, False))))
    return t1, t2


def loss_disc(m: Tensor, s_eta0: Tensor, m_multi: Tensor, s_eta1: Tensor, disc,
              lam1: float, lam2: float, d_est: float) -> Tensor:
    t1, t2 = disc_terms(m, s_eta0, m_multi, s_eta1, disc)
    loss = t1 * (lam1 / m.shape[0])
    if m_multi.shape[0] and lam2:
        loss = loss + t2 * (lam2 / d_est)
    return loss


def cross_entropy(logits: Tensor, labels) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    b, c = logits.shape
    if labels.shape != (b,):
        raise DataError(f"expected {b} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise DataError(f"label out of range [0, {c}): {labels.min()}..{labels.max()}")
    onehot = np.zeros((b, c))
    onehot[np.arange(b), labels] = 1.0
    return dc.sum(dc.log_softmax(logits, axis=1) * onehot) * (-1.0 / b)


def loss_cls(logits_s: Tensor, logits_m: Tensor, labels) -> Tensor:
    return cross_entropy(logits_s, labels) + cross_entropy(logits_m, labels)


def loss_jsd(logits_s: Tensor, logits_m: Tensor) -> Tensor:
    """Batch-mean Jensen-Shannon divergence between the two predictive distributions (nats)."""
    p_s = dc.softmax(logits_s, axis=1)
    p_m = dc.softmax(logits_m, axis=1)
    q = (p_s + p_m) * 0.5
    log_q = dc.log_prob(q)
    kl_s = dc.sum(p_s * (dc.log_prob(p_s) - log_q), axis=1)
    kl_m = dc.sum(p_m * (dc.log_prob(p_m) - log_q), axis=1)
    return dc.mean((kl_s + kl_m) * 0.5)


TERMS = ("cls", "jsd", "mi_s", "mi_a", "adv")


def objective(parts: dict, alphas: tuple[float, float, float], warm_up: bool = False):
    """Weighted sum ``cls + jsd + a1*mi_s + a2*mi_a + a3*adv``; only ``cls + jsd`` while warming up.

    Works on Tensors (for backprop) or plain floats.  ``disc`` is never included.
    """
    a1, a2, a3 = alphas
    total = parts["cls"] + parts["jsd"]
    if warm_up:
        return total
    for name, a in (("mi_s", a1), ("mi_a", a2), ("adv", a3)):
        if a and name in parts:
            total = total + parts[name] * a
    return total


def total_loss(parts: dict, alphas: tuple[float, float, float], warm_up: bool = False) -> LossBreakdown:
    vals = {k: float(v.item() if isinstance(v, Tensor) else v) for k, v in parts.items()}
    br = LossBreakdown(**{k: vals.get(k, 0.0) for k in TERMS + ("disc",)})
    br.total = float(objective({k: getattr(br, k) for k in TERMS}, alphas, warm_up))
    if not all(br.finite.values()):
        raise NumericalError(f"non-finite loss term: {br}")
    return br
