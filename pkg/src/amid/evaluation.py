"""Metrics, the exact discrete MI oracle, and the lower-bound audit."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ConfigurationError, DataError


@dataclass
class MetricReport:
    top1: float = 0.0
    wa: float = 0.0
    ua: float = 0.0
    r_at_k: dict[int, float] = field(default_factory=dict)
    acc_teacher: float = 0.0
    acc_student: float = 0.0

    @property
    def gap(self) -> float:
        return self.acc_teacher - self.acc_student


def predictions(logits) -> np.ndarray:
    # argmax already breaks ties toward the lowest class index
    return np.argmax(np.asarray(logits), axis=1)


def top1(logits, labels) -> float:
    labels = np.asarray(labels)
    if labels.size == 0:
        return 0.0
    return float(np.mean(predictions(logits) == labels))


def wa_ua(logits, labels, num_classes: int | None = None) -> tuple[float, float]:
    """Sample-weighted accuracy and the unweighted mean of per-class recalls.

    Both are summed as exact fractions and rounded once, so balanced data
    gives bitwise-equal values.
    """
    labels = np.asarray(labels)
    pred = predictions(logits)
    classes = range(num_classes) if num_classes is not None else np.unique(labels)
    recalls = []
    for c in classes:
        sel = labels == c
        if not sel.any():
            raise DataError(f"class {c} has no samples; unweighted accuracy undefined")
        recalls.append(Fraction(int(np.sum(pred[sel] == c)), int(sel.sum())))
    wa = Fraction(int(np.sum(pred == labels)), len(labels))
    return float(wa), float(sum(recalls) / len(recalls))


def knn_retrieval(query, query_labels, gallery=None, gallery_labels=None, ks=(1, 5)) -> dict[int, float]:
    """Recall@K with cosine similarity.

    With ``gallery=None`` the query set is its own gallery and each query's
    self-match is excluded.  Neighbour ties go to the lower gallery index.
    """
    query = np.asarray(query, dtype=np.float64)
    query_labels = np.asarray(query_labels)
    same = gallery is None
    if same:
        gallery, gallery_labels = query, query_labels
    gallery = np.asarray(gallery, dtype=np.float64)
    gallery_labels = np.asarray(gallery_labels)
    size = len(gallery) - (1 if same else 0)
    if size < 1:
        raise ConfigurationError("retrieval gallery is empty")
    if max(ks) > size:
        raise ConfigurationError(f"K={max(ks)} exceeds gallery size {size}")
    sim = dc.cosine_matrix(Tensor(query), Tensor(gallery)).data
    if same:
        np.fill_diagonal(sim, -np.inf)
    order = np.argsort(-sim, axis=1, kind="stable")
    hit = gallery_labels[order] == query_labels[:, None]
    return {k: float(np.mean(hit[:, :k].any(axis=1))) for k in ks}


def gap_curve(acc_teacher, acc_student) -> tuple[np.ndarray, float]:
    """Per-epoch teacher-minus-student accuracy and its mean over the last quarter of epochs."""
    t = np.asarray(acc_teacher, dtype=np.float64)
    s = np.asarray(acc_student, dtype=np.float64)
    if t.shape != s.shape:
        raise ConfigurationError(f"gap_curve: length mismatch {t.shape} vs {s.shape}")
    gap = t - s
    if gap.size == 0:
        return gap, 0.0
    tail = max(1, int(np.ceil(0.25 * gap.size)))
    return gap, float(gap[-tail:].mean())


# -- mutual information ------------------------------------------------------

@dataclass(frozen=True)
class DiscreteJoint:
    table: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.table, dtype=np.float64)
        if t.ndim != 2 or np.any(t < 0) or abs(t.sum() - 1.0) > 1e-9:
            raise DataError("joint table must be a nonnegative 2-D array summing to 1")
        object.__setattr__(self, "table", t)

    @property
    def p_m(self) -> np.ndarray:
        return self.table.sum(axis=1)

    @property
    def p_s(self) -> np.ndarray:
        return self.table.sum(axis=0)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        flat = rng.choice(self.table.size, size=n, p=self.table.reshape(-1))
        return np.divmod(flat, self.table.shape[1])


def noisy_diagonal_joint(size: int, purity: float) -> DiscreteJoint:
    """Uniform ``m``; ``s`` copies ``m`` with probability ``purity``, else uniform."""
    if size < 2 or not 0.0 <= purity <= 1.0:
        raise ConfigurationError("need size >= 2 and purity in [0, 1]")
    table = (purity * np.eye(size) + (1.0 - purity) / size) / size
    return DiscreteJoint(table)


def mi_oracle(joint: DiscreteJoint) -> float:
    """Exact mutual information in nats, with ``0 log 0 = 0``."""
    p = joint.table
    i, j = np.nonzero(p > 0)
    # log differences, not a ratio: the product of marginals can underflow
    return float(np.sum(p[i, j] * (np.log(p[i, j]) - np.log(joint.p_m[i]) - np.log(joint.p_s[j]))))


def log_posterior_positive(ratio, n, k):
    """``log q(C=1 | M, S)`` for density ratio ``r = p(M)p(S) / p(M,S)``."""
    return -np.log1p(np.asarray(n, dtype=np.float64) / k * ratio)


def posterior_upper_bound(ratio, n, k):
    """``-log(N/k) + log(1/r)``, which dominates :func:`log_posterior_positive`."""
    return -np.log(np.asarray(n, dtype=np.float64) / k) - np.log(ratio)


def population_h(phi: np.ndarray, joint: DiscreteJoint, k: int, n: int, tau: float) -> np.ndarray:
    """Pairwise classifier ``h(m, s)`` from a cosine table ``phi[m, s]``.

    The denominator is the expected in-batch partition function for an
    anchor of symbol ``m`` with ``k`` same-class and ``n`` other-class columns.
    """
    e = np.exp(phi / tau)
    p = joint.table
    pm = joint.p_m
    pos = (p * e).sum(axis=1) / pm
    with np.errstate(invalid="ignore", divide="ignore"):
        other = ((joint.p_s[None, :] - p) * e).sum(axis=1) / (1.0 - pm)
    other = np.where(pm < 1.0, other, 0.0)
    z = k * pos + n * other
    return np.clip(e / z[:, None], dc.EPS, 1.0 - dc.EPS)


def likelihood_i(h: np.ndarray, joint: DiscreteJoint, k: int, n: int) -> float:
    """``k E_p[log h] + N E_{p(m)p(s)}[log(1 - h)]``, exact over the alphabet."""
    outer = np.outer(joint.p_m, joint.p_s)
    return float(k * np.sum(joint.table * np.log(h)) + n * np.sum(outer * np.log1p(-h)))


@dataclass
class BoundAudit:
    bound: float
    exact: float

    @property
    def slack(self) -> float:
        return self.exact - self.bound


def bound_audit(phi: np.ndarray, joint: DiscreteJoint, labels, tau: float) -> BoundAudit:
    """Average over anchors of ``log(N_i/k_i) + I(h)`` against the exact MI.

    ``labels`` gives the batch composition (anchor class symbols); anchors
    without negatives are skipped since ``log(0)`` is undefined.
    """
    from .pairing import build_pair_index

    index = build_pair_index(labels)
    vals = []
    for k, n in zip(index.k, index.n):
        if n == 0:
            continue
        h = population_h(phi, joint, int(k), int(n), tau)
        vals.append(np.log(n / k) + likelihood_i(h, joint, int(k), int(n)))
    bound = float(np.mean(vals)) if vals else -np.inf
    return BoundAudit(bound, mi_oracle(joint))


class ToyBoundTask:
    """Discrete pairs embedded as fixed near-orthogonal vectors, with trainable linear maps.

    The class of a pair is its ``m`` symbol, so same-class pairs are draws
    from the joint.  Training minimises the contrastive MI loss; audits
    evaluate the bound with the current maps.
    """

    def __init__(self, joint: DiscreteJoint, embed_dim: int = 16, rep_dim: int = 8,
                 tau: float = 0.5, batch_size: int = 16, lr: float = 1e-2, seed: int = 0):
        from .models import Linear

        self.joint = joint
        self.tau = tau
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        am, as_ = joint.table.shape
        self.emb_m = self.rng.normal(size=(am, embed_dim)) / np.sqrt(embed_dim)
        self.emb_s = self.rng.normal(size=(as_, embed_dim)) / np.sqrt(embed_dim)
        self.f = Linear(embed_dim, rep_dim, self.rng, "toy.f")
        self.g = Linear(embed_dim, rep_dim, self.rng, "toy.g")
        self.opt = dc.Adam(self.f.parameters() + self.g.parameters(), lr=lr)
        self.audit_labels, _ = joint.sample(batch_size, self.rng)

    def phi(self) -> np.ndarray:
        fm = self.f(Tensor(self.emb_m))
        gs = self.g(Tensor(self.emb_s))
        return dc.cosine_matrix(fm, gs).data

    def audit(self) -> BoundAudit:
        return bound_audit(self.phi(), self.joint, self.audit_labels, self.tau)

    def train_epoch(self, steps: int = 20) -> float:
        from .losses import loss_mi
        from .pairing import build_pair_index

        total = 0.0
        for _ in range(steps):
            m, s = self.joint.sample(self.batch_size, self.rng)
            loss = loss_mi(self.f(Tensor(self.emb_m[m])), self.g(Tensor(self.emb_s[s])),
                           build_pair_index(m), self.tau)
            self.opt.zero_grad()
            loss.backward()
            self.opt.step()
            total += loss.item()
        return total / steps

    def run(self, epochs: int, steps: int = 20) -> list[BoundAudit]:
        audits = [self.audit()]
        for _ in range(epochs):
            self.train_epoch(steps)
            audits.append(self.audit())
        return audits
