"""Synthetic multimodal data and the JSON-lines feature format.

Each sample has a class-conditional latent ``z = mu_class + noise``.
Modality ``m`` sees only a fraction ``rho_m`` of the class coordinates of
``z`` (the others are zeroed), concatenated with nuisance coordinates that
all modalities share, mapped through a fixed random matrix plus Gaussian
noise.  A higher ``rho`` therefore means more class information.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import ConfigurationError, DataError

ROLES = ("target", "auxiliary")


@dataclass(frozen=True)
class ModalitySpec:
    name: str
    role: str
    dim: int
    rho: float
    noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ConfigurationError(f"modality {self.name!r}: unknown role {self.role!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigurationError(f"modality {self.name!r}: rho must be in [0, 1], got {self.rho}")
        if self.dim < 1:
            raise ConfigurationError(f"modality {self.name!r}: dim must be >= 1")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    per_class: int = 60
    latent_dim: int = 16
    nuisance_dim: int = 4
    class_sep: float = 1.5
    modalities: tuple[ModalitySpec, ...] = (
        ModalitySpec("video", "target", 32, 0.3, 1.0, 11),
        ModalitySpec("audio", "auxiliary", 16, 0.9, 1.0, 23),
    )
    splits: tuple[float, float, float] = (0.5, 0.25, 0.25)
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.per_class < 1 or self.latent_dim < 1 or self.nuisance_dim < 0:
            raise ConfigurationError("num_classes >= 2, per_class >= 1, latent_dim >= 1 required")
        if abs(sum(self.splits) - 1.0) > 1e-9 or any(f < 0 for f in self.splits):
            raise ConfigurationError(f"splits must be nonnegative and sum to 1, got {self.splits}")
        roles = [m.role for m in self.modalities]
        if "target" not in roles or "auxiliary" not in roles:
            raise ConfigurationError("need at least one target and one auxiliary modality")
        if len({m.name for m in self.modalities}) != len(self.modalities):
            raise ConfigurationError("duplicate modality names")


@dataclass
class MultimodalBatch:
    ids: list[str]
    labels: np.ndarray
    features: dict[str, np.ndarray]
    roles: dict[str, str]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def target_names(self) -> list[str]:
        return [n for n, r in self.roles.items() if r == "target"]

    @property
    def auxiliary_names(self) -> list[str]:
        return [n for n, r in self.roles.items() if r == "auxiliary"]

    def subset(self, idx) -> "MultimodalBatch":
        idx = np.asarray(idx, dtype=np.int64)
        return MultimodalBatch([self.ids[i] for i in idx], self.labels[idx],
                               {k: v[idx] for k, v in self.features.items()}, dict(self.roles))


# A dataset split is just a large batch.
Dataset = MultimodalBatch


@dataclass
class SplitDataset:
    train: MultimodalBatch
    val: MultimodalBatch
    test: MultimodalBatch
    num_classes: int = field(default=0)

    def __iter__(self):
        return iter((("train", self.train), ("val", self.val), ("test", self.test)))


def _visible_mask(spec: SyntheticSpec, m: ModalitySpec) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, m.seed, 1])
    n_vis = int(round(m.rho * spec.latent_dim))
    mask = np.zeros(spec.latent_dim)
    mask[rng.permutation(spec.latent_dim)[:n_vis]] = 1.0
    return mask


def generate(spec: SyntheticSpec) -> SplitDataset:
    rng = np.random.default_rng(spec.seed)
    c, per = spec.num_classes, spec.per_class
    means = rng.normal(0.0, spec.class_sep, size=(c, spec.latent_dim))
    labels = np.repeat(np.arange(c), per)
    n = len(labels)
    z = means[labels] + rng.normal(size=(n, spec.latent_dim))
    nuis = rng.normal(size=(n, spec.nuisance_dim))

    features, roles = {}, {}
    for m in spec.modalities:
        mrng = np.random.default_rng([spec.seed, m.seed])
        w = mrng.normal(size=(spec.latent_dim + spec.nuisance_dim, m.dim)) / np.sqrt(spec.latent_dim + spec.nuisance_dim)
        x = np.concatenate([z * _visible_mask(spec, m), nuis], axis=1) @ w
        features[m.name] = x + m.noise * rng.normal(size=x.shape)
        roles[m.name] = m.role
    ids = [f"s{i:05d}" for i in range(n)]
    full = MultimodalBatch(ids, labels, features, roles)

    # stratified split so every class lands in every part
    parts = ([], [], [])
    cuts = np.cumsum(spec.splits)[:-1]
    for cls in range(c):
        members = rng.permutation(np.flatnonzero(labels == cls))
        bounds = np.round(cuts * len(members)).astype(int)
        for part, chunk in zip(parts, np.split(members, bounds)):
            part.extend(chunk.tolist())
    train, val, test = (full.subset(np.sort(p)) for p in parts)
    return SplitDataset(train, val, test, c)


def save_features(dataset: MultimodalBatch, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, sid in enumerate(dataset.ids):
            rec = {"id": sid, "label": int(dataset.labels[i]),
                   "modalities": {k: v[i].tolist() for k, v in dataset.features.items()},
                   "roles": dataset.roles}
            fh.write(json.dumps(rec) + "\n")


def load_features(path: str | os.PathLike) -> MultimodalBatch:
    ids, labels, rows = [], [], {}
    roles: dict[str, str] | None = None
    dims: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            for key in ("id", "label", "modalities", "roles"):
                if key not in rec:
                    raise DataError(f"line {lineno}: missing {key!r}")
            if not isinstance(rec["label"], int) or rec["label"] < 0:
                raise DataError(f"line {lineno}: label must be a nonnegative integer")
            for name, role in rec["roles"].items():
                if role not in ROLES:
                    raise DataError(f"line {lineno}: unknown role {role!r} for modality {name!r}")
            if roles is None:
                roles = dict(rec["roles"])
            elif rec["roles"] != roles:
                raise DataError(f"line {lineno}: roles differ from earlier records")
            for name in roles:
                if name not in rec["modalities"]:
                    raise DataError(f"line {lineno}: sample {rec['id']!r} missing modality {name!r}")
                vec = rec["modalities"][name]
                if dims.setdefault(name, len(vec)) != len(vec):
                    raise DataError(f"line {lineno}: modality {name!r} has dim {len(vec)}, expected {dims[name]}")
                rows.setdefault(name, []).append(vec)
            extra = set(rec["modalities"]) - set(roles)
            if extra:
                raise DataError(f"line {lineno}: modality {sorted(extra)[0]!r} has no role")
            ids.append(str(rec["id"]))
            labels.append(rec["label"])
    if not ids:
        raise DataError(f"{path}: no records")
    feats = {k: np.array(v, dtype=np.float64) for k, v in rows.items()}
    return MultimodalBatch(ids, np.array(labels, dtype=np.int64), feats, roles)


def batches(dataset: MultimodalBatch, batch_size: int, seed: int, epoch: int) -> Iterator[MultimodalBatch]:
    """Shuffled minibatches keyed by ``(seed, epoch)``; a trailing batch of one sample is dropped."""
    if batch_size < 2:
        raise ConfigurationError(f"batch_size must be >= 2, got {batch_size}")
    order = np.random.default_rng([seed, epoch, 7]).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        if len(chunk) >= 2:
            yield dataset.subset(chunk)
