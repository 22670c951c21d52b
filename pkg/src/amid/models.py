"""The networks: per-modality extractors, fusion teacher, student/auxiliary heads,
a shared classifier and two discriminators.

Parameters are plain :class:`~amid.diffcore.Parameter` objects collected in
named dictionaries so they can be checkpointed as a flat name -> array map.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Parameter, Tensor
from .errors import ConfigurationError, DataError
from .data import MultimodalBatch

CHECKPOINT_FORMAT = "amid-checkpoint"
CHECKPOINT_VERSION = 1


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator | None, name: str, init: str = "he"):
        if init == "zeros" or rng is None:
            w = np.zeros((n_in, n_out))
        elif init == "identity":
            w = np.eye(n_in, n_out)
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        self.weight = Parameter(w, name=f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out), name=f"{name}.bias")

    def __call__(self, x: Tensor, frozen: bool = False) -> Tensor:
        w, b = self.weight, self.bias
        if frozen:
            w, b = w.detach(), b.detach()
        return dc.matmul(x, w) + b

    def parameters(self) -> list[Parameter]:
        return [self.weight, self.bias]


class MLP:
    """Linear layers with LeakyReLU between them (none after the last)."""

    def __init__(self, sizes: list[int], rng, name: str, init: str = "he"):
        self.layers = [Linear(a, b, rng, f"{name}.layers.{i}", init) for i, (a, b) in enumerate(zip(sizes, sizes[1:]))]

    def __call__(self, x: Tensor, frozen: bool = False) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x, frozen)
            if i < len(self.layers) - 1:
                x = dc.leaky_relu(x)
        return x

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def freeze(self) -> None:
        for p in self.parameters():
            p.freeze()

    @property
    def trainable(self) -> bool:
        return all(p.trainable for p in self.parameters())


class ModalityEncoder(MLP):
    def __init__(self, modality: str, in_dim: int, embed_dim: int, hidden: int, rng, name: str | None = None):
        super().__init__([in_dim, hidden, hidden, embed_dim], rng, name or f"encoder.{modality}")
        self.modality = modality


@dataclass(frozen=True)
class Architecture:
    input_dims: dict[str, int]
    roles: dict[str, str]
    num_classes: int
    embed_dim: int = 32
    hidden: int = 64
    disc_hidden: int = 64

    @property
    def order(self) -> list[str]:
        """Declared modality order: targets first, then auxiliaries, each in insertion order."""
        return ([n for n, r in self.roles.items() if r == "target"]
                + [n for n, r in self.roles.items() if r == "auxiliary"])

    @property
    def targets(self) -> list[str]:
        return [n for n in self.order if self.roles[n] == "target"]

    @property
    def auxiliaries(self) -> list[str]:
        return [n for n in self.order if self.roles[n] == "auxiliary"]


class AmidModel:
    """Teacher ``M``, student ``S`` and auxiliary ``A`` over shared extractors.

    * ``S`` = linear projection of the (concatenated) target encodings.
    * ``A`` = fixed averaging projection of the frozen auxiliary encodings.
    * ``M`` = 2-layer fusion MLP over all encodings in declared order.
    """

    def __init__(self, arch: Architecture, rng: np.random.Generator, disc_init: str = "he"):
        self.arch = arch
        d, h = arch.embed_dim, arch.hidden
        self.encoders = {n: ModalityEncoder(n, arch.input_dims[n], d, h, rng) for n in arch.order}
        self.student_proj = Linear(len(arch.targets) * d, d, rng, "student.proj")
        n_aux = len(arch.auxiliaries)
        self.aux_proj = Linear(n_aux * d, d, None, "aux.proj")
        self.aux_proj.weight.data[:] = np.vstack([np.eye(d)] * n_aux) / n_aux
        for p in self.aux_proj.parameters():
            p.freeze()
        self.fusion = MLP([len(arch.order) * d, d, d], rng, "teacher.fusion")
        self.classifier = Linear(d, arch.num_classes, rng, "classifier")
        self.disc1 = MLP([d] + [arch.disc_hidden] * 4 + [1], rng, "disc1", disc_init)
        self.disc2 = MLP([d] + [arch.disc_hidden] * 2 + [1], rng, "disc2", disc_init)
        # private frozen copies of target extractors, only used with a fixed teacher
        self.teacher_encoders: dict[str, ModalityEncoder] | None = None

    # -- parameter groups --------------------------------------------------
    def named_parameters(self) -> dict[str, Parameter]:
        groups = [*self.encoders.values(), self.student_proj, self.aux_proj, self.fusion,
                  self.classifier, self.disc1, self.disc2]
        if self.teacher_encoders:
            groups += list(self.teacher_encoders.values())
        return {p.name: p for g in groups for p in g.parameters()}

    def target_extractor_params(self) -> list[Parameter]:
        return [p for n in self.arch.targets for p in self.encoders[n].parameters()]

    def auxiliary_extractor_params(self) -> list[Parameter]:
        return [p for n in self.arch.auxiliaries for p in self.encoders[n].parameters()]

    def teacher_params(self) -> list[Parameter]:
        extra = [p for e in (self.teacher_encoders or {}).values() for p in e.parameters()]
        return self.fusion.parameters() + extra

    def student_params(self) -> list[Parameter]:
        return self.student_proj.parameters()

    def discriminator_params(self) -> list[Parameter]:
        return self.disc1.parameters() + self.disc2.parameters()

    def main_params(self) -> list[Parameter]:
        """Everything the main (non-discriminator) step may update."""
        return (self.target_extractor_params() + self.student_params() + self.fusion.parameters()
                + self.classifier.parameters())

    def fix_teacher(self) -> None:
        """Freeze the teacher: fusion weights plus a frozen snapshot of the target extractors."""
        self.teacher_encoders = {}
        for n in self.arch.targets:
            enc = ModalityEncoder(n, self.arch.input_dims[n], self.arch.embed_dim, self.arch.hidden, None,
                                  name=f"teacher.encoder.{n}")
            for src, dst in zip(self.encoders[n].parameters(), enc.parameters()):
                dst.data[:] = src.data
            enc.freeze()
            self.teacher_encoders[n] = enc
        self.fusion.freeze()

    # -- forward -------------------------------------------------------------
    def encode(self, batch: MultimodalBatch) -> dict[str, Tensor]:
        out = {}
        for n in self.arch.order:
            if n not in batch.features:
                sid = batch.ids[0] if batch.ids else "?"
                raise DataError(f"sample {sid!r}: missing modality {n!r}")
            x = batch.features[n]
            if x.shape[1] != self.arch.input_dims[n]:
                raise DataError(f"modality {n!r}: dim {x.shape[1]} != {self.arch.input_dims[n]}")
            out[n] = self.encoders[n](Tensor(x))
        return out

    def embed(self, batch: MultimodalBatch) -> tuple[Tensor, Tensor, Tensor]:
        enc = self.encode(batch)
        s = self.student_proj(dc.concat([enc[n] for n in self.arch.targets], axis=1))
        a = self.aux_proj(dc.concat([enc[n] for n in self.arch.auxiliaries], axis=1))
        teacher_in = dict(enc)
        if self.teacher_encoders:
            for n, e in self.teacher_encoders.items():
                teacher_in[n] = e(Tensor(batch.features[n]))
        m = self.fusion(dc.concat([teacher_in[n] for n in self.arch.order], axis=1))
        return m, s, a

    def student_embed(self, batch: MultimodalBatch) -> Tensor:
        enc = {n: self.encoders[n](Tensor(batch.features[n])) for n in self.arch.targets}
        return self.student_proj(dc.concat([enc[n] for n in self.arch.targets], axis=1))

    def classify(self, reps: Tensor) -> Tensor:
        return self.classifier(reps)

    def discriminate(self, d_id: int, reps: Tensor, frozen: bool = False) -> Tensor:
        net = {1: self.disc1, 2: self.disc2}.get(d_id)
        if net is None:
            raise ConfigurationError(f"discriminator id must be 1 or 2, got {d_id}")
        if reps.shape[0] == 0:
            return Tensor(np.zeros((0, 1)))
        return dc.clamp(dc.sigmoid(net(reps, frozen)))


def pretrain_auxiliary(model: AmidModel, dataset: MultimodalBatch, epochs: int, batch_size: int,
                       lr: float, seed: int, head_tau: float = 0.1) -> None:
    """Fit the auxiliary extractors with cross-entropy through a throwaway head, then freeze them."""
    from .data import batches
    from .losses import cross_entropy

    arch = model.arch
    rng = np.random.default_rng([seed, 101])
    # cosine-softmax head: A is only ever consumed through cosine similarity
    protos = Parameter(rng.normal(size=(arch.num_classes, arch.embed_dim)), name="aux.pretrain_head")
    params = model.auxiliary_extractor_params() + [protos]
    opt = dc.Adam(params, lr=lr)
    for epoch in range(epochs):
        for batch in batches(dataset, batch_size, seed + 1000, epoch):
            feats = [model.encoders[n](Tensor(batch.features[n])) for n in arch.auxiliaries]
            a = model.aux_proj(dc.concat(feats, axis=1))
            loss = cross_entropy(dc.cosine_matrix(a, protos) * (1.0 / head_tau), batch.labels)
            opt.zero_grad()
            loss.backward()
            opt.step()
    for n in arch.auxiliaries:
        model.encoders[n].freeze()


# -- checkpoints -------------------------------------------------------------

def state_dict(model: AmidModel) -> dict:
    return {name: {"shape": list(p.shape), "values": p.data.reshape(-1).tolist(), "trainable": p.trainable}
            for name, p in model.named_parameters().items()}


def load_state_dict(model: AmidModel, params: dict) -> None:
    if any(k.startswith("teacher.encoder.") for k in params) and not model.teacher_encoders:
        model.fix_teacher()
    own = model.named_parameters()
    missing = set(own) - set(params)
    if missing:
        raise DataError(f"checkpoint lacks parameter {sorted(missing)[0]!r}")
    for name, p in own.items():
        entry = params[name]
        if list(p.shape) != list(entry["shape"]):
            raise DataError(f"parameter {name!r}: shape {entry['shape']} != {list(p.shape)}")
        p.data[...] = np.array(entry["values"], dtype=np.float64).reshape(p.shape)
        if entry.get("trainable", True):
            p.unfreeze()
        else:
            p.freeze()


def save_checkpoint(path: str | os.PathLike, model: AmidModel, extra: dict | None = None) -> None:
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "params": state_dict(model)}
    if extra:
        doc.update(extra)
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
    os.replace(tmp, path)


def read_checkpoint(path: str | os.PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path}: not an amid checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return doc
