"""Training loop.

Per run:

0. pretrain the auxiliary extractor and freeze it;
1. warm-up epochs minimise ``cls + jsd`` only;
2. afterwards every batch does a discriminator step on detached
   representations, then a main step on the full objective using the
   freshly updated discriminators, then accumulates cosine statistics;
3. each epoch ends with the lambda update and validation metrics.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffcore as dc
from . import losses as L
from .config import AmidConfig, config_from_mapping
from .data import MultimodalBatch, SplitDataset, batches, generate, load_features
from .diffcore import Tensor
from .errors import ConfigurationError, NumericalError
from .evaluation import MetricReport, gap_curve, knn_retrieval, top1, wa_ua
from .models import (AmidModel, Architecture, load_state_dict, pretrain_auxiliary, read_checkpoint,
                     save_checkpoint, state_dict)
from .pairing import build_pair_index, instance_pair_index, multi_sample_pairs
from .schedule import LambdaState, accumulate_similarities, end_of_epoch_lambda, static_d, update_d

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("epoch", "split", "loss_cls", "loss_jsd", "loss_mi_s", "loss_mi_a", "loss_adv", "loss_disc",
               "lambda1", "lambda2", "d_est", "acc_student", "acc_teacher", "gap", "r_at_1", "r_at_5", "wa", "ua")


def load_dataset(config: AmidConfig) -> SplitDataset:
    if config.features_dir:
        root = Path(config.features_dir)
        parts = [load_features(root / f"{name}.jsonl") for name in ("train", "val", "test")]
        num_classes = int(max(p.labels.max() for p in parts)) + 1
        return SplitDataset(*parts, num_classes=num_classes)
    return generate(config.synthetic_spec())


def build_model(config: AmidConfig, data: SplitDataset) -> AmidModel:
    train = data.train
    arch = Architecture({k: v.shape[1] for k, v in train.features.items()}, dict(train.roles),
                        data.num_classes, config.embed_dim, config.hidden, config.disc_hidden)
    return AmidModel(arch, np.random.default_rng([config.seed, 1]))


def evaluate(model: AmidModel, split: MultimodalBatch, gallery: MultimodalBatch | None,
             num_classes: int, ks=(1, 5)) -> MetricReport:
    """Student/teacher accuracy, WA/UA and R@K (student representations) on one split."""
    with dc.no_grad():
        m, s, _ = model.embed(split)
        logits_s = model.classify(s).data
        logits_m = model.classify(m).data
        if gallery is None:
            r = knn_retrieval(s.data, split.labels, ks=ks)
        else:
            r = knn_retrieval(s.data, split.labels, model.student_embed(gallery).data, gallery.labels, ks=ks)
    wa, ua = wa_ua(logits_s, split.labels, num_classes)
    acc_s = top1(logits_s, split.labels)
    return MetricReport(top1=acc_s, wa=wa, ua=ua, r_at_k=r, acc_teacher=top1(logits_m, split.labels),
                        acc_student=acc_s)


@dataclass
class EpochRecord:
    epoch: int
    split: str
    losses: L.LossBreakdown
    lambda1: float
    lambda2: float
    d_est: float
    report: MetricReport
    disc1: float = float("nan")  # mean unweighted D1 loss over the epoch

    def row(self) -> dict:
        r = self.report
        row = {"epoch": self.epoch, "split": self.split, **self.losses.as_row(),
               "lambda1": self.lambda1, "lambda2": self.lambda2, "d_est": self.d_est,
               "acc_student": r.acc_student, "acc_teacher": r.acc_teacher, "gap": r.gap,
               "r_at_1": r.r_at_k.get(1, float("nan")), "r_at_5": r.r_at_k.get(5, float("nan")),
               "wa": r.wa, "ua": r.ua}
        return {k: row[k] for k in CSV_COLUMNS}

    def to_json(self) -> dict:
        r = self.report
        return {"epoch": self.epoch, "split": self.split, "losses": asdict(self.losses), "lambda1": self.lambda1, "lambda2": self.lambda2,
                "d_est": self.d_est, "disc1": self.disc1,
                "report": {"top1": r.top1, "wa": r.wa, "ua": r.ua, "r_at_k": {str(k): v for k, v in r.r_at_k.items()},
                           "acc_teacher": r.acc_teacher, "acc_student": r.acc_student}}

    @classmethod
    def from_json(cls, d: dict) -> "EpochRecord":
        r = d["report"]
        rep = MetricReport(r["top1"], r["wa"], r["ua"], {int(k): v for k, v in r["r_at_k"].items()},
                           r["acc_teacher"], r["acc_student"])
        return cls(d["epoch"], d["split"], L.LossBreakdown(**d["losses"]), d["lambda1"], d["lambda2"],
                   d["d_est"], rep, d["disc1"])


def format_csv(records: list[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in rec.row().items()})
    return buf.getvalue()


@dataclass
class TrainResult:
    config: AmidConfig
    history: list[EpochRecord]
    test: MetricReport
    best_epoch: int
    model: AmidModel = field(repr=False)

    @property
    def val(self) -> list[EpochRecord]:
        return [r for r in self.history if r.split == "val"]

    def series(self, attr: str) -> np.ndarray:
        return np.array([getattr(r.report, attr) for r in self.val])

    @property
    def best_val_student(self) -> float:
        return float(self.series("acc_student").max())

    def tail_mean(self, attr: str, frac: float = 0.25) -> float:
        s = self.series(attr)
        n = max(1, int(np.ceil(frac * len(s))))
        return float(s[-n:].mean())

    @property
    def tail_gap(self) -> float:
        return gap_curve(self.series("acc_teacher"), self.series("acc_student"))[1]

    def csv_text(self) -> str:
        return format_csv(self.history)


class Trainer:
    """Owns every piece of mutable run state so a run can be checkpointed and resumed."""

    def __init__(self, config: AmidConfig, data: SplitDataset | None = None):
        config.validate()
        self.config = config
        self.data = data or load_dataset(config)
        self.model = build_model(config, self.data)
        self.alphas = config.alphas
        self.lam_state = LambdaState(beta=config.beta)
        self.d_est = 1.0
        self.pair_rng = np.random.default_rng([config.seed, 2])
        self.epoch = 0
        self.history: list[EpochRecord] = []
        self.best = (-1.0, -1, None)  # (val acc, epoch, params)
        pretrain_auxiliary(self.model, self.data.train, config.aux_pretrain_epochs, config.batch_size,
                           config.lr, config.seed)
        self.main_opt = dc.Adam(self.model.main_params(), lr=config.lr)
        self.disc_opt = dc.Adam(self.model.discriminator_params(), lr=config.lr)
        if config.d_mode == "static":
            self.d_est = static_d(self.data.train.labels, config.batch_size)

    # -- helpers ----------------------------------------------------------------
    @property
    def adversarial(self) -> bool:
        return self.alphas[2] > 0 and self.config.baseline == "none"

    def current_lambda(self) -> tuple[float, float]:
        if self.config.no_d2:
            return 1.0, 0.0
        if self.config.uniform_lambda:
            return 0.5, 0.5
        lam = self.lam_state.lam
        return float(lam[0]), float(lam[1])

    def _baseline_step(self, batch: MultimodalBatch) -> dict:
        m, s, _ = self.model.embed(batch)
        rep = s if self.config.baseline == "student" else m
        loss = L.cross_entropy(self.model.classify(rep), batch.labels)
        self._main_update(loss, {"cls": loss, "jsd": 0.0}, warm=True)
        return {"cls": loss}

    def _main_update(self, loss: Tensor, parts: dict | None = None, warm: bool = False) -> None:
        if not np.isfinite(loss.item()):
            if parts:
                L.total_loss(parts, self.alphas, warm_up=warm)  # raises with the breakdown
            raise NumericalError(f"epoch {self.epoch}: non-finite loss {loss.item()}")
        self.main_opt.zero_grad()
        loss.backward()
        self.main_opt.step()

    def train_step(self, batch: MultimodalBatch, warm: bool) -> tuple[dict, float]:
        """One batch.  Returns the float loss parts and the unweighted D1 loss (nan if no D step)."""
        cfg, model = self.config, self.model
        if cfg.baseline != "none":
            parts = self._baseline_step(batch)
            return {k: v.item() for k, v in parts.items()}, float("nan")

        m, s, a = model.embed(batch)
        logits_s, logits_m = model.classify(s), model.classify(m)
        parts = {"cls": L.loss_cls(logits_s, logits_m, batch.labels), "jsd": L.loss_jsd(logits_s, logits_m)}
        disc1 = float("nan")
        if warm:
            total = L.objective(parts, self.alphas, warm_up=True)
        else:
            a1, a2, a3 = self.alphas
            index = build_pair_index(batch.labels)
            mi_index = instance_pair_index(len(batch)) if cfg.nce_positive_set else index
            pairs = multi_sample_pairs(index, self.pair_rng)
            v = np.array([p[0] for p in pairs], dtype=np.int64)
            eta1 = np.array([p[1] for p in pairs], dtype=np.int64)
            lam1, lam2 = self.current_lambda()
            if self.adversarial:
                m_multi, s_eta1 = m[v], s[eta1]
                t1, t2 = L.disc_terms(m, s, m_multi, s_eta1, model)
                dloss = t1 * (lam1 / len(batch))
                if len(v) and lam2:
                    dloss = dloss + t2 * (lam2 / self.d_est)
                self.disc_opt.zero_grad()
                dloss.backward()
                self.disc_opt.step()
                parts["disc"] = dloss
                disc1 = t1.item() / len(batch)
                parts["adv"] = L.loss_adv(s, s_eta1, model, lam1, lam2, self.d_est)
            if a1:
                parts["mi_s"] = L.loss_mi(m, s, mi_index, cfg.tau)
            if a2:
                parts["mi_a"] = L.loss_mi(m, a, mi_index, cfg.tau)
            total = L.objective(parts, self.alphas)
            accumulate_similarities(m.data, s.data, index, self.lam_state)
            if cfg.d_mode == "ema":
                self.d_est = update_d(len(v), self.d_est)
        self._main_update(total, parts, warm)
        return {k: t.item() for k, t in parts.items()}, disc1

    # -- epochs -----------------------------------------------------------------
    def run_epoch(self) -> EpochRecord:
        cfg = self.config
        epoch = self.epoch
        warm = epoch < cfg.warmup_epochs
        if cfg.fixed_teacher and epoch == cfg.warmup_epochs and self.model.teacher_encoders is None:
            self.model.fix_teacher()
        lam1, lam2 = self.current_lambda()
        sums: dict[str, float] = {}
        d1_vals = []
        n = 0
        for batch in batches(self.data.train, cfg.batch_size, cfg.seed, epoch):
            parts, d1 = self.train_step(batch, warm)
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            if np.isfinite(d1):
                d1_vals.append(d1)
            n += 1
        means = {k: v / n for k, v in sums.items()}
        breakdown = L.total_loss(means, self.alphas, warm_up=warm or cfg.baseline != "none")
        if not warm and cfg.baseline == "none" and self.lam_state.counts[0]:
            if cfg.no_d2 or cfg.uniform_lambda:
                self.lam_state.reset()
            else:
                end_of_epoch_lambda(self.lam_state, cfg.beta)
        gallery = None if cfg.retrieval == "leave_one_out" else self.data.train
        report = evaluate(self.model, self.data.val, gallery, self.data.num_classes)
        rec = EpochRecord(epoch, "val", breakdown, lam1, lam2, self.d_est, report,
                          float(np.mean(d1_vals)) if d1_vals else float("nan"))
        self.history.append(rec)
        if report.acc_student > self.best[0]:
            self.best = (report.acc_student, epoch, state_dict(self.model))
        logger.info("epoch %d student %.3f teacher %.3f", epoch, report.acc_student, report.acc_teacher)
        self.epoch += 1
        return rec

    def fit(self) -> TrainResult:
        cfg = self.config
        out = Path(cfg.out_dir) if cfg.out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
        while self.epoch < cfg.epochs:
            self.run_epoch()
            if out:
                (out / "metrics.csv").write_text(format_csv(self.history), encoding="utf-8")
                if cfg.checkpoint_every and self.epoch % cfg.checkpoint_every == 0:
                    self.save(out / "last.json")
        return self.finish(out)

    def finish(self, out: Path | None) -> TrainResult:
        last_params = state_dict(self.model)
        _, best_epoch, best_params = self.best
        if out:
            self.save(out / "last.json")
        test_model = self.model
        if best_params is not None:
            load_state_dict(self.model, best_params)
        gallery = None if self.config.retrieval == "leave_one_out" else self.data.train
        test = evaluate(test_model, self.data.test, gallery, self.data.num_classes)
        if out:
            save_checkpoint(out / "best.json", self.model, {"config": self.config.to_dict(), "epoch": best_epoch})
        load_state_dict(self.model, last_params)
        rec = EpochRecord(best_epoch, "test", L.LossBreakdown(), *self.current_lambda(), self.d_est, test)
        history = self.history + [rec]
        if out:
            (out / "metrics.csv").write_text(format_csv(history), encoding="utf-8")
        return TrainResult(self.config, history, test, best_epoch, self.model)

    # -- checkpoint / resume ----------------------------------------------------------
    def save(self, path: Path) -> None:
        extra = {
            "config": self.config.to_dict(),
            "epoch": self.epoch,
            "run_state": {
                "main_opt": self.main_opt.state_dict(),
                "disc_opt": self.disc_opt.state_dict(),
                "lambda": self.lam_state.state_dict(),
                "d_est": self.d_est,
                "pair_rng": self.pair_rng.bit_generator.state,
                "history": [r.to_json() for r in self.history],
                "best": {"acc": self.best[0], "epoch": self.best[1], "params": self.best[2]},
            },
        }
        save_checkpoint(path, self.model, extra)

    @classmethod
    def resume(cls, path: str | Path, config: AmidConfig | None = None) -> "Trainer":
        doc = read_checkpoint(path)
        config = config or config_from_mapping(doc["config"])
        trainer = cls.__new__(cls)
        trainer.config = config
        trainer.data = load_dataset(config)
        trainer.model = build_model(config, trainer.data)
        trainer.alphas = config.alphas
        load_state_dict(trainer.model, doc["params"])
        rs = doc["run_state"]
        trainer.main_opt = dc.Adam(trainer.model.main_params(), lr=config.lr)
        trainer.main_opt.load_state_dict(rs["main_opt"])
        trainer.disc_opt = dc.Adam(trainer.model.discriminator_params(), lr=config.lr)
        trainer.disc_opt.load_state_dict(rs["disc_opt"])
        trainer.lam_state = LambdaState.from_state(rs["lambda"])
        trainer.d_est = float(rs["d_est"])
        trainer.pair_rng = np.random.default_rng()
        trainer.pair_rng.bit_generator.state = rs["pair_rng"]
        trainer.epoch = int(doc["epoch"])
        trainer.history = [EpochRecord.from_json(r) for r in rs["history"]]
        b = rs["best"]
        trainer.best = (b["acc"], b["epoch"], b["params"])
        return trainer


def train(config: AmidConfig, data: SplitDataset | None = None) -> TrainResult:
    return Trainer(config, data).fit()


def load_trained(path: str | Path) -> tuple[AmidModel, AmidConfig, SplitDataset, dict]:
    """Rebuild the model, config and dataset stored in a checkpoint."""
    doc = read_checkpoint(path)
    if "config" not in doc:
        raise ConfigurationError(f"{path}: checkpoint has no embedded config")
    config = config_from_mapping(doc["config"])
    data = load_dataset(config)
    model = build_model(config, data)
    load_state_dict(model, doc["params"])
    return model, config, data, doc


# -- ablations -----------------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    seed: int
    acc_student: float
    acc_teacher: float
    gap: float


def run_ablation_suite(config: AmidConfig, axes, seeds) -> tuple[list[AblationRow], list[AblationRow]]:
    """Reference config plus one-flag-flipped variants on shared seeds.

    Returns per-seed rows ordered by (variant, seed), and per-variant means
    (seed = -1).  Accuracies are the best validation student top-1 and the
    teacher accuracy at that epoch.
    """
    from .config import ABLATION_FLAGS

    axes = list(axes)
    bad = [a for a in axes if a not in ABLATION_FLAGS]
    if bad:
        raise ConfigurationError(f"unknown ablation axis {bad[0]!r}")
    variants = [("amid", {})] + [(a, {a: True}) for a in sorted(axes)]
    rows = []
    for name, change in variants:
        for seed in sorted(seeds):
            cfg = config.replace(seed=seed, out_dir=str(Path(config.out_dir) / name / f"seed{seed}")
                                 if config.out_dir else "", **change)
            res = train(cfg)
            best = res.val[res.best_epoch]
            rows.append(AblationRow(name, seed, best.report.acc_student, best.report.acc_teacher, best.report.gap))
    summary = []
    for name, _ in variants:
        sel = [r for r in rows if r.variant == name]
        summary.append(AblationRow(name, -1, float(np.mean([r.acc_student for r in sel])),
                                   float(np.mean([r.acc_teacher for r in sel])),
                                   float(np.mean([r.gap for r in sel]))))
    return rows, summary


def format_ablation(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "seed", "acc_student", "acc_teacher", "gap"])
    for r in rows:
        w.writerow([r.variant, r.seed, repr(r.acc_student), repr(r.acc_teacher), repr(r.gap)])
    return buf.getvalue()
