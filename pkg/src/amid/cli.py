"""Command line entry point: ``amid {generate,train,ablate,eval,audit-bound}``.

Exit codes: 0 success, 1 configuration or input error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ABLATION_FLAGS, AmidConfig, config_from_mapping, parse_overrides, read_config_file
from .data import generate, save_features
from .errors import ConfigurationError, DataError, NumericalError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat TOML config file")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override, repeatable")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="amid", description="Cross-modal distillation experiments on numpy.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("generate", parents=[common], help="write the synthetic dataset as JSON lines")
    sub.add_parser("train", parents=[common], help="single training run")
    ab = sub.add_parser("ablate", parents=[common], help="reference run plus one-flag variants")
    ab.add_argument("--axes", default=",".join(ABLATION_FLAGS), help="comma-separated flags")
    ab.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    ev = sub.add_parser("eval", parents=[common], help="metrics for a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--split", choices=("train", "val", "test"), default="val")
    au = sub.add_parser("audit-bound", parents=[common], help="bound audit on a discrete toy task")
    au.add_argument("--epochs", type=int, default=50)
    au.add_argument("--symbols", type=int, default=4)
    au.add_argument("--purity", type=float, default=0.8)
    return p


def _config(args) -> AmidConfig:
    values = read_config_file(args.config) if args.config else {}
    values.update(parse_overrides(args.set))
    if args.seed is not None:
        values["seed"] = args.seed
    if args.out:
        values["out_dir"] = args.out
    return config_from_mapping(values)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ConfigurationError(f"expected comma-separated integers, got {text!r}") from None


def cmd_generate(args, cfg: AmidConfig) -> None:
    out = Path(cfg.out_dir or "data")
    data = generate(cfg.synthetic_spec())
    out.mkdir(parents=True, exist_ok=True)
    for name, split in data:
        save_features(split, out / f"{name}.jsonl")
    print(f"wrote {sum(len(s) for _, s in data)} samples to {out}")


def cmd_train(args, cfg: AmidConfig) -> None:
    from .trainer import train

    res = train(cfg)
    r = res.test
    print(f"best epoch {res.best_epoch}: test student {r.acc_student:.4f} teacher {r.acc_teacher:.4f} "
          f"R@1 {r.r_at_k[1]:.4f} WA {r.wa:.4f} UA {r.ua:.4f}")
    if cfg.out_dir:
        print(f"metrics and checkpoints in {cfg.out_dir}")


def cmd_ablate(args, cfg: AmidConfig) -> None:
    from .trainer import format_ablation, run_ablation_suite

    axes = [a.strip() for a in args.axes.split(",") if a.strip()]
    rows, summary = run_ablation_suite(cfg, axes, _int_list(args.seeds))
    text = format_ablation(rows + summary)
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out_dir) / "ablation.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_eval(args, cfg: AmidConfig) -> None:
    from .trainer import evaluate, load_trained

    model, ckpt_cfg, data, doc = load_trained(args.checkpoint)
    split = getattr(data, args.split)
    gallery = None if ckpt_cfg.retrieval == "leave_one_out" else data.train
    r = evaluate(model, split, gallery, data.num_classes)
    # run-state checkpoints count finished epochs; best.json stores the epoch index
    epoch = doc.get("epoch")
    if "run_state" in doc and epoch is not None:
        epoch -= 1
    row = {"epoch": epoch, "split": args.split, "acc_student": r.acc_student,
           "acc_teacher": r.acc_teacher, "gap": r.gap, "r_at_1": r.r_at_k[1], "r_at_5": r.r_at_k[5],
           "wa": r.wa, "ua": r.ua}
    print(json.dumps(row))


def cmd_audit_bound(args, cfg: AmidConfig) -> None:
    from .evaluation import ToyBoundTask, noisy_diagonal_joint

    joint = noisy_diagonal_joint(args.symbols, args.purity)
    task = ToyBoundTask(joint, tau=cfg.tau, batch_size=cfg.batch_size, seed=cfg.seed)
    lines = []
    for epoch, a in enumerate(task.run(args.epochs)):
        lines.append(json.dumps({"epoch": epoch, "bound": a.bound, "exact_mi": a.exact, "slack": a.slack}))
    text = "\n".join(lines) + "\n"
    if cfg.out_dir:
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(cfg.out_dir) / "bound_audit.jsonl").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "ablate": cmd_ablate,
            "eval": cmd_eval, "audit-bound": cmd_audit_bound}


def main(argv: list[str] | None = None) -> int:
    try:
        args = _parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except NumericalError as exc:
        print(f"amid: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigurationError, DataError, FileNotFoundError) as exc:
        print(f"amid: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
