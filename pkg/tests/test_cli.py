import csv
import io
import json

import pytest

from amid import cli, losses

FAST = ["--set", "epochs=3", "--set", "t_start=1", "--set", "per_class=10", "--set", "aux_pretrain_epochs=1",
        "--set", "embed_dim=8", "--set", "hidden=16", "--set", "disc_hidden=8", "--set", "batch_size=8"]


def test_train_then_eval_reproduces_logged_rows(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--out", str(out), "--seed", "1"] + FAST) == 0
    rows = list(csv.DictReader(io.StringIO((out / "metrics.csv").read_text())))
    capsys.readouterr()

    assert cli.main(["eval", str(out / "last.json")]) == 0
    got = json.loads(capsys.readouterr().out)
    last_val = [r for r in rows if r["split"] == "val"][-1]
    assert got["epoch"] == int(last_val["epoch"])
    for k in ("acc_student", "acc_teacher", "gap", "r_at_1", "r_at_5", "wa", "ua"):
        assert got[k] == float(last_val[k]), k

    assert cli.main(["eval", str(out / "best.json"), "--split", "test"]) == 0
    got = json.loads(capsys.readouterr().out)
    test_row = rows[-1]
    for k in ("acc_student", "acc_teacher", "r_at_1", "wa", "ua"):
        assert got[k] == float(test_row[k]), k


def test_config_file_with_override(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("alpha3 = 1.0\nepochs = 2\nt_start = 1\n")
    q = tmp_path / "d.toml"
    q.write_text("alpha3 = 0.0\nepochs = 2\nt_start = 1\n")
    extra = FAST[8:]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["train", "--config", str(p), "--set", "alpha3=0", "--out", str(a)] + extra) == 0
    assert cli.main(["train", "--config", str(q), "--out", str(b)] + extra) == 0
    assert (a / "metrics.csv").read_text() == (b / "metrics.csv").read_text()


def test_missing_config_exits_1(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "nope.toml")]) == 1
    assert "nope.toml" in capsys.readouterr().err


@pytest.mark.parametrize("argv, token", [(["train", "--bogus"], "--bogus"),
                                         (["train", "--set", "wat=1"], "wat"),
                                         (["frobnicate"], "frobnicate"),
                                         (["train", "--set", "tau=-1"], "tau")])
def test_config_errors_exit_1(argv, token, capsys):
    assert cli.main(argv) == 1
    assert token in capsys.readouterr().err


def test_numeric_abort_exits_2(monkeypatch, tmp_path):
    monkeypatch.setattr(losses, "loss_jsd", lambda a, b: losses.dc.sum(a) * float("nan"))
    assert cli.main(["train"] + FAST) == 2


def test_generate_then_train_from_files(tmp_path, capsys):
    d = tmp_path / "data"
    assert cli.main(["generate", "--out", str(d), "--set", "per_class=10"]) == 0
    assert sorted(p.name for p in d.iterdir()) == ["test.jsonl", "train.jsonl", "val.jsonl"]
    assert cli.main(["train", "--set", f'features_dir="{d}"'] + FAST) == 0


def test_audit_bound(tmp_path, capsys):
    assert cli.main(["audit-bound", "--epochs", "3", "--out", str(tmp_path)]) == 0
    lines = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert len(lines) == 4 and all(r["slack"] >= -1e-9 for r in lines)
    assert (tmp_path / "bound_audit.jsonl").exists()


def test_ablate(tmp_path, capsys):
    assert cli.main(["ablate", "--axes", "no_d2", "--seeds", "0", "--out", str(tmp_path)] + FAST) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "variant,seed,acc_student,acc_teacher,gap"
    assert [l.split(",")[:2] for l in lines[1:]] == [["amid", "0"], ["no_d2", "0"], ["amid", "-1"], ["no_d2", "-1"]]
