import json

import pytest

from convemo.cli import main
from convemo.config import TrainConfig
from convemo.data import load_dataset
from convemo.trainer import load_checkpoint


def read_jsonl(text):
    return [json.loads(line) for line in text.strip().splitlines()]


SMALL = dict(latent_dim=8, d_fusion=8, proj_dim=4, n_heads=2, n_layers=1, jacobi_order_R=2, steps=10)


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "small.cfg"
    TrainConfig(**SMALL).save(path)
    return str(path)


def test_synth_writes_loadable_dataset(tmp_path, capsys):
    out = tmp_path / "data.txt"
    assert main(["synth", "--out", str(out), "--seed", "5", "--conversations", "3"]) == 0
    ds = load_dataset(out)
    assert len(ds) == 3
    record = read_jsonl(capsys.readouterr().out)[0]
    assert record["conversations"] == 3


def test_train_eval_round(tmp_path, small_config_file, capsys):
    data = tmp_path / "data.txt"
    ckpt = tmp_path / "model.ckpt"
    log = tmp_path / "log.jsonl"
    main(["synth", "--out", str(data), "--seed", "1", "--conversations", "4", "--max-len", "4"])
    capsys.readouterr()

    rc = main(
        ["train", "--config", small_config_file, "--data", str(data), "--out", str(ckpt), "--log", str(log)]
    )
    assert rc == 0
    summary = read_jsonl(capsys.readouterr().out)[-1]
    assert summary["split"] == "train"
    assert 0.0 <= summary["wf1"] <= 1.0

    records = read_jsonl(log.read_text())
    assert len(records) == 10
    assert {"step", "loss_total", "loss_cls", "loss_cl", "loss_dec", "loss_prt"} <= set(records[0])

    assert load_checkpoint(ckpt).step == 10

    rc = main(["eval", "--ckpt", str(ckpt), "--data", str(data)])
    assert rc == 0
    result = read_jsonl(capsys.readouterr().out)[0]
    assert result["split"] == "eval"
    assert len(result["per_class_f1"]) == 4
    assert len(result["confusion"]) == 4


def test_train_with_synth_source(tmp_path, small_config_file, capsys):
    ckpt = tmp_path / "model.ckpt"
    rc = main(
        [
            "train",
            "--config",
            small_config_file,
            "--synth",
            "--seed",
            "2",
            "--conversations",
            "3",
            "--max-len",
            "3",
            "--out",
            str(ckpt),
        ]
    )
    assert rc == 0
    assert ckpt.exists()
    records = read_jsonl(capsys.readouterr().out)
    assert records[-1]["split"] == "train"


def test_gradcheck_small(tmp_path, capsys):
    cfg = tmp_path / "tiny.cfg"
    TrainConfig(latent_dim=6, d_fusion=6, proj_dim=3, n_heads=2, n_layers=1, jacobi_order_R=1).save(cfg)
    rc = main(["gradcheck", "--config", str(cfg), "--samples", "40"])
    record = read_jsonl(capsys.readouterr().out)[0]
    assert rc == 0
    assert record["passed"] is True
    assert record["max_relative_error"] < 1e-5


def test_gradcheck_fails_on_impossible_tolerance(capsys, tmp_path):
    cfg = tmp_path / "tiny.cfg"
    TrainConfig(latent_dim=6, d_fusion=6, proj_dim=3, n_heads=2, n_layers=1, jacobi_order_R=1).save(cfg)
    rc = main(["gradcheck", "--config", str(cfg), "--samples", "5", "--tolerance", "1e-30"])
    assert rc == 1
    assert read_jsonl(capsys.readouterr().out)[0]["passed"] is False


def test_ablate(tmp_path, small_config_file, capsys):
    rc = main(
        [
            "ablate",
            "--flag",
            "disable_shared_branch",
            "--config",
            small_config_file,
            "--synth",
            "--conversations",
            "4",
            "--max-len",
            "3",
        ]
    )
    assert rc == 0
    record = read_jsonl(capsys.readouterr().out)[0]
    assert record["flags"] == ["disable_shared_branch"]
    assert record["split"] == "held_out"


def test_ablate_rejects_unknown_flag(small_config_file):
    with pytest.raises(SystemExit):
        main(["ablate", "--flag", "disable_everything", "--config", small_config_file, "--synth"])
