import csv
import json

import pytest

from paldbp.cdc import FIR_LENGTHS
from paldbp.cli import ConfigError, load_config, main
from paldbp.metrics import q2_from_ber

SMALL = {
    "link": {"n_spans": 2, "steps_per_span": 4},
    "system": {"n_symbols": 256, "n_train_frames": 8, "n_test_frames": 4},
    "launch_dbm": [-2.0, 0.0],
    "train": {"epochs": 2, "batch_size": 4},
    "schemes": ["cdc", "ldbp-1", "pa-2"],
}


def rows(text):
    lines = [line for line in text.splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = d / "cfg.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["simulate", "--config", str(cfg), "--split", "train", "--out", str(d / "train.bin")]) == 0
    assert main(["simulate", "--config", str(cfg), "--split", "test", "--out", str(d / "test.bin")]) == 0
    return d, cfg


def test_precedence_flag_over_file_over_default(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"link": {"n_spans": 4}, "seed": 7}))
    assert load_config(None, [])["link"]["n_spans"] == 20
    assert load_config(str(p), [])["link"]["n_spans"] == 4
    cfg = load_config(str(p), ["link.n_spans=2", "train.learning_rate=0.01"])
    assert cfg["link"]["n_spans"] == 2 and cfg["train"]["learning_rate"] == 0.01 and cfg["seed"] == 7


def test_config_errors_name_the_field(tmp_path):
    with pytest.raises(ConfigError, match="link.colour"):
        load_config(None, ["link.colour=1"])
    with pytest.raises(ConfigError, match="spans_per_step"):
        load_config(None, ["model.spans_per_step=3"])
    assert main(["design", "--set", "model.mode=xyz", "--out-dir", str(tmp_path)]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["design", "--config", str(bad), "--out-dir", str(tmp_path)]) == 2


def test_missing_artifact_is_io_error(tmp_path, capsys):
    assert main(["evaluate", "--dataset", str(tmp_path / "none.bin")]) == 4
    assert "simulate" in capsys.readouterr().err
    assert main(["complexity"]) == 4
    assert "sweep" in capsys.readouterr().err


def test_design_lengths(tmp_path):
    assert main(["design", "--spans", "1", "2", "--out-dir", str(tmp_path)]) == 0
    f1 = json.loads((tmp_path / "filter_S1.json").read_text())
    assert len(f1["half_taps"]) * 2 - 1 == 77 and "config_digest" in f1
    summary = rows((tmp_path / "design_summary.csv").read_text())
    assert [int(r["fir_length"]) for r in summary] == [FIR_LENGTHS[1], FIR_LENGTHS[2]] == [77, 149]
    assert int(summary[0]["c0_length"]) < int(summary[1]["c0_length"])
    assert main(["design", "--set", "chi_db=0", "--out-dir", str(tmp_path / "z")]) == 0
    assert rows((tmp_path / "z" / "design_summary.csv").read_text())[0]["c0_length"] == "1"


def test_evaluate_linear_noiseless_cdc_is_error_free(tmp_path, capsys):
    over = ["--set", "link.gamma=0", "--set", "system.noise=false", "--set", "system.n_train_frames=2",
            "--set", "link.n_spans=2", "--set", "system.n_symbols=512"]
    assert main(["simulate", *over, "--out", str(tmp_path / "lin.bin")]) == 0
    capsys.readouterr()
    assert main(["evaluate", *over, "--dataset", str(tmp_path / "lin.bin"), "--out", str(tmp_path / "e.csv")]) == 0
    text = (tmp_path / "e.csv").read_text()
    assert text.startswith("# config_digest=")
    for r in rows(text):
        assert float(r["ber"]) == 0.0 and r["scheme"] == "cdc"
        assert r["q2_db"] == "inf"
        assert float(r["q2_lower_bound_db"]) == pytest.approx(q2_from_ber(1 / int(r["bits_counted"])))


def test_train_evaluate_prune_complexity(work, capsys):
    d, cfg = work
    c = ["--config", str(cfg)]
    assert main(["train", *c, "--dataset", str(d / "train.bin"), "--power", "0", "--out-dir", str(d / "run")]) == 0
    for name in ("model.json", "record.csv", "manifest.json"):
        assert "config_digest" in (d / "run" / name).read_text()
    assert main(["evaluate", *c, "--dataset", str(d / "test.bin"), "--model", str(d / "run" / "model.json"),
                 "--out", str(d / "ev.csv")]) == 0
    ev = rows((d / "ev.csv").read_text())
    assert [r["scheme"] for r in ev] == ["pa-1", "pa-1"]
    assert main(["prune", *c, "--model", str(d / "run" / "model.json"), "--dataset", str(d / "train.bin"),
                 "--power", "0", "--c0-length", "3", "--set", "pruning.finetune_epochs=1",
                 "--out", str(d / "pruned.json")]) == 0
    assert json.loads((d / "pruned.json").read_text())["steps"][0]["nl"]["c0_half_taps"].__len__() == 2
    capsys.readouterr()
    assert main(["complexity", *c, "--model", str(d / "pruned.json")]) == 0
    out = rows(capsys.readouterr().out)
    tde = [r for r in out if r["linear"] == "tde"][0]
    counted = [r for r in out if r["linear"] == "tde-counted"][0]
    assert float(tde["mults_per_sample"]) == float(counted["mults_per_sample"])


def test_sweep_one_row_per_cell_and_idempotent(work, capsys):
    d, cfg = work
    args = ["sweep", "--config", str(cfg), "--train", str(d / "train.bin"), "--test", str(d / "test.bin")]
    assert main([*args, "--out", str(d / "s1.csv")]) == 0
    assert main([*args, "--out", str(d / "s2.csv")]) == 0
    t1 = (d / "s1.csv").read_text()
    assert t1 == (d / "s2.csv").read_text()
    r = rows(t1)
    assert len(r) == 2 * 3
    assert {(x["power_dbm"], x["scheme"]) for x in r} == {(p, s) for p in ("-2.0", "0.0")
                                                          for s in ("cdc", "ldbp-1", "pa-2")}
    capsys.readouterr()
    assert main(["complexity", "--config", str(cfg), "--gains", str(d / "s1.csv")]) == 0
    fig = rows(capsys.readouterr().out)
    assert {x["scheme"] for x in fig} == {"ldbp", "pa"}


def test_threads_env_default(monkeypatch, tmp_path):
    from paldbp.cli import build_parser

    monkeypatch.setenv("NLC_THREADS", "3")
    assert build_parser().parse_args(["design"]).threads == 3
