import csv
import subprocess
import sys

import pytest

from dsfl.cli import CSV_COLUMNS, format_value, main

TINY = "image_size = 8\nn_samples = 60\ntotal_meds = 6\nhidden_dim = 16\nlatent_dim = 8\nrounds = {rounds}\n"


@pytest.fixture
def config(tmp_path):
    def make(rounds=2, extra=""):
        path = tmp_path / f"cfg_{rounds}.txt"
        path.write_text(TINY.format(rounds=rounds) + extra)
        return str(path)

    return make


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_format_value():
    assert format_value(float("inf")) == "inf"
    assert format_value(0.1) == "0.1"
    assert format_value(1 / 3) == repr(1 / 3)
    assert format_value(7) == "7"


def test_zero_rounds_header_only(config, tmp_path):
    assert main(["run", config(0), "--out", str(tmp_path / "o")]) == 0
    assert rows(tmp_path / "o" / "dsfl.csv") == [CSV_COLUMNS]
    assert (tmp_path / "o" / "manifest.txt").exists()


def test_run_writes_one_row_per_round(config, tmp_path):
    assert main(["run", config(3), "--out", str(tmp_path / "o")]) == 0
    table = rows(tmp_path / "o" / "dsfl.csv")
    assert table[0] == CSV_COLUMNS
    assert [r[0] for r in table[1:]] == ["1", "2", "3"]


def test_run_deterministic(config, tmp_path):
    cfg = config(2)
    assert main(["run", cfg, "--algo", "all", "--out", str(tmp_path / "a")]) == 0
    assert main(["run", cfg, "--algo", "all", "--out", str(tmp_path / "b")]) == 0
    for algo in ("dsfl", "dfedavg", "qdfedavg"):
        assert (tmp_path / "a" / f"{algo}.csv").read_bytes() == (tmp_path / "b" / f"{algo}.csv").read_bytes()


def test_algo_all_same_seed_column(config, tmp_path):
    assert main(["run", config(2), "--algo", "all", "--seed", "11", "--out", str(tmp_path / "o")]) == 0
    for algo in ("dsfl", "dfedavg", "qdfedavg"):
        table = rows(tmp_path / "o" / f"{algo}.csv")
        assert {r[2] for r in table[1:]} == {"11"}
        assert {r[1] for r in table[1:]} == {algo}


def test_manifest_snapshot_matches_config(config, tmp_path):
    from dsfl.core import load_config, parse_config

    cfg_path = config(1)
    main(["run", cfg_path, "--seed", "4", "--out", str(tmp_path / "o")])
    text = (tmp_path / "o" / "manifest.txt").read_text()
    assert "version = v" in text
    snapshot = text.split("[config]\n", 1)[1]
    assert parse_config(snapshot) == load_config(cfg_path).replace(seed=4)


def test_out_from_environment(config, tmp_path, monkeypatch):
    monkeypatch.setenv("DSFL_OUT_DIR", str(tmp_path / "env"))
    assert main(["run", config(0)]) == 0
    assert (tmp_path / "env" / "dsfl.csv").exists()


def test_invalid_config_exit_2(config, tmp_path, capsys):
    cfg = config(1, "snr_min_db = 30\ncr_max = 1.5\n")
    assert main(["run", cfg, "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "snr_min_db < snr_max_db" in err and "cr_max < 1" in err
    assert not (tmp_path / "o").exists()


def test_unknown_key_exit_2(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("rounds = 1\nfoo = 2\n")
    assert main(["run", str(bad), "--out", str(tmp_path / "o")]) == 2


def test_runtime_failure_exit_1(config, tmp_path, capsys, monkeypatch):
    import dsfl.federation as fed

    def boom(*a, **k):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(fed, "inter_bs_round", boom)
    assert main(["run", config(2), "--out", str(tmp_path / "o")]) == 1
    assert "round 1" in capsys.readouterr().err


def test_gen_data(tmp_path):
    out = tmp_path / "d"
    assert main(["gen-data", "--n", "10", "--size", "8", "--seed", "2", "--out", str(out)]) == 0
    pgms = sorted(out.glob("*.pgm"))
    assert len(pgms) == 10
    table = rows(out / "labels.csv")
    assert table[0] == ["file", "label"] and len(table) == 11
    for name, label in table[1:]:
        assert name.endswith(f"_{label}.pgm") and (out / name).exists()


def test_gen_data_reproducible(tmp_path):
    for d in ("a", "b"):
        main(["gen-data", "--n", "6", "--size", "8", "--seed", "5", "--out", str(tmp_path / d)])
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_gen_data_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-data", "--n", "4", "--size", "8", "--out", str(blocker / "sub")]) == 1


def test_generated_data_feeds_a_run(tmp_path):
    main(["gen-data", "--n", "60", "--size", "8", "--out", str(tmp_path / "d")])
    cfg = tmp_path / "c.txt"
    cfg.write_text(TINY.format(rounds=1) + f"dataset_source = {tmp_path / 'd'}\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert len(rows(tmp_path / "o" / "dsfl.csv")) == 2


def test_report_single_algo(config, tmp_path, capsys):
    main(["run", config(2), "--out", str(tmp_path / "o")])
    capsys.readouterr()
    assert main(["report", "--in", str(tmp_path / "o")]) == 0
    out = capsys.readouterr().out
    body = [line for line in out.splitlines() if line.startswith("dsfl ")]
    assert len(body) == 1
    assert "n/a" in out


def test_report_ordering_flag(config, tmp_path, capsys):
    main(["run", config(2), "--algo", "all", "--out", str(tmp_path / "o")])
    capsys.readouterr()
    assert main(["report", "--in", str(tmp_path / "o")]) == 0
    assert "energy ordering dsfl < qdfedavg < dfedavg: PASS" in capsys.readouterr().out


def test_report_empty_dir(tmp_path):
    (tmp_path / "e").mkdir()
    assert main(["report", "--in", str(tmp_path / "e")]) == 1


def test_report_garbled(tmp_path, capsys):
    d = tmp_path / "g"
    d.mkdir()
    (d / "dsfl.csv").write_text(",".join(CSV_COLUMNS) + "\n1,dsfl,0,abc\n")
    assert main(["report", "--in", str(d)]) == 1
    assert "dsfl.csv" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "dsfl", "gen-data", "--n", "4", "--size", "8", "--out", str(tmp_path / "m")],
        capture_output=True,
    )
    assert proc.returncode == 0
    assert len(list((tmp_path / "m").glob("*.pgm"))) == 4
