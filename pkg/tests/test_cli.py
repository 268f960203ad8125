import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from distreg.cli import HEADER, main
from distreg.instances import read_gap_meta, read_instance, read_meta


def _files(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_gen_random_deterministic(tmp_path):
    args = ["gen", "random", "--n", "100", "--d", "4", "--s", "2", "--seed", "7"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")
    shards, meta = read_instance(tmp_path / "a")
    assert meta["n"] == "100" and shards.s == 2


def test_gen_gap_band(tmp_path):
    out = tmp_path / "gap"
    assert main(["gen", "gap", "--n", "400", "--t", "1", "--sign", "positive",
                 "--out", str(out)]) == 0
    (n, t, delta, *_), = read_gap_meta(out / "gap.txt")
    assert (n, t) == (400, 1)
    assert 2 * 20 <= delta <= 6 * 20
    shards, _ = read_instance(out)
    assert shards.s == 4 * 1 + 2


def test_gen_padded(tmp_path):
    out = tmp_path / "pad"
    assert main(["gen", "padded", "--n", "144", "--d", "3", "--t", "0", "--out", str(out)]) == 0
    shards, meta = read_instance(out)
    assert meta["d"] == "3" and len(read_gap_meta(out / "gap.txt")) == 3


def test_missing_n_exits_2(capsys):
    assert main(["gen", "random", "--d", "2", "--out", "x"]) == 2
    assert "usage" in capsys.readouterr().err


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_run_consistent_and_csv(tmp_path):
    inst = tmp_path / "inst"
    main(["gen", "random", "--n", "600", "--d", "3", "--s", "3", "--consistent",
          "--seed", "1", "--out", str(inst)])
    csv_path = tmp_path / "out.csv"
    assert main(["run", "l2", "--instance", str(inst), "--gd-iters", "40",
                 "--out", str(csv_path)]) == 0
    assert main(["run", "l2", "--instance", str(inst), "--gd-iters", "40",
                 "--out", str(csv_path)]) == 0
    assert csv_path.read_text().splitlines()[0] == ",".join(HEADER)
    first, second = _rows(csv_path)
    assert abs(float(first["ratio"]) - 1) <= 1e-6
    first.pop("ms"), second.pop("ms")
    assert first == second
    bits = [int(first[k]) for k in ("bits_sketch", "bits_qr", "bits_iter", "bits_sample")]
    assert sum(bits) == int(first["bits_total"])
    assert (tmp_path / "out.csv.config").exists()


def test_run_lp_and_transcript(tmp_path):
    csv_path, tr = tmp_path / "lp.csv", tmp_path / "lp.tr"
    code = main(["run-lp", "--n", "800", "--d", "2", "--s", "2", "--seed", "3",
                 "--out", str(csv_path), "--transcript", str(tr)])
    assert code in (0, 1)
    row, = _rows(csv_path)
    assert int(row["bits_sample"]) > 0
    assert "# total" in tr.read_text()


def test_parameter_errors(tmp_path):
    assert main(["run-lp", "--n", "100", "--d", "2", "--s", "2", "--p", "2.5"]) == 2
    assert main(["sweep", "l2", "--axis", "s", "--values", "2,2,2"]) == 2


def test_missing_instance_exits_3(tmp_path):
    assert main(["run", "l2", "--instance", str(tmp_path / "none")]) == 3


def test_tampered_instance_exits_3(tmp_path):
    inst = tmp_path / "inst"
    main(["gen", "random", "--n", "50", "--d", "2", "--s", "2", "--out", str(inst)])
    lines = (inst / "A.txt").read_text().splitlines()
    first = lines[1].split()
    first[0] = str(int(first[0]) + 1)
    lines[1] = " ".join(first)
    (inst / "A.txt").write_text("\n".join(lines) + "\n")
    assert main(["run", "l2", "--instance", str(inst)]) == 3
    (inst / "shard_1_b.txt").write_text("3 1")
    assert main(["run", "l2", "--instance", str(inst)]) == 3


def test_config_file(tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("n = 400\nd = 2\ns = 2\ngd_iters = 12\n")
    csv_path = tmp_path / "c.csv"
    assert main(["--config", str(cfg), "run-l2", "--out", str(csv_path)]) in (0, 1)
    assert len(_rows(csv_path)) == 1
    bad = tmp_path / "bad.conf"
    bad.write_text("bogus = 1\n")
    assert main(["--config", str(bad), "run-l2", "--n", "10", "--d", "2", "--s", "2"]) == 2


def test_sweep_s_slope(tmp_path):
    out = tmp_path / "sw.csv"
    assert main(["sweep", "l2", "--axis", "s", "--values", "2,4,8,16", "--n", "1000",
                 "--d", "3", "--out", str(out)]) == 0
    summary = json.loads((tmp_path / "sw.csv.summary.json").read_text())
    assert abs(summary["slope_bits_total"] - 1) < 0.1
    assert len(_rows(out)) == 4


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "distreg.cli", "gen", "random", "--n", "20",
                           "--d", "2", "--s", "2", "--out", str(tmp_path / "e")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert (tmp_path / "e" / "meta.txt").exists()
