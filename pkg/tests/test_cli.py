import csv
import io
import json

import numpy as np
import pytest

from dcqap.cli import CSV_COLUMNS, format_reports, run
from dcqap.instance import serialize_dat

from conftest import random_instance

SMALL = ["--m", "16"]


def write_instances(tmp_path, count=3, n=4):
    paths = []
    for k in range(count):
        inst = random_instance(n, 100 + k)
        path = tmp_path / f"inst{k}.dat"
        path.write_text(serialize_dat(inst))
        paths.append(str(path))
    return paths


def call(capsys, argv):
    code = run(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def strip(records):
    return [{k: v for k, v in r.items() if k != "time_s"} for r in records]


def test_solve_json(tmp_path, capsys):
    (path,) = write_instances(tmp_path, 1)
    code, out, _ = call(capsys, ["solve", path, "--seed", "1", *SMALL, "--best-known", "1"])
    assert code == 0
    (rec,) = json.loads(out)
    assert rec["seed"] == 1 and rec["instance"] == "inst0"
    assert {"obj", "gap_pct", "infeas", "time_s", "rank_out", "permutation", "certified"} <= set(rec)


def test_bench_records_deterministic(tmp_path, capsys):
    paths = write_instances(tmp_path)
    argv = ["bench", *paths, "--seeds", "0", "1", "--workers", "2", "--json", *SMALL]
    code, out1, _ = call(capsys, argv)
    assert code == 0
    code, out2, _ = call(capsys, argv)
    r1, r2 = json.loads(out1), json.loads(out2)
    assert len(r1) == 6
    assert [(r["instance"], r["seed"]) for r in r1] == sorted((f"inst{k}", s) for k in range(3) for s in (0, 1))
    assert strip(r1) == strip(r2)


def test_bench_csv_layout(tmp_path, capsys):
    paths = write_instances(tmp_path, 1)
    out_path = tmp_path / "table.csv"
    code, _, _ = call(capsys, ["bench", *paths, "--workers", "1", "--format", "csv", "--output", str(out_path), *SMALL])
    assert code == 0
    rows = list(csv.reader(io.StringIO(out_path.read_text())))
    assert tuple(rows[0]) == CSV_COLUMNS and len(rows) == 2


def test_csv_rounding():
    rec = {"instance": "nug12", "obj": 590.0, "gap_pct": 2.0761245, "infeas": 6.1e-6, "time_s": 12.345}
    rows = list(csv.reader(io.StringIO(format_reports([rec], "csv"))))
    assert rows[1] == ["nug12", "578", "590", "2.08", "6.1e-06", "12.3"]


def test_validate_consistent(capsys):
    from importlib import resources
    sln = resources.files("dcqap.data").joinpath("chr12a.sln")
    code, out, _ = call(capsys, ["validate", "chr12a", str(sln), "--perm", *"7 5 12 2 1 3 9 11 10 6 8 4".split()])
    assert code == 0
    rec = json.loads(out)
    assert rec["status"] == "consistent" and rec["value"] == 9552 and rec["candidate_value"] == 9552


def test_validate_inconsistent(tmp_path, capsys):
    bad = tmp_path / "bad.sln"
    bad.write_text("12 1\n" + " ".join(str(i) for i in range(1, 13)))
    code, _, err = call(capsys, ["validate", "chr12a", str(bad)])
    assert code == 3 and "numerical failure" in err


def test_data_dir_override(tmp_path, capsys, monkeypatch):
    write_instances(tmp_path, 1)
    monkeypatch.setenv("DCQAP_DATA_DIR", str(tmp_path))
    code, out, _ = call(capsys, ["solve", "inst0", *SMALL])
    assert code == 0 and json.loads(out)[0]["instance"] == "inst0"


def test_probe_brute_force(capsys):
    code, out, _ = call(capsys, ["probe", "brute-force", "--n", "4", "--seed", "2"])
    assert code == 0 and "value" in json.loads(out)


def test_exit_codes(tmp_path, capsys):
    assert call(capsys, ["frobnicate"])[0] == 1
    assert call(capsys, ["solve"])[0] == 1
    assert call(capsys, ["solve", "x", "--m", "notanint"])[0] == 1
    assert call(capsys, ["solve", str(tmp_path / "missing.dat")])[0] == 2
    junk = tmp_path / "junk.dat"
    junk.write_text("3\n1 2 x")
    assert call(capsys, ["solve", str(junk)])[0] == 2
    assert call(capsys, ["probe", "brute-force", "--n", "10"])[0] == 4
    assert call(capsys, ["probe", "error-bound", "--n", "5"])[0] == 4
    assert call(capsys, ["solve", str(junk), "--variant", "nope"])[0] == 1
