import csv
import json

import pytest

from dsoc.cli import main

SMALL = {"name": "small", "num_channels": 4, "num_users": 3, "min_gap": 0.1, "delta": 0.05,
         "horizon": 4000, "variant": "static", "replications": 2, "seed": 5}
DYN = {"name": "dyn", "num_channels": 4, "num_users": 2, "min_gap": 0.1, "delta": 0.05, "horizon": 6000,
       "variant": "dynamic", "replications": 1, "seed": 1,
       "events": [{"slot": 2500, "kind": "enter"}, {"slot": 4500, "kind": "leave"}]}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def test_run_is_reproducible(tmp_path):
    cfg = write_cfg(tmp_path, {**SMALL, "replications": 1})
    for d in ("a", "b"):
        assert main(["run", "--config", cfg, "--out", str(tmp_path / d)]) == 0
    a = (tmp_path / "a" / "rep_0000" / "metrics.json").read_text()
    b = (tmp_path / "b" / "rep_0000" / "metrics.json").read_text()
    assert a == b


def test_run_writes_aggregate(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    agg = json.loads((tmp_path / "o" / "aggregate.json").read_text())
    assert 0.0 <= agg["fraction_in_soc"] <= 1.0
    assert agg["total_reward"]["n"] == 2
    assert agg["bounds"]["static"]["T_rh"] > 0
    assert "fraction_in_soc" in capsys.readouterr().out


def test_workers_env_matches_serial(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "s")]) == 0
    monkeypatch.setenv("SOC_SIM_WORKERS", "2")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    for r in ("rep_0000", "rep_0001"):
        assert (tmp_path / "s" / r / "metrics.json").read_text() == (tmp_path / "p" / r / "metrics.json").read_text()
    monkeypatch.setenv("SOC_SIM_WORKERS", "many")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "q")]) == 2


def test_unwritable_output_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = write_cfg(tmp_path, SMALL)
    assert main(["run", "--config", cfg, "--out", str(blocker / "sub")]) == 3


@pytest.mark.parametrize("patch", [{"delta": 1.5}, {"variant": "other"}, {"horizon": 0}, {"bogus": 1},
                                   {"events": [{"slot": 10, "kind": "enter"}]}])
def test_bad_config_exit_code(tmp_path, patch):
    cfg = write_cfg(tmp_path, {**SMALL, **patch})
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_missing_config_file(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.json"), "--out", str(tmp_path / "o")]) == 3


def test_bounds_rows(capsys):
    assert main(["bounds", "--K", "10", "--N", "10", "--delta", "0.05", "--min-gap", "0.05"]) == 0
    out = capsys.readouterr().out.splitlines()
    rows = {k.strip(): v.strip() for k, v in (line.split(" = ") for line in out if " = " in line)}
    assert rows["T_rh"] == "210" and rows["tau"] == "1800"
    assert json.loads(out[-1])["T_rh"] == 210


def test_bounds_dynamic(capsys):
    assert main(["bounds", "--K", "10", "--N", "5", "--min-gap", "0.05", "--dynamic", "--exits", "1"]) == 0
    last = json.loads(capsys.readouterr().out.splitlines()[-1])
    assert last["dynamic"]["T_s_d"] == 241 and last["dynamic"]["T_l_d"] == 1800


@pytest.mark.parametrize("argv", [["--delta", "1.0"], ["--delta", "0"], ["--min-gap", "0"]])
def test_bounds_rejects_bad_numbers(argv):
    base = {"--K": "4", "--N": "2", "--delta": "0.05", "--min-gap": "0.1"}
    for k, v in zip(argv[::2], argv[1::2]):
        base[k] = v
    assert main(["bounds", *[x for kv in base.items() for x in kv]]) == 2


def _traced_run(tmp_path, cfg):
    path = write_cfg(tmp_path, cfg)
    assert main(["run", "--config", path, "--out", str(tmp_path / "o"), "--trace"]) == 0
    return tmp_path / "o" / "rep_0000"


def test_analyze_fresh_trace_is_consistent(tmp_path, capsys):
    rep = _traced_run(tmp_path, {**SMALL, "replications": 1})
    assert main(["analyze", str(rep / "trace.csv"), str(rep / "matrix.json")]) == 0
    assert capsys.readouterr().out.strip().endswith("consistent")


def test_analyze_detects_corruption(tmp_path, capsys):
    rep = _traced_run(tmp_path, {**SMALL, "replications": 1})
    path = rep / "trace.csv"
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    target = next(n for n, r in enumerate(rows) if n > 2000 and r[rows[0].index("reward")] in ("0", "1"))
    col = rows[0].index("reward")
    rows[target][col] = "1" if rows[target][col] == "0" else "0"
    with open(path, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    assert main(["analyze", str(path), str(rep / "matrix.json")]) == 4
    cap = capsys.readouterr()
    assert "mismatch" in cap.out
    assert f"row {target}" in cap.err


def test_analyze_dynamic_timeline(tmp_path, capsys):
    rep = _traced_run(tmp_path, DYN)
    report = tmp_path / "report.json"
    assert main(["analyze", str(rep / "trace.csv"), str(rep / "matrix.json"), "--out", str(report)]) == 0
    kinds = {e["kind"] for e in json.loads(report.read_text())["soc_timeline"]}
    assert {"enter", "leave"} <= kinds


def test_presets_list_and_dump(tmp_path, capsys):
    assert main(["presets"]) == 0
    assert "static-small" in capsys.readouterr().out
    out = tmp_path / "p.json"
    assert main(["presets", "--dump", "dynamic-mixed", "--out", str(out)]) == 0
    cfg = json.loads(out.read_text())
    assert cfg["variant"] == "dynamic" and len(cfg["events"]) == 6
    assert main(["presets", "--dump", "nope"]) == 2


def test_usage_errors():
    assert main([]) == 2
    assert main(["run", "--out", "x"]) == 2
