import csv
import json
from pathlib import Path

import pytest

from wssci.cli import main
from wssci.patterns import load_pattern_file


def write_json(path, obj):
    path.write_text(json.dumps(obj), encoding="utf-8")
    return path


@pytest.fixture
def scenario_dir(tmp_path):
    cfg = write_json(tmp_path / "scen.json", {"seed": 5, "n_users": 80})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    return tmp_path / "sim"


def test_patterns_export_and_validate(tmp_path, capsys):
    out = tmp_path / "patterns.txt"
    assert main(["patterns", "export", "--out", str(out)]) == 0
    assert len(load_pattern_file(out)) == 63
    assert main(["patterns", "validate", str(out)]) == 0
    assert "63 patterns" in capsys.readouterr().out


def test_patterns_export_stdout(capsys):
    assert main(["patterns", "export"]) == 0
    body = [ln for ln in capsys.readouterr().out.splitlines() if ln and not ln.startswith(("#", "@"))]
    assert len(body) == 63


def test_patterns_validate_corrupt(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("a | single | ok\na | double | co%na | cough\n", encoding="utf-8")
    assert main(["patterns", "validate", str(bad)]) != 0
    assert ":2:" in capsys.readouterr().err
    assert main(["patterns", "validate", str(tmp_path / "missing.txt")]) != 0


def run_args(search, locations, out, *extra):
    return ["run", "--search", str(search), "--locations", str(locations), "--out", str(out),
            "--study-window", "2020-02-10..2020-02-23", *extra]


def test_run_null_scenario(tmp_path, salt):
    cfg = write_json(tmp_path / "null.json", {"seed": 1, "n_users": 30, "background_match_rate": 0, "cluster": None})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 0
    sim = tmp_path / "sim"
    assert main(run_args(sim / "search_log.csv", sim / "location_log.csv", tmp_path / "out")) == 0
    rows = [ln for ln in (tmp_path / "out" / "hotspots.csv").read_text().splitlines() if not ln.startswith("#")]
    assert rows == ["rank,block_code,total"]


def test_run_outputs_have_metadata_headers(scenario_dir, tmp_path, salt):
    out = tmp_path / "out"
    assert main(run_args(scenario_dir / "search_log.csv", scenario_dir / "location_log.csv", out, "--format", "geojson")) == 0
    for name in ("counter.csv", "hotspots.csv"):
        text = (out / name).read_text()
        assert "# wssci 0.1.0" in text and "config_sha256=" in text and "search_log.csv sha256=" in text
    doc = json.loads((out / "choropleth.geojson").read_text())
    assert doc["metadata"][0] == "wssci 0.1.0"
    stats = json.loads((out / "ingest_stats.json").read_text())
    assert stats["search"]["records_read"] == stats["search"]["records_kept"]


def split_by_user(src: Path, dst_a: Path, dst_b: Path, users_a: set[str]):
    with open(src, newline="") as fh:
        rows = list(csv.reader(fh))
    for dst, keep in ((dst_a, True), (dst_b, False)):
        with open(dst, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(rows[0])
            w.writerows(r for r in rows[1:] if (r[0] in users_a) == keep)


def counter_rows(path):
    return [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]


def test_split_inputs_merge_with_checkpoint(scenario_dir, tmp_path, salt):
    users_a = {f"user{k:05d}" for k in range(0, 80, 2)}
    parts = tmp_path / "parts"
    parts.mkdir()
    for name in ("search_log.csv", "location_log.csv"):
        split_by_user(scenario_dir / name, parts / f"a_{name}", parts / f"b_{name}", users_a)
    assert main(run_args(scenario_dir / "search_log.csv", scenario_dir / "location_log.csv", tmp_path / "single")) == 0
    assert main(run_args(parts / "a_search_log.csv", parts / "a_location_log.csv", tmp_path / "a")) == 0
    assert main(run_args(parts / "b_search_log.csv", parts / "b_location_log.csv", tmp_path / "b",
                         "--merge-with", str(tmp_path / "a" / "counter.csv"))) == 0
    assert counter_rows(tmp_path / "b" / "counter.csv") == counter_rows(tmp_path / "single" / "counter.csv")
    assert counter_rows(tmp_path / "b" / "hotspots.csv") == counter_rows(tmp_path / "single" / "hotspots.csv")


def test_jobs_flag_same_counts(scenario_dir, tmp_path, salt):
    args = (scenario_dir / "search_log.csv", scenario_dir / "location_log.csv")
    assert main(run_args(*args, tmp_path / "one")) == 0
    assert main(["--jobs", "3", *run_args(*args, tmp_path / "three")]) == 0
    assert (tmp_path / "one" / "counter.csv").read_bytes() == (tmp_path / "three" / "counter.csv").read_bytes()


def test_missing_input_leaves_nothing(scenario_dir, tmp_path, salt, capsys):
    out = tmp_path / "never"
    code = main(run_args(scenario_dir / "search_log.csv", tmp_path / "nope.csv", out))
    assert code != 0
    assert "inputs" in capsys.readouterr().err
    assert not out.exists()
    assert not list(tmp_path.glob(".wssci-stage-*"))


def test_stage_failure_is_atomic(scenario_dir, tmp_path, salt, capsys):
    bad = tmp_path / "bad_loc.csv"
    bad.write_text("who,when\n", encoding="utf-8")
    out = tmp_path / "out"
    assert main(run_args(scenario_dir / "search_log.csv", bad, out)) == 1
    assert "ingest-locations" in capsys.readouterr().err
    assert not out.exists()


def test_run_requires_salt(scenario_dir, tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("WSSCI_SALT", raising=False)
    assert main(run_args(scenario_dir / "search_log.csv", scenario_dir / "location_log.csv", tmp_path / "o")) == 2
    assert "unsalted" in capsys.readouterr().err


def test_ingest_subcommand(scenario_dir, tmp_path, salt):
    out = tmp_path / "ing"
    assert main(["ingest", "--search", str(scenario_dir / "search_log.csv"),
                 "--locations", str(scenario_dir / "location_log.csv"), "--out", str(out)]) == 0
    text = (out / "search_log.csv").read_text()
    assert "user0" not in text
    stats = json.loads((out / "ingest_stats.json").read_text())
    assert stats["locations"]["records_read"] > 0


def test_report_subcommand_from_checkpoint(scenario_dir, tmp_path, salt):
    run_out = tmp_path / "run"
    assert main(run_args(scenario_dir / "search_log.csv", scenario_dir / "location_log.csv", run_out)) == 0
    base = tmp_path / "pop.csv"
    base.write_text("block_code,value\n644142,12000\n", encoding="utf-8")
    rep = tmp_path / "rep"
    assert main(["report", "--checkpoint", str(run_out / "counter.csv"), "--out", str(rep), "--level", "second",
                 "--span", "day", "--from", "2020-02-10", "--to", "2020-02-16", "--threshold", "0",
                 "--top", "3", "--baseline", str(base)]) == 0
    hot = counter_rows(rep / "hotspots.csv")
    assert hot[0] == "rank,block_code,total" and all(len(r.split(",")[1]) == 6 for r in hot[1:])
    assert "level=second span=day from=2020-02-10 to=2020-02-16 threshold=0 top=3" in (rep / "hotspots.csv").read_text()
    assert (rep / "baseline_ratio.csv").exists()


def test_run_config_file_merging(scenario_dir, tmp_path, salt):
    rc = write_json(tmp_path / "rc.json", {"level": "second", "threshold": 0, "top": 2})
    out = tmp_path / "o"
    assert main(["--config", str(rc), *run_args(scenario_dir / "search_log.csv", scenario_dir / "location_log.csv", out, "--top", "1")]) == 0
    rows = counter_rows(out / "hotspots.csv")
    assert len(rows) == 2 and len(rows[1].split(",")[1]) == 6
    bad = write_json(tmp_path / "bad.json", {"levle": "second"})
    assert main(["--config", str(bad), *run_args(scenario_dir / "search_log.csv", scenario_dir / "location_log.csv", out)]) == 2


def test_simulate_then_run_prints_rank(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv("WSSCI_SALT", raising=False)
    cfg = write_json(tmp_path / "scen.json", {"seed": 7})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim"), "--then-run"]) == 0
    assert "planted_rank=1" in capsys.readouterr().out


def test_simulate_bad_seed_type(tmp_path, capsys):
    cfg = write_json(tmp_path / "scen.json", {"seed": "seven"})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "sim")]) == 2
    assert "seed" in capsys.readouterr().err
    assert not (tmp_path / "sim").exists()


def test_simulate_twice_identical(tmp_path, salt):
    cfg = write_json(tmp_path / "scen.json", {"seed": 8, "n_users": 60})
    for name in ("x", "y"):
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / name), "--then-run"]) == 0
    files_x = sorted(p.relative_to(tmp_path / "x") for p in (tmp_path / "x").rglob("*") if p.is_file())
    files_y = sorted(p.relative_to(tmp_path / "y") for p in (tmp_path / "y").rglob("*") if p.is_file())
    assert files_x == files_y
    for rel in files_x:
        assert (tmp_path / "x" / rel).read_bytes() == (tmp_path / "y" / rel).read_bytes()


def test_seed_flag_overrides_config(tmp_path):
    cfg = write_json(tmp_path / "scen.json", {"seed": 8, "n_users": 20})
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["--seed", "9", "simulate", "--config", str(cfg), "--out", str(tmp_path / "b")])
    assert json.loads((tmp_path / "b" / "scenario.json").read_text())["seed"] == 9
    assert (tmp_path / "a" / "search_log.csv").read_bytes() != (tmp_path / "b" / "search_log.csv").read_bytes()
