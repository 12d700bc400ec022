from __future__ import annotations

import json

import pytest

from stegadapt.cli import main


@pytest.fixture()
def workspace(tmp_path, tiny_config_dict):
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(tiny_config_dict, indent=2))
    return tmp_path, config_path


def _run(config_path, out_dir, *argv):
    return main([*argv, "-c", str(config_path), "--out-dir", str(out_dir)])


def test_gen_data_writes_cache(workspace, capsys):
    tmp, config = workspace
    assert _run(config, tmp / "out", "gen-data") == 0
    printed = capsys.readouterr().out
    assert "domain S" in printed and "domain F" in printed
    cache = list((tmp / "out" / "data").glob("*/COMPLETE"))
    assert len(cache) == 1


def test_pretrain_adapt_evaluate_chain(workspace):
    tmp, config = workspace
    out = tmp / "out"
    assert _run(config, out, "pretrain", "--source", "S", "--target", "F", "--seed", "0") == 0
    run_dir = out / "runs" / "S__F" / "none" / "seed0"
    assert (run_dir / "pretrain.npz").exists()
    assert (run_dir / "pretrain_log.jsonl").exists()

    assert _run(config, out, "adapt", "--source", "S", "--target", "F", "--seed", "0") == 0
    assert (run_dir / "adapted.npz").exists()
    rounds = [json.loads(l) for l in (run_dir / "rounds.jsonl").read_text().splitlines()]
    assert [r["round"] for r in rounds] == [1, 2]

    assert _run(config, out, "evaluate", "--source", "S", "--target", "F", "--seed", "0") == 0
    csv_path = out / "results" / "evaluate_S__F_none_test.csv"
    assert csv_path.exists()
    header, row = csv_path.read_text().splitlines()
    assert header.startswith("source,target")
    assert row.startswith("S,F,1,flc,none,0,")


def test_evaluate_reruns_byte_identical(workspace):
    tmp, config = workspace
    out = tmp / "out"
    _run(config, out, "pretrain", "--source", "S", "--target", "F", "--seed", "0")
    _run(config, out, "evaluate", "--source", "S", "--target", "F", "--seed", "0")
    csv_path = out / "results" / "evaluate_S__F_none_test.csv"
    first = csv_path.read_bytes()
    _run(config, out, "evaluate", "--source", "S", "--target", "F", "--seed", "0")
    assert csv_path.read_bytes() == first


def test_matrix_reruns_byte_identical(workspace):
    tmp, config = workspace
    out_a, out_b = tmp / "a", tmp / "b"
    assert _run(config, out_a, "matrix", "--seed", "0") == 0
    assert _run(config, out_b, "matrix", "--seed", "0") == 0
    csv_a = (out_a / "results" / "matrix.csv").read_bytes()
    csv_b = (out_b / "results" / "matrix.csv").read_bytes()
    assert csv_a == csv_b
    md_a = (out_a / "results" / "matrix.md").read_bytes()
    assert md_a == (out_b / "results" / "matrix.md").read_bytes()
    rows = csv_a.decode().splitlines()
    assert len(rows) == 3  # header + S=>F + F=>S


def test_ablate_emits_four_variants(workspace):
    tmp, config = workspace
    out = tmp / "out"
    assert _run(config, out, "ablate", "--source", "S", "--target", "F", "--seed", "0") == 0
    csv_path = out / "results" / "ablation_S__F.csv"
    lines = csv_path.read_text().splitlines()
    variants = [line.split(",")[4] for line in lines[1:]]
    assert variants == ["none", "w-PL", "w-FF", "w-SLB"]
    md = (out / "results" / "ablation_S__F.md").read_text()
    assert md.count("| w-") == 2 or "w-PL" in md


def test_export_features_writes_projection(workspace):
    tmp, config = workspace
    out = tmp / "out"
    _run(config, out, "pretrain", "--source", "S", "--target", "F", "--seed", "0")
    assert (
        _run(config, out, "export-features", "--source", "S", "--target", "F", "--seed", "0", "--split", "val")
        == 0
    )
    proj = out / "results" / "projection_F_val.csv"
    lines = proj.read_text().splitlines()
    assert lines[0] == "id,x,y,label"
    assert len(lines) == 9  # 4 cover + 4 stego


def test_missing_config_reports_error(tmp_path, capsys):
    code = main(["gen-data", "-c", str(tmp_path / "nope.json"), "--out-dir", str(tmp_path)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_unknown_config_key_reports_error(tmp_path, capsys):
    config = tmp_path / "config.json"
    config.write_text(json.dumps({"data": {"domains": {"A": "x"}, "typo_key": 1}}))
    code = main(["gen-data", "-c", str(config), "--out-dir", str(tmp_path)])
    assert code == 1
    assert "typo_key" in capsys.readouterr().err
