import csv
import json
import subprocess
import sys

import pytest

from robustedit.cli import main


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    kb, model = d / "kb.json", d / "model.json"
    assert run("gen-data", "--units", 6, "--variants", 4, "--seed", 1, "--out", kb) == 0
    assert run("train", "--kb", kb, "--epochs", 300, "--out", model) == 0
    return d, kb, model


def test_module_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "robustedit", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "gen-data" in out.stdout


def test_gen_data_is_byte_reproducible(files, tmp_path):
    _, kb, _ = files
    again = tmp_path / "kb2.json"
    assert run("gen-data", "--units", 6, "--variants", 4, "--seed", 1, "--out", again) == 0
    assert again.read_bytes() == kb.read_bytes()
    assert json.loads((tmp_path / "kb2.json.config.json").read_text())["seed"] == 1


def test_usage_errors_exit_2(files, tmp_path):
    d, kb, model = files
    assert run("gen-data", "--variants", 1, "--out", tmp_path / "x.json") == 2
    assert run("gen-data", "--units", "many") == 2
    assert run("frobnicate") == 2
    assert run("edit", "--model", d / "missing.json", "--kb", kb, "--unit", 0, "--out-dir", tmp_path) == 2
    assert run("edit", "--model", model, "--kb", kb, "--unit", 99, "--out-dir", tmp_path) == 2
    assert run("edit", "--model", model, "--kb", kb, "--unit", 0, "--eps", -1, "--out-dir", tmp_path) == 2


def test_corrupt_input_exits_2(files, tmp_path):
    _, _, model = files
    bad = tmp_path / "bad.json"
    bad.write_text('{"units": [')
    assert run("train", "--kb", bad, "--out", tmp_path / "m.json") == 2


def test_unwritable_output_exits_4(files, tmp_path):
    _, kb, _ = files
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert run("gen-data", "--out", blocker / "kb.json") == 4


def test_edit_outputs_and_determinism(files, tmp_path):
    _, kb, model = files
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("edit", "--model", model, "--kb", kb, "--unit", 2, "--new-label", 7, "--out-dir", out) == 0
        outs.append(out)
    for f in ("trace.jsonl", "metrics.json", "model.json"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    metrics = json.loads((outs[0] / "metrics.json").read_text())
    assert metrics["rel"] == 1.0 and metrics["per_request"][0]["unit_id"] == 2


def test_edit_seq_single_matches_edit(files, tmp_path):
    _, kb, model = files
    assert run("edit-seq", "--model", model, "--kb", kb, "--n-edits", 1, "--seed", 5, "--out-dir", tmp_path / "s") == 0
    running = json.loads((tmp_path / "s" / "running.json").read_text())
    assert len(running) == 1
    unit = json.loads((tmp_path / "s" / "metrics.json").read_text())["per_request"][0]
    assert run(
        "edit", "--model", model, "--kb", kb, "--unit", unit["unit_id"], "--new-label", unit["new_label"],
        "--seed", 5, "--out-dir", tmp_path / "e",
    ) == 0
    assert (tmp_path / "s" / "model.json").read_bytes() == (tmp_path / "e" / "model.json").read_bytes()


def test_sweep_grids(files, tmp_path):
    _, kb, model = files
    for param, values, n in (("eps", "1e-4,1e-3,1e-2,1e-1", 4), ("beta", "0,1,5,10,20", 5)):
        out = tmp_path / f"{param}.csv"
        assert run("sweep", "--model", model, "--kb", kb, "--param", param, "--values", values,
                   "--seeds", 2, "--n-edits", 2, "--max-steps", 20, "--out", out) == 0
        rows = list(csv.DictReader(out.open()))
        assert len(rows) == n * 2
        assert set(rows[0]) == {"param", "value", "seed", "rel", "gen", "loc"}
    assert run("sweep", "--model", model, "--kb", kb, "--param", "eps", "--values", "", "--out", tmp_path / "x.csv") == 2
    assert run("sweep", "--model", model, "--kb", kb, "--param", "gamma", "--values", "1", "--out", tmp_path / "x.csv") == 2


def test_gram_and_sweep_repr(files, tmp_path, capsys):
    _, kb, model = files
    assert run("gram", "--model", model, "--kb", kb, "--unit", 1, "--out", tmp_path / "g.json") == 0
    summary = json.loads(capsys.readouterr().out)
    assert len(summary["sigma"]) == 5 and set(summary) == {"min_offdiag", "rank", "sigma"}
    data = json.loads((tmp_path / "g.json").read_text())
    assert len(data["gram"]) == 5
    assert run("sweep-repr", "--model", model, "--kb", kb, "--eps-list", "0,0.1", "--k", 3,
               "--out", tmp_path / "r.jsonl") == 0
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 6


def test_config_file_and_flag_precedence(files, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"units": 5, "variants": 3, "seed": 2}))
    assert run("gen-data", "--config", cfg, "--units", 7, "--out", tmp_path / "k.json") == 0
    used = json.loads((tmp_path / "k.json.config.json").read_text())
    assert (used["units"], used["variants"], used["seed"]) == (7, 3, 2)
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run("gen-data", "--config", cfg, "--out", tmp_path / "k2.json") == 2
