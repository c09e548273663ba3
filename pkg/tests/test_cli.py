import json

import numpy as np
import pytest

from xbarprune import checkpoint
from xbarprune.cli import main
from xbarprune.config import ConfigError, load_config, parse_override

TINY = {
    "data": {"count": 300, "dims": [1, 6, 6], "classes": 3, "separation": 1.0, "smooth": 0},
    "arch": [{"type": "conv", "out": 8, "k": 2}, {"type": "relu"}, {"type": "flatten"},
             {"type": "dense", "out": 3}],
    "train": {"epochs": 2, "finetune_epochs": 1},
    "tile_size": 4,
}


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(TINY))
    return p


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def trained(tmp_path, cfg_path):
    out = tmp_path / "train"
    assert run("train", "--config", cfg_path, "--out", out) == 0
    return out


def test_override_parsing():
    assert parse_override("train.lr=0.5") == (["train", "lr"], 0.5)
    assert parse_override("method=dub") == (["method"], "dub")
    assert parse_override("data.dims=[1,4,4]") == (["data", "dims"], [1, 4, 4])
    with pytest.raises(ConfigError):
        parse_override("novalue")


def test_unknown_keys_rejected_with_path(tmp_path):
    with pytest.raises(ConfigError, match="'train.lrr'"):
        load_config(None, ["train.lrr=1"])
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"data": {"cuont": 5}}))
    with pytest.raises(ConfigError, match="'data.cuont'"):
        load_config(p)


def test_malformed_and_invalid_values(tmp_path):
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError, match="malformed JSON"):
        load_config(p)
    with pytest.raises(ConfigError, match="method"):
        load_config(None, ["method=magic"])
    with pytest.raises(ConfigError, match="ratio"):
        load_config(None, ["ratio=1.5"])
    with pytest.raises(ConfigError, match="lr"):
        load_config(None, ["train.lr=-1"])


def test_exit_codes(tmp_path, cfg_path, capsys):
    assert run("nonsense") == 1
    assert run("train", "--config", cfg_path, "--set", "bogus=1", "--out", tmp_path) == 1
    assert "bogus" in capsys.readouterr().err
    assert run("analyze", tmp_path / "missing.xbwt", "--config", cfg_path, "--out", tmp_path) == 2
    assert "missing.xbwt" in capsys.readouterr().err
    assert run("train", "--config", tmp_path / "nope.json") == 2
    (tmp_path / "junk.xbwt").write_bytes(b"XBWT\x01")
    assert run("analyze", tmp_path / "junk.xbwt", "--config", cfg_path, "--out", tmp_path) == 2
    code = run("train", "--config", cfg_path, "--out", tmp_path / "d",
               "--set", "train.lr=1e30", "--set", "train.momentum=0")
    assert code == 3


def test_idx_data_missing_files_exit_2(tmp_path, cfg_path):
    code = run("train", "--config", cfg_path, "--out", tmp_path,
               "--set", "data.source=idx", "--set", f"data.train_images={tmp_path / 'x'}",
               "--set", f"data.train_labels={tmp_path / 'y'}")
    assert code == 2


def test_pipeline_artifacts(tmp_path, cfg_path, trained):
    out = tmp_path / "p"
    assert run("prune", trained / "model.xbwt", "--config", cfg_path, "--out", out) == 0
    plan = json.loads((out / "plan.json").read_text())
    assert plan["method"] == "dub" and "conv1" in plan["layers"]
    assert run("finetune", out / "pruned.xbwt", "--config", cfg_path, "--out", out) == 0
    assert run("analyze", out / "finetuned.xbwt", "--config", cfg_path, "--out", out) == 0
    energy = json.loads((out / "energy.json").read_text())
    assert 0 <= energy["normalized_energy"] <= 1
    hist = (out / "histogram.csv").read_text().splitlines()
    assert hist[0] == "level_label,min_sparsity,tile_count,tile_fraction"
    assert run("simulate", out / "finetuned.xbwt", "--plan", out / "plan.json", "--trace",
               "--config", cfg_path, "--out", out) == 0
    sim = json.loads((out / "simulate.json").read_text())
    assert sim["passed"] and (out / "trace_conv1.json").exists()
    hist_csv = (trained / "history.csv").read_text().splitlines()
    assert hist_csv[0] == "epoch,cls_loss,l2,var_reg,train_acc,test_acc" and len(hist_csv) == 3


def test_analyze_dense_checkpoint_is_one(tmp_path, cfg_path, trained):
    # conv1 is a 4x8 matrix and tiles of 4 fit it exactly: no padding
    assert run("analyze", trained / "model.xbwt", "--config", cfg_path, "--out", tmp_path,
               "--set", "tile_scope=conv") == 0
    assert json.loads((tmp_path / "energy.json").read_text())["normalized_energy"] == 1.0


@pytest.mark.parametrize("method", ["dub", "unstructured", "structured-tile", "structured-column"])
def test_prune_ratio_zero_keeps_everything(tmp_path, cfg_path, trained, method):
    out = tmp_path / method
    assert run("prune", trained / "model.xbwt", "--config", cfg_path, "--out", out,
               "--set", "ratio=0", "--set", f"method={method}") == 0
    for rec in checkpoint.load_records(out / "pruned.xbwt"):
        if rec["mask"] is not None:
            assert rec["mask"].all()
    assert run("analyze", out / "pruned.xbwt", "--config", cfg_path, "--out", out) == 0
    assert run("analyze", trained / "model.xbwt", "--config", cfg_path, "--out", tmp_path / "d") == 0
    a = json.loads((out / "energy.json").read_text())["normalized_energy"]
    b = json.loads((tmp_path / "d" / "energy.json").read_text())["normalized_energy"]
    assert a == b


def _energy_json(path, e):
    path.write_text(json.dumps({
        "tile_size": 32, "full_bits": 5, "normalized_energy": e, "n_tiles": 8,
        "precision_counts": {"5": 8}, "final_pruning_ratio": 0.0,
    }))


def test_report_four_x(tmp_path, cfg_path, capsys):
    _energy_json(tmp_path / "dense.json", 1.0)
    _energy_json(tmp_path / "dub.json", 0.25)
    assert run("report", f"dense={tmp_path / 'dense.json'}", f"dub={tmp_path / 'dub.json'}",
               "--config", cfg_path, "--out", tmp_path) == 0
    rows = json.loads((tmp_path / "report.json").read_text())["rows"]
    assert rows[1]["energy_savings"] == "4.00x"
    assert "4.00x" in (tmp_path / "report.csv").read_text()


def test_report_mismatch_and_bad_baseline(tmp_path, cfg_path):
    _energy_json(tmp_path / "a.json", 1.0)
    (tmp_path / "b.json").write_text(json.dumps({
        "tile_size": 64, "full_bits": 6, "normalized_energy": 0.5, "n_tiles": 8,
        "precision_counts": {}, "final_pruning_ratio": 0.0}))
    assert run("report", tmp_path / "a.json", tmp_path / "b.json", "--config", cfg_path, "--out", tmp_path) == 2
    assert run("report", tmp_path / "a.json", "--baseline", "zzz", "--config", cfg_path, "--out", tmp_path) == 1


def test_cli_determinism(tmp_path, cfg_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert run("train", "--config", cfg_path, "--out", out, "--set", "method=sdub",
                   "--set", "tile_ratio=0.3") == 0
        assert run("prune", out / "model.xbwt", "--config", cfg_path, "--out", out, "--set", "method=sdub") == 0
        assert run("analyze", out / "pruned.xbwt", "--config", cfg_path, "--out", out) == 0
        outs.append(out)
    for f in ("model.xbwt", "history.csv", "config.json", "pruned.xbwt", "plan.json",
              "energy.json", "histogram.csv", "energy_tiles.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    meta = json.loads((outs[0] / "meta_train.json").read_text())
    assert "created" in meta


def test_sdub_train_freezes_removed_tiles(tmp_path, cfg_path):
    out = tmp_path / "s"
    assert run("train", "--config", cfg_path, "--out", out, "--set", "method=sdub",
               "--set", "tile_ratio=0.5") == 0
    rec = {r["name"]: r for r in checkpoint.load_records(out / "model.xbwt")}
    mask = rec["conv1"]["mask"]
    assert mask is not None and not mask.all()
    assert np.all(rec["conv1"]["values"][~mask] == 0)
