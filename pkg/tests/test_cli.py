import json
from pathlib import Path

import numpy as np
import pytest

from spikesal import spikeio as sio
from spikesal.cli import main
from spikesal.rst import RSTConfig
from spikesal.train import RunConfig


GEN = {"train_sequences": 1, "val_sequences": 1, "labels_per_sequence": 3,
       "width": 32, "height": 32, "frames_per_label": 80,
       "noise_std": 0.0, "seed": 11}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Dataset + 1-epoch checkpoint shared by the command tests."""
    root = tmp_path_factory.mktemp("cliws")
    gen_cfg = root / "gen.json"
    gen_cfg.write_text(json.dumps(GEN))
    assert main(["gen-data", "--config", str(gen_cfg),
                 "--out", str(root / "data")]) == 0
    run = RunConfig(manifest=str(root / "data" / "manifest.json"),
                    model=RSTConfig(dim=16, heads=2, steps=2, rfa_blocks=1),
                    lr_start=1e-3, lr_end=1e-4, epochs=1, batch_size=2,
                    window=80, seed=2)
    run.save(root / "run.json")
    assert main(["train", "--config", str(root / "run.json"),
                 "--out", str(root / "ckpt")]) == 0
    return root


def test_gen_data_deterministic(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps(GEN))
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("manifest.json", "train_000.spk", "val_000_f000000.pgm"):
        assert (tmp_path / "a" / name).read_bytes() == \
               (tmp_path / "b" / name).read_bytes()


def test_gen_data_seed_flag_overrides(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps(GEN))
    main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["gen-data", "--config", str(cfg), "--seed", "99",
          "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "train_000.spk").read_bytes() != \
           (tmp_path / "b" / "train_000.spk").read_bytes()


def test_gen_data_bad_config_path(tmp_path, capsys):
    rc = main(["gen-data", "--config", str(tmp_path / "nope.json"),
               "--out", str(tmp_path / "out")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err
    assert not (tmp_path / "out" / "manifest.json").exists()


def test_gen_data_unknown_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({**GEN, "sensor_kind": "dvs"}))
    assert main(["gen-data", "--config", str(cfg),
                 "--out", str(tmp_path / "out")]) == 1
    assert "sensor_kind" in capsys.readouterr().err


def test_train_writes_log_and_checkpoint(workspace):
    assert (workspace / "ckpt" / "last.salt").exists()
    lines = (workspace / "ckpt" / "train_log.csv").read_text().splitlines()
    assert len(lines) == 2


def test_eval_reports(workspace, tmp_path, capsys):
    out = tmp_path / "report.json"
    rc = main(["eval", "--ckpt", str(workspace / "ckpt" / "last.salt"),
               "--manifest", str(workspace / "data" / "manifest.json"),
               "--out", str(out)])
    assert rc == 0
    table = capsys.readouterr().out
    assert "MAE" in table and "val_000" in table
    doc = json.loads(out.read_text())
    assert 0.0 <= doc["mae"] <= 1.0
    assert len(doc["threshold_curve"]) == 256


def test_eval_is_repeatable(workspace, tmp_path):
    args = ["eval", "--ckpt", str(workspace / "ckpt" / "last.salt"),
            "--manifest", str(workspace / "data" / "manifest.json")]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_infer_windows(workspace, tmp_path):
    stream = workspace / "data" / "val_000.spk"
    out = tmp_path / "maps"
    rc = main(["infer", "--ckpt", str(workspace / "ckpt" / "last.salt"),
               "--stream", str(stream), "--out", str(out)])
    assert rc == 0
    maps = sorted(out.glob("map_*.pgm"))
    assert len(maps) == 3    # 240 frames / 80-frame windows
    img = sio.read_pgm(maps[0])
    assert img.shape == (32, 32)


def test_infer_continuous(workspace, tmp_path):
    stream = workspace / "data" / "val_000.spk"
    out = tmp_path / "maps"
    rc = main(["infer", "--ckpt", str(workspace / "ckpt" / "last.salt"),
               "--stream", str(stream), "--out", str(out), "--continuous"])
    assert rc == 0
    assert len(list(out.glob("map_*.pgm"))) == 3


def test_infer_resolution_mismatch(workspace, tmp_path, capsys):
    bad = sio.SpikeStream(np.zeros((80, 24, 24), dtype=np.uint8))
    sio.write_stream(tmp_path / "bad.spk", bad)
    rc = main(["infer", "--ckpt", str(workspace / "ckpt" / "last.salt"),
               "--stream", str(tmp_path / "bad.spk"),
               "--out", str(tmp_path / "maps")])
    assert rc == 1
    assert "resolution" in capsys.readouterr().err


def test_infer_short_stream_rejected(workspace, tmp_path, capsys):
    tiny = sio.SpikeStream(np.zeros((10, 32, 32), dtype=np.uint8))
    sio.write_stream(tmp_path / "tiny.spk", tiny)
    rc = main(["infer", "--ckpt", str(workspace / "ckpt" / "last.salt"),
               "--stream", str(tmp_path / "tiny.spk"),
               "--out", str(tmp_path / "maps")])
    assert rc == 1


def test_energy_report(workspace, tmp_path, capsys):
    out = tmp_path / "energy.json"
    rc = main(["energy", "--ckpt", str(workspace / "ckpt" / "last.salt"),
               "--stream", str(workspace / "data" / "val_000.spk"),
               "--out", str(out)])
    assert rc == 0
    assert "ratio" in capsys.readouterr().out
    doc = json.loads(out.read_text())
    assert doc["ac_ops"] >= 0 and doc["mac_ops"] > 0
    assert doc["ratio"] > 1.0


def test_missing_checkpoint_errors(workspace, tmp_path, capsys):
    rc = main(["eval", "--ckpt", str(tmp_path / "none.salt"),
               "--manifest", str(workspace / "data" / "manifest.json")])
    assert rc == 1
