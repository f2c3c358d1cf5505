import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from tempodet import cli
from tempodet.ablation import variant_config
from tempodet.clipper import enumerate_windows
from tempodet.config import RunConfig
from tempodet.net3d import layers
from tempodet.synthvid import VideoRecord, encode_video_file, load_dataset

from test_evalmap import DETS, GT

CONFIGS = Path(__file__).parent.parent / "configs"
TINY = {
    "dataset": {"num_videos": 3, "frames_per_video": 96, "height": 32, "width": 32,
                "num_classes": 2, "instance_len_range": [16, 40], "max_instances_per_video": 2,
                "seed": 7},
    "arch": {"preset": "custom", "input_shape": [16, 3, 32, 32],
             "conv_channels": [2, 2, 2, 2, 2, 2, 2, 2], "fc_widths": [6, 5]},
    "train": {"batch_size": 3, "schedule": [[2, 1.0]], "log_every": 1, "micro_batch": 3},
    "postproc": {"duration_prior_enabled": True},
}


def write_json(path, data):
    path.write_text(json.dumps(data))
    return str(path)


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_json(root / "tiny.json", TINY)
    assert cli.main(["gen", "--config", cfg, "--out", str(root / "data")]) == 0
    assert cli.main(["train", "--data", str(root / "data"), "--config", cfg,
                     "--out-model", str(root / "m.tdmdl"), "--log", str(root / "log.csv")]) == 0
    return root, cfg


def test_gen_is_reproducible(work, tmp_path):
    root, cfg = work
    assert cli.main(["gen", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    for f in sorted((root / "data").iterdir()):
        assert (tmp_path / "again" / f.name).read_bytes() == f.read_bytes()


def test_gen_seed_override(work, tmp_path):
    _, cfg = work
    assert cli.main(["gen", "--config", cfg, "--out", str(tmp_path / "s"), "--seed", "8"]) == 0
    assert json.loads((tmp_path / "s" / "manifest.json").read_text())["spec"]["seed"] == 8


def test_gen_config_errors(tmp_path, capsys):
    bad = dict(TINY, dataset={k: v for k, v in TINY["dataset"].items() if k != "height"})
    assert cli.main(["gen", "--config", write_json(tmp_path / "b.json", bad),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG
    assert "dataset.height" in capsys.readouterr().err
    no_ds = {k: v for k, v in TINY.items() if k != "dataset"}
    assert cli.main(["gen", "--config", write_json(tmp_path / "n.json", no_ds),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_train_outputs(work):
    root, _ = work
    rows = list(csv.reader((root / "log.csv").read_text().splitlines()))
    assert rows[0] == ["iter", "lr_multiplier", "l_prop", "l_cls", "l_aux5", "l_aux6", "l_reg",
                       "fused", "probe_mAP"]
    assert len(rows) == 3 and all(len(r) == 9 for r in rows)
    assert (root / "m.tdmdl").read_bytes()[:8] == b"TDMDL001"
    prior = json.loads((root / "m.tdmdl.prior.json").read_text())
    assert prior["lengths"] == [16, 32, 64, 128, 256, 512]


def test_train_zero_iterations(work, tmp_path):
    root, _ = work
    cfg = write_json(tmp_path / "z.json", dict(TINY, train=dict(TINY["train"],
                                                                schedule=[[0, 1.0]])))
    assert cli.main(["train", "--data", str(root / "data"), "--config", cfg, "--out-model",
                     str(tmp_path / "z.tdmdl"), "--log", str(tmp_path / "z.csv")]) == 0
    assert len(list(csv.reader((tmp_path / "z.csv").read_text().splitlines()))) == 1


def test_train_missing_data(tmp_path):
    assert cli.main(["train", "--data", str(tmp_path / "nope"), "--out-model",
                     str(tmp_path / "m"), "--log", str(tmp_path / "l")]) == cli.EXIT_DATA


def test_detect_and_eval(work, tmp_path):
    root, cfg = work
    det = tmp_path / "d.json"
    assert cli.main(["detect", "--data", str(root / "data"), "--model", str(root / "m.tdmdl"),
                     "--config", cfg, "--out", str(det)]) == 0
    rows = json.loads(det.read_text())
    records, _ = load_dataset(root / "data")
    windows = {(r.id, w.start, w.end) for r in records for w in enumerate_windows(r.num_frames)}
    assert rows and all((d["video_id"], d["start_frame"], d["end_frame"]) in windows
                        for d in rows)
    assert cli.main(["eval", "--data", str(root / "data"), "--det", str(det),
                     "--out", str(tmp_path / "r"), "--tiou", "0.3,0.5"]) == 0
    assert (tmp_path / "r.csv").read_text().startswith("class,0.3,0.5")


def test_detect_empty_dataset(work, tmp_path):
    root, cfg = work
    empty = dict(TINY, dataset=dict(TINY["dataset"], num_videos=0))
    ecfg = write_json(tmp_path / "e.json", empty)
    assert cli.main(["gen", "--config", ecfg, "--out", str(tmp_path / "e")]) == 0
    assert cli.main(["detect", "--data", str(tmp_path / "e"), "--model", str(root / "m.tdmdl"),
                     "--config", cfg, "--out", str(tmp_path / "d.json")]) == 0
    assert json.loads((tmp_path / "d.json").read_text()) == []


def test_detect_model_errors(work, tmp_path):
    root, cfg = work
    other = dict(TINY, arch=dict(TINY["arch"], fc_widths=[7, 5]))
    assert cli.main(["detect", "--data", str(root / "data"), "--model", str(root / "m.tdmdl"),
                     "--config", write_json(tmp_path / "o.json", other),
                     "--out", str(tmp_path / "d.json")]) == cli.EXIT_MODEL
    (tmp_path / "junk").write_bytes(b"not a model")
    assert cli.main(["detect", "--data", str(root / "data"), "--model", str(tmp_path / "junk"),
                     "--config", cfg, "--out", str(tmp_path / "d.json")]) == cli.EXIT_MODEL


def test_detect_needs_prior_when_enabled(work, tmp_path):
    root, cfg = work
    shutil.copy(root / "m.tdmdl", tmp_path / "m.tdmdl")
    assert cli.main(["detect", "--data", str(root / "data"), "--model", str(tmp_path / "m.tdmdl"),
                     "--config", cfg, "--out", str(tmp_path / "d.json")]) == cli.EXIT_CONFIG
    assert cli.main(["detect", "--data", str(root / "data"), "--model", str(tmp_path / "m.tdmdl"),
                     "--config", cfg, "--prior", str(root / "m.tdmdl.prior.json"),
                     "--out", str(tmp_path / "d.json")]) == 0


def _gt_dets(records):
    return [{"video_id": r.id, "label": a.label, "start_frame": a.start_frame,
             "end_frame": a.end_frame, "score": 1.0} for r in records for a in r.instances]


def test_eval_cases(work, tmp_path):
    root, _ = work
    records, _ = load_dataset(root / "data")
    data = str(root / "data")
    det = write_json(tmp_path / "gt.json", _gt_dets(records))
    assert cli.main(["eval", "--data", data, "--det", det, "--out", str(tmp_path / "g")]) == 0
    report = json.loads((tmp_path / "g.json").read_text())
    assert all(v == 1.0 for v in report["map"].values())
    empty = write_json(tmp_path / "e.json", [])
    assert cli.main(["eval", "--data", data, "--det", empty, "--out", str(tmp_path / "e")]) == 0
    assert all(v == 0.0 for v in json.loads((tmp_path / "e.json").read_text())["map"].values())
    bad = _gt_dets(records)[:1]
    bad[0]["label"] = 9
    assert cli.main(["eval", "--data", data, "--det", write_json(tmp_path / "b.json", bad),
                     "--out", str(tmp_path / "b")]) == cli.EXIT_DATA
    bad[0].update(label=0, video_id="ghost")
    assert cli.main(["eval", "--data", data, "--det", write_json(tmp_path / "c.json", bad),
                     "--out", str(tmp_path / "c")]) == cli.EXIT_DATA
    assert cli.main(["eval", "--data", data, "--det", det, "--out", str(tmp_path / "t"),
                     "--tiou", "0.5,abc"]) == cli.EXIT_CONFIG


def test_ablate_unknown_variant(work, tmp_path):
    root, cfg = work
    data = str(root / "data")
    assert cli.main(["ablate", "--variant", "no-such", "--train-data", data, "--test-data", data,
                     "--config", cfg, "--out", str(tmp_path / "a.csv")]) == cli.EXIT_CONFIG


def test_shear_variants_differ_only_in_theta():
    run = RunConfig.from_dict({})
    a = variant_config(run, "shear:0").to_dict()
    b = variant_config(run, "shear:25").to_dict()
    assert a["augment"].pop("shear_max_deg") == 0.0
    assert b["augment"].pop("shear_max_deg") == 25.0
    assert a == b


def test_ablate_runs(work, tmp_path):
    root, cfg = work
    data = str(root / "data")
    out = tmp_path / "a.csv"
    assert cli.main(["ablate", "--variant", "full", "--variant", "fc8-only", "--train-data", data,
                     "--test-data", data, "--config", cfg, "--seeds", "0", "--out",
                     str(out)]) == 0
    rows = list(csv.DictReader(out.read_text().splitlines()))
    assert {r["variant"] for r in rows} == {"full", "fc8-only"}
    assert set(rows[0]) == {"variant", "seed", "mAP@0.2", "mAP@0.5"}


def test_gradcheck_command(capsys):
    assert cli.main(["gradcheck"]) == cli.EXIT_OK
    assert "conv3d" in capsys.readouterr().out


def test_gradcheck_detects_corruption(monkeypatch):
    good = layers.conv3d_backward

    def bad(*args, **kw):
        return tuple(None if g is None else -g for g in good(*args, **kw))

    monkeypatch.setattr(layers, "conv3d_backward", bad)
    assert cli.main(["gradcheck"]) == cli.EXIT_VERIFY


def test_threads(monkeypatch, tmp_path):
    out = str(tmp_path / "o")
    cfg = write_json(tmp_path / "c.json", dict(TINY, dataset=dict(TINY["dataset"],
                                                                  num_videos=1)))
    assert cli.main(["--threads", "1", "gen", "--config", cfg, "--out", out]) == 0
    monkeypatch.setenv("TEMPODET_THREADS", "x")
    assert cli.main(["gen", "--config", cfg, "--out", out]) == cli.EXIT_CONFIG
    monkeypatch.setenv("TEMPODET_THREADS", "1")
    assert cli.main(["gen", "--config", cfg, "--out", out]) == 0


def test_shipped_smoke_config(tmp_path):
    assert cli.main(["gen", "--config", str(CONFIGS / "smoke.json"), "--out",
                     str(tmp_path / "s")]) == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "tempodet", "--help"], capture_output=True,
                          text=True, check=False)
    assert proc.returncode == 0
    assert "gradcheck" in proc.stdout and "ablate" in proc.stdout


def test_eval_reproduces_fixture(tmp_path):
    data = tmp_path / "fx"
    data.mkdir()
    names = []
    for vid, inst in GT.items():
        encode_video_file(VideoRecord(vid, 400, 2, 2, inst), np.zeros((400, 2, 2, 3), np.uint8),
                          data / f"{vid}.tdvid")
        names.append(f"{vid}.tdvid")
    (data / "manifest.json").write_text(json.dumps({"videos": names}))
    det = write_json(tmp_path / "d.json", [d.to_dict() for d in DETS])
    assert cli.main(["eval", "--data", str(data), "--det", det, "--out",
                     str(tmp_path / "r")]) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["map"]["0.5"] == pytest.approx(19 / 36, abs=1e-12)
    assert report["ap"]["1"]["0.4"] == pytest.approx(5 / 9, abs=1e-12)
    assert report["map"]["0.3"] == 1.0
