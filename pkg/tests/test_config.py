import json

import pytest

from tempodet.config import ConfigError, RunConfig, load_run_config


def test_defaults_are_desk():
    run = load_run_config(None)
    assert run.arch.preset == "desk" and run.arch.num_classes == 3
    assert run.train.batch_size == 4 and run.train.base_lr == 0.01
    assert run.dataset is None


def test_paper_preset():
    run = RunConfig.from_dict({"arch": {"preset": "paper", "num_classes": 20}})
    assert run.arch.input_shape == (16, 3, 112, 112)
    assert run.augment.crop_h == 112
    assert run.train.batch_size == 30 and run.train.total_iterations == 40000


def test_num_classes_from_dataset():
    data = {"dataset": {"num_videos": 1, "frames_per_video": 200, "height": 16, "width": 16,
                        "num_classes": 5, "seed": 0}}
    assert RunConfig.from_dict(data).arch.num_classes == 5
    assert RunConfig.from_dict({}, num_classes=7).arch.num_classes == 7


@pytest.mark.parametrize("data,where", [
    ({"bogus": {}}, "bogus"),
    ({"train": {"batchsize": 4}}, "train.batchsize"),
    ({"train": {"batch_size": "four"}}, "train.batch_size"),
    ({"train": {"batch_size": 0}}, "train.batch_size"),
    ({"postproc": {"alpha": -1}}, "postproc.alpha"),
    ({"arch": {"preset": "huge"}}, "arch.preset"),
    ({"augment": {"crop_h": 28, "crop_w": 28}}, "augment.crop_h"),
    ({"dataset": {"num_videos": 1}}, "dataset."),
    ({"dataset": {"num_videos": 1, "frames_per_video": 200, "height": 16, "width": 16,
                  "num_classes": 2, "seed": 0}, "arch": {"num_classes": 3}}, "arch.num_classes"),
])
def test_errors_name_the_field(data, where):
    with pytest.raises(ConfigError) as err:
        RunConfig.from_dict(data)
    assert str(err.value).startswith(where)


def test_round_trip(tmp_path):
    run = RunConfig.from_dict({"train": {"batch_size": 6, "schedule": [[5, 1.0]]},
                               "postproc": {"duration_prior_enabled": True}})
    path = tmp_path / "c.json"
    path.write_text(json.dumps(run.to_dict()))
    back = load_run_config(path)
    assert back.to_dict() == run.to_dict()


def test_bad_json_reports_offset(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"train": }')
    with pytest.raises(ConfigError, match="byte offset 10"):
        load_run_config(path)
    with pytest.raises(ConfigError, match="cannot read"):
        load_run_config(tmp_path / "missing.json")


def test_shipped_configs_parse():
    from pathlib import Path
    for path in sorted(Path(__file__).parent.parent.joinpath("configs").glob("*.json")):
        load_run_config(path)
