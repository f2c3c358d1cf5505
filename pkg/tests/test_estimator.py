import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from tempodet.estimator import TemporalActionDetector
from tempodet.postproc import Detection
from tempodet.synthvid import ActionInstance, DatasetSpec, generate_dataset
from tempodet.validation import DataError

ARCH = {"preset": "custom", "input_shape": [16, 3, 32, 32],
        "conv_channels": [2, 2, 2, 2, 2, 2, 2, 2], "fc_widths": [6, 5]}
TRAIN = {"batch_size": 3, "schedule": [[2, 1.0]], "log_every": 1, "micro_batch": 3}


@pytest.fixture(scope="module")
def data():
    spec = DatasetSpec(num_videos=3, frames_per_video=96, height=32, width=32, num_classes=2,
                       instance_len_range=(16, 40), max_instances_per_video=2, seed=4)
    return generate_dataset(spec)


@pytest.fixture(scope="module")
def fitted(data):
    records, volumes = data
    return TemporalActionDetector(arch=ARCH, train=TRAIN).fit(volumes, records)


def test_params_round_trip():
    est = TemporalActionDetector(num_classes=2, arch=ARCH, random_state=5)
    assert est.get_params()["random_state"] == 5
    assert clone(est).get_params() == est.get_params()


def test_not_fitted(data):
    with pytest.raises(NotFittedError):
        TemporalActionDetector().predict(data[1])


def test_fit_infers_classes(fitted):
    assert fitted.n_classes_ == 2 and fitted.n_iter_ == 2
    assert len(fitted.training_log_) == 2
    assert fitted.run_config_.train.seed == 0


def test_predict_and_score(fitted, data):
    records, volumes = data
    dets = fitted.predict(list(zip(records, volumes)))
    assert dets and all(isinstance(d, Detection) for d in dets)
    assert {d.video_id for d in dets} <= {r.id for r in records}
    assert 0.0 <= fitted.score(volumes, records) <= 1.0
    scores = fitted.clip_scores(volumes)
    assert len(scores) == 3 and all(len(s) > 0 for s in scores)


def test_fit_is_deterministic(fitted, data):
    records, volumes = data
    again = TemporalActionDetector(arch=ARCH, train=TRAIN).fit(volumes, records)
    assert all(again.params_[k].tobytes() == fitted.params_[k].tobytes() for k in fitted.params_)


def test_save_and_load(fitted, data, tmp_path):
    path = tmp_path / "m.tdmdl"
    fitted.save(path)
    other = TemporalActionDetector(arch=ARCH).load_params(path, fitted.duration_prior_)
    records, volumes = data
    assert other.predict(volumes) == fitted.predict(volumes)


def test_instance_lists_as_labels(data):
    _, volumes = data
    y = [[(0, 10, 40)], [ActionInstance(1, 0, 30)], [{"label": 0, "start_frame": 50,
                                                      "end_frame": 80}]]
    est = TemporalActionDetector(arch=ARCH, train=TRAIN).fit(volumes, y)
    assert est.n_classes_ == 2


@pytest.mark.parametrize("X,y,match", [
    ([np.zeros((20, 32, 32), np.uint8)], [[]], "3"),
    ([np.zeros((40, 32, 32, 3), np.uint8)], [[(0, 30, 60)]], "outside"),
    ([np.zeros((40, 32, 32, 3), np.uint8)], [[]], "infer"),
    ([np.zeros((40, 32, 32, 3), np.uint8)] * 2, [[]], "annotations"),
])
def test_bad_inputs(X, y, match):
    with pytest.raises(DataError, match=match):
        TemporalActionDetector(arch=ARCH, train=TRAIN).fit(X, y)
