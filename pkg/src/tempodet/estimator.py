"""scikit-learn style wrapper around the train/detect pipeline."""
import dataclasses

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import RunConfig
from .evalmap import EvalConfig, evaluate
from .inference import detect, score_video
from .net3d import load_model, save_model
from .postproc import DurationPrior
from .trainer import train
from .validation import DataError, check_videos


def _section(value):
    if value is None:
        return None
    return value.to_dict() if dataclasses.is_dataclass(value) else dict(value)


class TemporalActionDetector(BaseEstimator):
    """Multi-task 3D ConvNet temporal action detector.

    Each config argument is a section of :class:`~tempodet.config.RunConfig`,
    given either as the config dataclass or as a plain dict of overrides.
    ``random_state`` replaces ``train.seed``.

    ``X`` is a sequence of ``(T, H, W, 3)`` uint8 videos or of
    ``(VideoRecord, frames)`` pairs; ``y`` holds per-video annotations.
    """

    def __init__(self, num_classes=None, arch=None, windows=None, augment=None, train=None,
                 postproc=None, random_state=0):
        self.num_classes = num_classes
        self.arch = arch
        self.windows = windows
        self.augment = augment
        self.train = train
        self.postproc = postproc
        self.random_state = random_state

    def _run_config(self, num_classes):
        data = {}
        for name in ("arch", "windows", "augment", "train", "postproc"):
            section = _section(getattr(self, name))
            if section is not None:
                data[name] = section
        arch = data.setdefault("arch", {})
        if num_classes is not None:
            arch.setdefault("num_classes", num_classes)
        if self.random_state is not None:
            data.setdefault("train", {})["seed"] = int(self.random_state)
        return RunConfig.from_dict(data)

    def fit(self, X, y=None):
        records, volumes = check_videos(X, y, self.num_classes)
        n = self.num_classes
        if n is None:
            labels = [a.label for r in records for a in r.instances]
            if not labels:
                raise DataError("cannot infer num_classes from videos without instances")
            n = max(labels) + 1
        run = self._run_config(n)
        result = train(records, volumes, run.windows, run.augment, run.arch, run.train,
                       run.postproc)
        self.run_config_ = run
        self.n_classes_ = run.arch.num_classes
        self.params_ = result.params
        self.training_log_ = result.log
        self.n_iter_ = result.iterations
        self.duration_prior_ = DurationPrior.from_instances(
            records, self.n_classes_, run.windows.lengths, run.postproc.prior_smoothing)
        return self

    def _checked(self, X):
        check_is_fitted(self, "params_")
        # frames of any size are fine: clips are resized to the network input
        return check_videos(X)

    def predict(self, X):
        """Ranked detections for every video, concatenated in input order."""
        records, volumes = self._checked(X)
        run = self.run_config_
        return detect(self.params_, records, volumes, run.windows, run.augment, run.postproc,
                      self.duration_prior_)

    def clip_scores(self, X):
        """Per-video lists of :class:`~tempodet.postproc.ClipScores`."""
        records, volumes = self._checked(X)
        run = self.run_config_
        return [score_video(self.params_, r, v, run.windows, run.augment)
                for r, v in zip(records, volumes)]

    def score(self, X, y=None, tiou=0.5):
        """mAP at temporal IoU ``tiou``."""
        records, _ = check_videos(X, y, self.n_classes_ if hasattr(self, "n_classes_") else None)
        dets = self.predict(X)
        report = evaluate(dets, records, EvalConfig((tiou,)), self.n_classes_)
        return report.map[tiou]

    def save(self, path):
        check_is_fitted(self, "params_")
        return save_model(self.params_, path)

    def load_params(self, path, prior=None):
        """Attach parameters from a model file instead of fitting."""
        params = load_model(path)
        self.run_config_ = self._run_config(params.arch.num_classes)
        self.run_config_.arch = params.arch
        self.n_classes_ = params.arch.num_classes
        self.params_ = params
        self.training_log_ = []
        self.n_iter_ = 0
        self.duration_prior_ = prior
        return self
