"""Input checks shared by the estimator and the command line."""
import numpy as np

from .synthvid import ActionInstance, VideoRecord


class DataError(ValueError):
    """Videos or annotations are malformed or out of range."""


def check_volume(frames, name="video"):
    """A ``(T, H, W, 3)`` uint8 frame volume."""
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise DataError(f"{name}: expected frames shaped (T, H, W, 3), got {frames.shape}")
    if frames.dtype != np.uint8:
        if not np.issubdtype(frames.dtype, np.number) or frames.min() < 0 or frames.max() > 255:
            raise DataError(f"{name}: pixel values must be uint8-representable")
        frames = frames.astype(np.uint8)
    if frames.shape[0] < 1:
        raise DataError(f"{name}: video has no frames")
    return frames


def check_instances(instances, num_frames, num_classes=None, name="video"):
    out = []
    for k, inst in enumerate(instances):
        if not isinstance(inst, ActionInstance):
            try:
                if isinstance(inst, dict):
                    inst = ActionInstance(int(inst["label"]), int(inst["start_frame"]),
                                          int(inst["end_frame"]))
                else:
                    inst = ActionInstance(*(int(v) for v in inst))
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{name}: instance {k} malformed: {exc}") from exc
        if not 0 <= inst.start_frame < inst.end_frame <= num_frames:
            raise DataError(f"{name}: instance {k} [{inst.start_frame}, {inst.end_frame}) "
                            f"outside [0, {num_frames})")
        if inst.label < 0 or (num_classes is not None and inst.label >= num_classes):
            raise DataError(f"{name}: instance {k} label {inst.label} out of range")
        out.append(inst)
    return out


def check_videos(X, y=None, num_classes=None):
    """Normalise estimator inputs to ``(records, volumes)``.

    ``X`` is a sequence of frame volumes or of ``(VideoRecord, frames)``
    pairs. ``y`` optionally gives, per video, a VideoRecord or a list of
    instances (ActionInstance, dicts or ``(label, start, end)`` triples).
    """
    if X is None or isinstance(X, (str, bytes)) or not hasattr(X, "__len__"):
        raise DataError("X must be a sequence of videos")
    if y is not None and len(y) != len(X):
        raise DataError(f"X has {len(X)} videos but y has {len(y)} annotations")
    records, volumes = [], []
    for i, item in enumerate(X):
        record = None
        if isinstance(item, tuple) and len(item) == 2 and isinstance(item[0], VideoRecord):
            record, frames = item
        else:
            frames = item
        name = record.id if record is not None else f"video_{i:04d}"
        frames = check_volume(frames, name)
        t, h, w, _ = frames.shape
        if y is not None:
            ann = y[i]
            instances = ann.instances if isinstance(ann, VideoRecord) else ann
        else:
            instances = record.instances if record is not None else []
        instances = check_instances(instances, t, num_classes, name)
        if record is not None and (record.num_frames, record.height, record.width) != (t, h, w):
            raise DataError(f"{name}: record dimensions do not match its frames")
        records.append(VideoRecord(name, t, h, w, instances))
        volumes.append(frames)
    return records, volumes
