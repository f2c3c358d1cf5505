"""From per-clip head outputs to ranked temporal detections."""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .clipper import DEFAULT_LENGTHS, Window


@dataclass
class ClipScores:
    window: Window
    p_b: float
    p_l: np.ndarray
    p_a: float


@dataclass(frozen=True)
class PostprocConfig:
    alpha: float = 1.0
    nms_delta: float = 0.4
    top_k: int = None
    duration_prior_enabled: bool = False
    prior_smoothing: float = 1.0
    discard_threshold: float = None
    use_actionness: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha: must be >= 0")
        if not 0.0 <= self.nms_delta < 1.0:
            raise ValueError("nms_delta: must be in [0, 1)")
        if self.top_k is not None and self.top_k < 0:
            raise ValueError("top_k: must be >= 0 or null")
        if self.prior_smoothing <= 0:
            raise ValueError("prior_smoothing: must be > 0")
        if self.discard_threshold is not None and not 0.0 <= self.discard_threshold <= 1.0:
            raise ValueError("discard_threshold: must be in [0, 1] or null")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Detection:
    video_id: str
    label: int
    start_frame: int
    end_frame: int
    score: float

    @property
    def length(self):
        return self.end_frame - self.start_frame

    def to_dict(self):
        return {"video_id": self.video_id, "label": self.label, "start_frame": self.start_frame,
                "end_frame": self.end_frame, "score": self.score}


@dataclass
class DurationPrior:
    """Per-class distribution over window lengths.

    ``table[c][L] = (count[c][L] + eps) / (sum_L count[c][L] + eps * |lengths|)``
    """
    lengths: tuple
    counts: dict = field(default_factory=dict)
    smoothing: float = 1.0

    def prob(self, label, length):
        row = self.counts.get(label, {})
        total = sum(row.values())
        return (row.get(length, 0) + self.smoothing) / (total + self.smoothing * len(self.lengths))

    @classmethod
    def from_instances(cls, records, num_classes, lengths=DEFAULT_LENGTHS, smoothing=1.0):
        """Count training instance durations, each binned to the window
        length nearest on a log scale (ties go to the shorter length)."""
        lengths = tuple(lengths)
        counts = {c: {} for c in range(num_classes)}
        log_lengths = np.log(lengths)
        for record in records:
            for inst in record.instances:
                gaps = np.abs(log_lengths - math.log(inst.length))
                nearest = lengths[int(np.argmin(gaps))]
                row = counts.setdefault(inst.label, {})
                row[nearest] = row.get(nearest, 0) + 1
        return cls(lengths, counts, smoothing)


def refine_clip(scores):
    """Clip-level refinement: class scores scaled by temporal actionness."""
    return scores.p_a * np.asarray(scores.p_l, dtype=np.float64)


def video_weights(p_b, alpha):
    """Video-level softmax weights ``exp(-alpha p_b) / sum exp(-alpha p_b)``."""
    p_b = np.asarray(p_b, dtype=np.float64)
    if p_b.size == 0:
        raise ValueError("video_weights needs at least one clip")
    z = -alpha * p_b
    e = np.exp(z - z.max())
    return e / e.sum()


def duration_rescore(score, length, label, prior):
    return score * prior.prob(label, length)


def temporal_iou(a, b):
    """IoU of half-open intervals ``(start, end)``."""
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def _rank_key(d):
    return (-d.score, d.start_frame, -d.length)


def temporal_nms(candidates, delta):
    """Greedy NMS over same-video, same-class candidates.

    A candidate is suppressed when its tIoU with a kept one exceeds ``delta``.
    """
    remaining = sorted(candidates, key=_rank_key)
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        span = (best.start_frame, best.end_frame)
        remaining = [d for d in remaining
                     if temporal_iou(span, (d.start_frame, d.end_frame)) <= delta]
    return kept


def detect_video(clip_scores, cfg, prior=None):
    """Rank detections for one video from its clip scores."""
    if not clip_scores:
        return []
    p_b = np.array([s.p_b for s in clip_scores])
    weights = video_weights(p_b, cfg.alpha)
    per_class = {}
    for s, w in zip(clip_scores, weights):
        if cfg.discard_threshold is not None and s.p_b >= cfg.discard_threshold:
            continue
        if cfg.use_actionness:
            refined = w * refine_clip(s)
        else:
            refined = w * np.asarray(s.p_l, dtype=np.float64)
        win = s.window
        # the last entry of p_l is the background class
        for label in range(len(refined) - 1):
            score = float(refined[label])
            if cfg.duration_prior_enabled and prior is not None:
                score = duration_rescore(score, win.length, label, prior)
            per_class.setdefault(label, []).append(
                Detection(win.video_id, label, win.start, win.end, score))
    merged = []
    for label in sorted(per_class):
        merged.extend(temporal_nms(per_class[label], cfg.nms_delta))
    merged.sort(key=lambda d: (-d.score, d.label, d.start_frame, -d.length))
    if cfg.top_k is not None:
        merged = merged[:cfg.top_k]
    return merged


def write_detections(path, detections):
    """JSON array sorted by video id, then descending score."""
    ordered = sorted(detections, key=lambda d: (d.video_id, -d.score, d.label, d.start_frame))
    with open(path, "w") as fh:
        json.dump([d.to_dict() for d in ordered], fh, indent=1)
        fh.write("\n")


def read_detections(path):
    with open(path) as fh:
        rows = json.load(fh)
    if not isinstance(rows, list):
        raise ValueError(f"{path}: detections file must hold a JSON array")
    dets = []
    for i, row in enumerate(rows):
        try:
            dets.append(Detection(str(row["video_id"]), int(row["label"]), int(row["start_frame"]),
                                  int(row["end_frame"]), float(row["score"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}: detection {i} malformed: {exc}") from exc
    return dets
