"""Multi-scale temporal sliding windows and per-clip training labels."""
from dataclasses import dataclass

import numpy as np

CLIP_LENGTH = 16
DEFAULT_LENGTHS = (16, 32, 64, 128, 256, 512)

PROPOSAL_ACTION = "action"
PROPOSAL_BACKGROUND = "background"


def default_stride(length):
    return 16 if length in (16, 32) else 32


@dataclass(frozen=True)
class WindowSpec:
    lengths: tuple = DEFAULT_LENGTHS
    strides: tuple = None

    def __post_init__(self):
        lengths = tuple(int(v) for v in self.lengths)
        strides = (tuple(default_stride(v) for v in lengths) if self.strides is None
                   else tuple(int(v) for v in self.strides))
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "strides", strides)
        if not lengths:
            raise ValueError("lengths: need at least one window length")
        if any(b <= a for a, b in zip(lengths, lengths[1:])):
            raise ValueError("lengths: must be strictly increasing")
        if lengths[0] < CLIP_LENGTH:
            raise ValueError(f"lengths: minimum window length is {CLIP_LENGTH}")
        if len(strides) != len(lengths):
            raise ValueError("strides: need one stride per window length")
        if min(strides) < 1:
            raise ValueError("strides: must be >= 1")

    def stride(self, length):
        return self.strides[self.lengths.index(length)]

    def to_dict(self):
        return {"lengths": list(self.lengths), "strides": list(self.strides)}


@dataclass(frozen=True, order=True)
class Window:
    video_id: str
    start: int
    length: int

    @property
    def end(self):
        return self.start + self.length


@dataclass
class Clip:
    window: Window
    frame_indices: np.ndarray
    pixels: np.ndarray  # (16, 3, H', W')


@dataclass(frozen=True)
class ClipLabel:
    proposal: str
    category: int
    actionness: float

    @property
    def is_action(self):
        return self.proposal == PROPOSAL_ACTION


def enumerate_windows(num_frames, spec=None, video_id=""):
    """All windows that fit inside the video, ordered by (length, start)."""
    if num_frames < 1:
        raise ValueError("num_frames must be >= 1")
    spec = spec or WindowSpec()
    windows = []
    for length, stride in zip(spec.lengths, spec.strides):
        if length > num_frames:
            continue
        for start in range(0, num_frames - length + 1, stride):
            windows.append(Window(video_id, start, length))
    return windows


def sample_frame_indices(window):
    """16 frame indices spread uniformly over the window."""
    i = np.arange(CLIP_LENGTH)
    return window.start + (i * window.length) // CLIP_LENGTH


def _overlap(start, end, instance):
    return max(0, min(end, instance.end_frame) - max(start, instance.start_frame))


def temporal_actionness(window, instances):
    """Fraction of the window covered by (disjoint) action instances."""
    covered = sum(_overlap(window.start, window.end, a) for a in instances)
    return covered / window.length


def assign_labels(window, instances, num_classes, pos_threshold=0.5):
    """Proposal, category and actionness targets for one window.

    Windows with actionness below ``pos_threshold`` are background for both
    classifiers (category ``num_classes``) but keep their true actionness.
    """
    p_a = temporal_actionness(window, instances)
    if p_a < pos_threshold or p_a == 0:
        return ClipLabel(PROPOSAL_BACKGROUND, num_classes, p_a)
    best_len, best_label = -1, None
    for a in instances:
        inter = _overlap(window.start, window.end, a)
        if inter > best_len or (inter == best_len and a.label < best_label):
            best_len, best_label = inter, a.label
    return ClipLabel(PROPOSAL_ACTION, best_label, p_a)


def label_video(record, num_classes, spec=None, pos_threshold=0.5):
    """Windows of one video with their labels, in enumeration order."""
    windows = enumerate_windows(record.num_frames, spec, record.id)
    return [(w, assign_labels(w, record.instances, num_classes, pos_threshold)) for w in windows]
