"""Detection path: windows -> clips -> network (eval mode) -> detections."""
import numpy as np

from .augment import make_clip
from .clipper import enumerate_windows
from .net3d import layers as L
from .net3d.model import PROPOSAL_BACKGROUND, forward
from .postproc import ClipScores, detect_video


def score_video(params, record, frames, window_spec, augment_cfg, chunk=16):
    """ClipScores for every sliding window of one video."""
    windows = enumerate_windows(record.num_frames, window_spec, record.id)
    scores = []
    for lo in range(0, len(windows), chunk):
        part = windows[lo:lo + chunk]
        batch = np.stack([make_clip(frames, w, augment_cfg).pixels for w in part])
        out, _ = forward(params, batch, mode="eval")
        p_prop = L.softmax(out.prop_logits)
        p_cls = L.softmax(out.cls_logits)
        for i, w in enumerate(part):
            scores.append(ClipScores(w, float(p_prop[i, PROPOSAL_BACKGROUND]), p_cls[i],
                                     float(out.actionness[i])))
    return scores


def detect(params, records, volumes, window_spec, augment_cfg, postproc_cfg, prior=None):
    """Detections for a list of videos, concatenated in video order."""
    dets = []
    for record, frames in zip(records, volumes):
        scores = score_video(params, record, frames, window_spec, augment_cfg)
        dets.extend(detect_video(scores, postproc_cfg, prior))
    return dets
