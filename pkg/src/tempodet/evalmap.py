"""Average precision at temporal IoU thresholds, THUMOS-style."""
import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .postproc import temporal_iou

DEFAULT_TIOU = (0.1, 0.2, 0.3, 0.4, 0.5)


@dataclass(frozen=True)
class EvalConfig:
    tiou_thresholds: tuple = DEFAULT_TIOU

    def __post_init__(self):
        object.__setattr__(self, "tiou_thresholds", tuple(float(a) for a in self.tiou_thresholds))
        if not self.tiou_thresholds:
            raise ValueError("tiou_thresholds: need at least one threshold")
        for a in self.tiou_thresholds:
            if not 0.0 < a <= 1.0:
                raise ValueError("tiou_thresholds: each threshold must be in (0, 1]")

    def to_dict(self):
        return {"tiou_thresholds": list(self.tiou_thresholds)}


@dataclass
class EvalReport:
    thresholds: tuple
    ap: dict = field(default_factory=dict)          # ap[label][alpha]
    map: dict = field(default_factory=dict)         # map[alpha]
    num_detections: dict = field(default_factory=dict)
    num_gt: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "thresholds": list(self.thresholds),
            "ap": {str(c): {str(a): v for a, v in row.items()} for c, row in self.ap.items()},
            "map": {str(a): v for a, v in self.map.items()},
            "num_detections": {str(c): n for c, n in self.num_detections.items()},
            "num_gt": {str(c): n for c, n in self.num_gt.items()},
        }

    def write(self, prefix):
        """Write ``<prefix>.csv`` and ``<prefix>.json``."""
        with open(f"{prefix}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class"] + [f"{a:g}" for a in self.thresholds])
            for c in sorted(self.ap):
                w.writerow([c] + [f"{self.ap[c][a]:.6f}" for a in self.thresholds])
            w.writerow(["mAP"] + [f"{self.map[a]:.6f}" for a in self.thresholds])
        with open(f"{prefix}.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def _gt_index(gts):
    """Accept ``{video_id: [ActionInstance]}`` or a list of VideoRecords."""
    if isinstance(gts, dict):
        return gts
    return {r.id: list(r.instances) for r in gts}


def match_detections(dets, gts, alpha, label=None):
    """TP/FP flag per detection (``dets`` already ranked best first).

    A detection is a true positive when an unmatched ground truth of the
    same video (and class) overlaps it with tIoU >= alpha; it consumes the
    highest-overlap such ground truth.
    """
    gts = _gt_index(gts)
    used = set()
    flags = []
    for d in dets:
        cls = d.label if label is None else label
        best, best_iou = None, -1.0
        for j, g in enumerate(gts.get(d.video_id, ())):
            if g.label != cls or (d.video_id, j) in used:
                continue
            iou = temporal_iou((d.start_frame, d.end_frame), (g.start_frame, g.end_frame))
            if iou >= alpha and iou > best_iou:
                best, best_iou = j, iou
        if best is None:
            flags.append(False)
        else:
            used.add((d.video_id, best))
            flags.append(True)
    return flags


def average_precision(flags, num_gt):
    """All-point interpolated AP of a ranked TP/FP list."""
    flags = np.asarray(flags, dtype=bool)
    if num_gt <= 0 or flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    precision = tp / np.arange(1, flags.size + 1)
    # interpolated precision: running max from the tail
    interp = np.maximum.accumulate(precision[::-1])[::-1]
    return float(interp[flags].sum() / num_gt)


def evaluate(dets, gts, cfg=None, num_classes=None):
    """Per-class AP and mAP at every threshold of ``cfg``.

    mAP averages over classes that have at least one ground truth.
    """
    cfg = cfg or EvalConfig()
    gts = _gt_index(gts)
    labels = set(d.label for d in dets)
    for instances in gts.values():
        labels.update(g.label for g in instances)
    if num_classes is not None:
        labels.update(range(num_classes))
    report = EvalReport(cfg.tiou_thresholds)
    for c in sorted(labels):
        ranked = sorted((d for d in dets if d.label == c), key=lambda d: -d.score)
        n_gt = sum(1 for instances in gts.values() for g in instances if g.label == c)
        report.num_detections[c] = len(ranked)
        report.num_gt[c] = n_gt
        report.ap[c] = {a: average_precision(match_detections(ranked, gts, a), n_gt)
                        for a in cfg.tiou_thresholds}
    scored = [c for c in report.ap if report.num_gt[c] > 0]
    for a in cfg.tiou_thresholds:
        report.map[a] = float(np.mean([report.ap[c][a] for c in scored])) if scored else 0.0
    return report
