"""Independent brute-force references used by the unit and acceptance tests.

Each one is written from the contract, deliberately naive and loop-based,
and shares no code with the package.
"""
import math

import numpy as np


# -- clipper ----------------------------------------------------------------

def windows_by_exhaustive_starts(num_frames, lengths, strides):
    """Test every start for every length."""
    out = []
    for length, stride in zip(lengths, strides):
        for start in range(num_frames):
            if start % stride == 0 and start + length <= num_frames:
                out.append((length, start))
    return out


def actionness_by_frame_count(start, length, instances):
    """Count frames of the window lying inside any instance."""
    covered = 0
    for t in range(start, start + length):
        if any(a.start_frame <= t < a.end_frame for a in instances):
            covered += 1
    return covered, length


def intervals_disjoint_with_gap(instances, min_gap):
    for i in range(len(instances)):
        for j in range(len(instances)):
            if i == j:
                continue
            a, b = instances[i], instances[j]
            if a.start_frame < b.end_frame and b.start_frame < a.end_frame:
                return False
            if a.end_frame <= b.start_frame and b.start_frame - a.end_frame < min_gap:
                return False
    return True


# -- augment ----------------------------------------------------------------

def resize_scalar(frame, out_h, out_w):
    in_h, in_w, c = frame.shape
    out = np.zeros((out_h, out_w, c))
    for y in range(out_h):
        sy = min(max((y + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, in_h - 1)
        fy = sy - y0
        for x in range(out_w):
            sx = min(max((x + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, in_w - 1)
            fx = sx - x0
            for k in range(c):
                top = frame[y0, x0, k] * (1 - fx) + frame[y0, x1, k] * fx
                bot = frame[y1, x0, k] * (1 - fx) + frame[y1, x1, k] * fx
                out[y, x, k] = top * (1 - fy) + bot * fy
    return out


def shear_scalar(frame, theta):
    h, w, c = frame.shape
    t = math.tan(theta * math.pi / 180)
    out = np.zeros_like(frame, dtype=float)
    for y in range(h):
        for x in range(w):
            xs = min(max(x + t * (y - (h - 1) / 2), 0.0), w - 1)
            x0 = int(math.floor(xs))
            x1 = min(x0 + 1, w - 1)
            f = xs - x0
            for k in range(c):
                out[y, x, k] = frame[y, x0, k] * (1 - f) + frame[y, x1, k] * f
    return out


# -- net3d ------------------------------------------------------------------

def conv3d_naive(x, w, b):
    """Seven nested loops over (n, co, t, y, x, ci, taps)."""
    n, ci_n, t_n, h_n, w_n = x.shape
    co_n = w.shape[0]
    out = np.zeros((n, co_n, t_n, h_n, w_n))
    for n_ in range(n):
        for co in range(co_n):
            for t in range(t_n):
                for y in range(h_n):
                    for xx in range(w_n):
                        acc = b[co]
                        for ci in range(ci_n):
                            for dt in range(3):
                                for dy in range(3):
                                    for dx in range(3):
                                        tt, yy, x2 = t + dt - 1, y + dy - 1, xx + dx - 1
                                        if 0 <= tt < t_n and 0 <= yy < h_n and 0 <= x2 < w_n:
                                            acc += w[co, ci, dt, dy, dx] * x[n_, ci, tt, yy, x2]
                        out[n_, co, t, y, xx] = acc
    return out


def maxpool_naive(x, extent):
    """Forward max and first-argmax gradient routing for upstream ones."""
    kt, kh, kw = extent
    n, c, t, h, w = x.shape
    ot, oh, ow = t // kt, h // kh, w // kw
    out = np.zeros((n, c, ot, oh, ow))
    route = np.zeros_like(x)
    for a in range(n):
        for b in range(c):
            for i in range(ot):
                for j in range(oh):
                    for k in range(ow):
                        best, where = -np.inf, None
                        for dt in range(kt):
                            for dy in range(kh):
                                for dx in range(kw):
                                    v = x[a, b, i * kt + dt, j * kh + dy, k * kw + dx]
                                    if v > best:
                                        best, where = v, (i * kt + dt, j * kh + dy, k * kw + dx)
                        out[a, b, i, j, k] = best
                        route[(a, b) + where] += 1
    return out, route


# -- postproc ---------------------------------------------------------------

def tiou(a, b):
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def nms_reference(cands, delta):
    """O(n^2) greedy: scan a fully ordered list, keep if no kept one overlaps > delta."""
    order = sorted(range(len(cands)),
                   key=lambda i: (-cands[i][2], cands[i][0], -(cands[i][1] - cands[i][0])))
    kept = []
    for i in order:
        s, e, _ = cands[i]
        if all(tiou((s, e), (cands[k][0], cands[k][1])) <= delta for k in kept):
            kept.append(i)
    return kept


# -- evalmap ----------------------------------------------------------------

def ap_bruteforce(flags, num_gt):
    """Integrate the interpolated PR curve over every rank prefix."""
    if num_gt == 0 or not flags:
        return 0.0
    points = []
    tp = 0
    for i, f in enumerate(flags):
        tp += 1 if f else 0
        points.append((tp / num_gt, tp / (i + 1)))
    total, prev_recall = 0.0, 0.0
    for r, _ in points:
        if r > prev_recall:
            p_interp = max(p for rr, p in points if rr >= r)
            total += (r - prev_recall) * p_interp
            prev_recall = r
    return total


def match_reference(dets, gts, alpha):
    """``dets``: ranked (video, start, end); ``gts``: {video: [(start, end)]}."""
    used = set()
    flags = []
    for video, s, e in dets:
        cands = [(tiou((s, e), g), j) for j, g in enumerate(gts.get(video, []))
                 if (video, j) not in used]
        cands = [(v, j) for v, j in cands if v >= alpha]
        if cands:
            best = max(cands, key=lambda vj: (vj[0], -vj[1]))
            used.add((video, best[1]))
            flags.append(True)
        else:
            flags.append(False)
    return flags
