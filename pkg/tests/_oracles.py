"""Independent reference implementations used only by the tests.

Everything in here is deliberately written from the documented procedures,
not from the package source: plain tuples in, plain tuples out, brute force
throughout. Where a criterion demands exact score equality the oracle
performs the canonical arithmetic (sums in member order, numpy dots) so
that float results are comparable bit for bit.
"""

import math

import numpy as np

Box = tuple  # (x1, y1, x2, y2)


def ref_iou(a: Box, b: Box) -> float:
    ix1 = max(a[0], b[0])
    iy1 = max(a[1], b[1])
    ix2 = min(a[2], b[2])
    iy2 = min(a[3], b[3])
    if ix2 <= ix1 or iy2 <= iy1:
        return 0.0
    inter = (ix2 - ix1) * (iy2 - iy1)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def grid_iou(a: Box, b: Box, cells: int = 1200) -> float:
    """Pixel-counting IoU estimate: sample cell centres on a fine grid."""
    lo_x = min(a[0], b[0])
    lo_y = min(a[1], b[1])
    hi_x = max(a[2], b[2])
    hi_y = max(a[3], b[3])
    xs = lo_x + (np.arange(cells) + 0.5) * (hi_x - lo_x) / cells
    ys = lo_y + (np.arange(cells) + 0.5) * (hi_y - lo_y) / cells
    gx, gy = np.meshgrid(xs, ys)
    in_a = (gx >= a[0]) & (gx < a[2]) & (gy >= a[1]) & (gy < a[3])
    in_b = (gx >= b[0]) & (gx < b[2]) & (gy >= b[1]) & (gy < b[3])
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def ref_cosine(x: np.ndarray, y: np.ndarray) -> float:
    p = float(np.dot(x, y))
    q = float(np.dot(x, x)) * float(np.dot(y, y))
    return math.sqrt(min((p * p) / q, 1.0))


def _weighted_fuse(members):
    """members: list of (score, box) in insertion order."""
    total = 0.0
    for s, _ in members:
        total += s
    mean = total / len(members)
    if total > 0.0:
        box = tuple(
            sum(s * b[c] for s, b in members) / total for c in range(4)
        )
    else:
        box = tuple(sum(b[c] for _, b in members) / len(members) for c in range(4))
    return box, mean


def _ordered(dets):
    """Indices of (score, box) pairs: score desc, then coords, then position."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i][0], dets[i][1], i))


def oracle_wbf(dets, iou_thr, num_sources, post_thr=0.0):
    """dets: list of (score, box) for ONE class. Returns [(box, score), ...].

    Greedy clustering against the running fused list, first match wins,
    fused box recomputed from scratch after every insertion, then the
    member-count rescale and the strict post filter.
    """
    clusters: list[list[int]] = []
    fused: list[tuple] = []
    for i in _ordered(dets):
        s, b = dets[i]
        hit = None
        for j, (fb, _) in enumerate(fused):
            if ref_iou(b, fb) > iou_thr:
                hit = j
                break
        if hit is None:
            clusters.append([i])
            fused.append(_weighted_fuse([dets[i]]))
        else:
            clusters[hit].append(i)
            fused[hit] = _weighted_fuse([dets[m] for m in clusters[hit]])
    out = []
    for mem, (fb, fs) in zip(clusters, fused):
        factor = min(len(mem), num_sources) / num_sources
        score = fs * factor
        if score > post_thr:
            out.append((fb, score))
    return out


def oracle_nms(dets, iou_thr):
    """Textbook NMS over (score, box) pairs of one class; keeps inputs as-is."""
    remaining = [_ for _ in _ordered(dets)]
    keep = []
    while remaining:
        top = remaining.pop(0)
        keep.append(dets[top])
        remaining = [i for i in remaining if ref_iou(dets[i][1], dets[top][1]) <= iou_thr]
    return [(b, s) for s, b in keep]


def oracle_soft_nms(dets, sigma, post_thr=0.0):
    """Gaussian Soft-NMS: every survivor decays by exp(-iou^2/sigma) per emit."""
    pool = [(s, b, i) for i, (s, b) in enumerate(dets)]
    out = []
    while pool:
        pool.sort(key=lambda e: (-e[0], e[1], e[2]))
        s, b, i = pool.pop(0)
        out.append((b, s))
        pool = [
            (ps * math.exp(-(ref_iou(pb, b) ** 2) / sigma), pb, pi)
            for ps, pb, pi in pool
        ]
    return [(b, s) for b, s in out if s > post_thr]


def oracle_nmw(dets, iou_thr):
    """NMW: cluster like NMS, emit the overlap-weighted mean position with
    the top box's score."""
    remaining = [_ for _ in _ordered(dets)]
    out = []
    while remaining:
        top = remaining.pop(0)
        ts, tb = dets[top]
        member_ids = [top] + [i for i in remaining if ref_iou(dets[i][1], tb) > iou_thr]
        weights = [dets[i][0] * ref_iou(dets[i][1], tb) for i in member_ids]
        total = sum(weights)
        if total > 0.0:
            box = tuple(
                sum(w * dets[i][1][c] for w, i in zip(weights, member_ids)) / total
                for c in range(4)
            )
        else:
            box = tb
        out.append((box, ts))
        remaining = [i for i in remaining if i not in member_ids]
    return out


def oracle_ap(dets, gts, iou_thr):
    """101-point interpolated AP for one class.

    dets: list of (frame, box, score); gts: list of (frame, box).
    Returns None when there is no ground truth at all.
    """
    if not gts:
        return None
    order = sorted(range(len(dets)), key=lambda i: (-dets[i][2], i))
    taken = set()
    flags = []
    for i in order:
        frame, box, _ = dets[i]
        best = None
        best_iou = 0.0
        for j, (gf, gb) in enumerate(gts):
            if j in taken or gf != frame:
                continue
            v = ref_iou(box, gb)
            if v >= iou_thr and v > best_iou:
                best, best_iou = j, v
        flags.append(best is not None)
        if best is not None:
            taken.add(best)
    tp = 0
    fp = 0
    precisions = []
    recalls = []
    for hit in flags:
        tp += 1 if hit else 0
        fp += 0 if hit else 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / len(gts))
    total = 0.0
    for i in range(101):
        r = i / 100
        best_p = 0.0
        for p, rec in zip(precisions, recalls):
            if rec >= r and p > best_p:
                best_p = p
        total += best_p
    return total / 101


def oracle_map(dets_by_class, gts_by_class, thresholds):
    """Mean over classes (with GT) of the mean AP over thresholds."""
    per_class = []
    for c in sorted(gts_by_class):
        gts = gts_by_class[c]
        if not gts:
            continue
        aps = [oracle_ap(dets_by_class.get(c, []), gts, t) for t in thresholds]
        per_class.append(sum(aps) / len(aps))
    if not per_class:
        return None
    return sum(per_class) / len(per_class)
