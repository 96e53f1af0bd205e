"""Slow, independent reference computations used as test oracles."""
import math

import numpy as np

from prop3d.ground import N_FEATURES, GroundClassifier, loss_and_grads


def naive_box_sum(values, r):
    """Literal triple loop over a half-open index range."""
    i0, i1, j0, j1, k0, k1 = (int(v) for v in r)
    total = 0
    for i in range(i0, i1):
        for j in range(j0, j1):
            for k in range(k0, k1):
                total += values[i, j, k]
    return total


def slice_sum(values, r):
    i0, i1, j0, j1, k0, k1 = (int(v) for v in r)
    return values[i0:i1, j0:j1, k0:k1].sum()


def inside_box(pts, row):
    """Membership of (N, 3) points in a yaw-rotated box row (cx, cy, cz, sx, sy, sz, az)."""
    cx, cy, cz, sx, sy, sz, az = row
    dx, dy, dz = pts[:, 0] - cx, pts[:, 1] - cy, pts[:, 2] - cz
    c, s = math.cos(az), math.sin(az)
    # inverse of x = c*xl + s*zl, z = -s*xl + c*zl
    xl = c * dx - s * dz
    zl = s * dx + c * dz
    return (np.abs(xl) <= 0.5 * sx) & (np.abs(dy) <= 0.5 * sy) & (np.abs(zl) <= 0.5 * sz)


def corners_of(row):
    cx, cy, cz, sx, sy, sz, az = row
    c, s = math.cos(az), math.sin(az)
    out = []
    for ex in (-0.5, 0.5):
        for ey in (-0.5, 0.5):
            for ez in (-0.5, 0.5):
                xl, zl = ex * sx, ez * sz
                out.append((cx + c * xl + s * zl, cy + ey * sy, cz - s * xl + c * zl))
    return np.array(out)


def monte_carlo_iou(a, b, unit_samples):
    """IoU estimate from uniform samples (given in [0, 1)^3) over the union's bounding box."""
    pts = np.vstack([corners_of(a), corners_of(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    p = lo + unit_samples * (hi - lo)
    ia, ib = inside_box(p, a), inside_box(p, b)
    union = np.count_nonzero(ia | ib)
    return np.count_nonzero(ia & ib) / union if union else 0.0


def aligned_iou(a, b):
    """Closed form for boxes with azimuth 0: product of per-axis overlaps."""
    inter = 1.0
    for ax, sz in ((0, 3), (1, 4), (2, 5)):
        lo = max(a[ax] - a[sz] / 2, b[ax] - b[sz] / 2)
        hi = min(a[ax] + a[sz] / 2, b[ax] + b[sz] / 2)
        inter *= max(0.0, hi - lo)
    return inter / (a[3] * a[4] * a[5] + b[3] * b[4] * b[5] - inter)


def rect_iou(a, b):
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter)


def brute_nms(rects, keys, K, delta):
    """O(n^2) NMS: repeatedly take the smallest key among candidates not yet suppressed."""
    alive = list(range(len(rects)))
    out = []
    while alive and len(out) < K:
        best = min(alive, key=lambda i: keys[i])
        out.append(best)
        alive = [i for i in alive if i != best and rect_iou(rects[i], rects[best]) < delta]
    return out


def slab_free_space(occ, cam):
    """Free voxels by exact segment/voxel slab tests (voxel units, camera at ``cam``).

    Every segment cam -> occupied voxel center marks the voxels it passes through,
    in order of entry, until it enters an occupied voxel.
    """
    dims = occ.shape
    free = np.zeros(dims, dtype=np.uint8)
    grid = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), axis=-1).reshape(-1, 3)
    lo_all = grid.astype(np.float64)
    hi_all = lo_all + 1.0
    cam = np.asarray(cam, dtype=np.float64)
    for tgt in np.argwhere(occ > 0):
        d = tgt + 0.5 - cam
        t_in = np.zeros(grid.shape[0])
        t_out = np.ones(grid.shape[0])
        for ax in range(3):
            if d[ax] == 0:
                ok = (cam[ax] > lo_all[:, ax]) & (cam[ax] < hi_all[:, ax])
                t_out = np.where(ok, t_out, -1.0)
                continue
            ta = (lo_all[:, ax] - cam[ax]) / d[ax]
            tb = (hi_all[:, ax] - cam[ax]) / d[ax]
            t_in = np.maximum(t_in, np.minimum(ta, tb))
            t_out = np.minimum(t_out, np.maximum(ta, tb))
        hit = np.flatnonzero(t_out > t_in)
        for v in hit[np.argsort(t_in[hit], kind="stable")]:
            i, j, k = grid[v]
            if occ[i, j, k]:
                break
            free[i, j, k] = 1
    return free


def pr_ap(detections, gts, thr):
    """Hand-rolled ALP: greedy matching by score, P-R points at each distinct score, envelope area."""
    rows = []
    for s_idx, ((centers, scores), g) in enumerate(zip(detections, gts)):
        order = sorted(range(len(scores)), key=lambda i: -scores[i])
        used = set()
        for i in order:
            best, bd = None, None
            for j, gc in enumerate(g):
                if j in used:
                    continue
                d = math.dist(centers[i], gc)
                if bd is None or d < bd:
                    best, bd = j, d
            tp = best is not None and bd < thr
            if tp:
                used.add(best)
            rows.append((scores[i], tp))
    n_gt = sum(len(g) for g in gts)
    rows.sort(key=lambda r: -r[0])
    pts = []
    tp = 0
    for i, (s, hit) in enumerate(rows):
        tp += hit
        if i + 1 == len(rows) or rows[i + 1][0] != s:
            pts.append((tp / n_gt, tp / (i + 1)))
    ap, prev_r = 0.0, 0.0
    for k, (r, _) in enumerate(pts):
        if r > prev_r:
            ap += (r - prev_r) * max(p for _, p in pts[k:])
            prev_r = r
    return ap


def gradient_check(seed: int, eps: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients, all parameters."""
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, (25, N_FEATURES))
    y = (rng.random(25) < 0.5).astype(np.float64)
    clf = GroundClassifier.initial(seed)
    clf.W1 = rng.normal(0, 0.5, clf.W1.shape)
    clf.b1 = rng.normal(0, 0.5, clf.b1.shape)
    clf.w2 = rng.normal(0, 0.5, clf.w2.shape)
    clf.b2 = float(rng.normal())
    _, grads = loss_and_grads(clf, X, y)
    worst = 0.0
    for name, g in zip(("W1", "b1", "w2", "b2"), grads):
        if name == "b2":
            def setv(v):
                clf.b2 = v
            base = clf.b2
            setv(base + eps)
            lp, _ = loss_and_grads(clf, X, y)
            setv(base - eps)
            lm, _ = loss_and_grads(clf, X, y)
            setv(base)
            num, ana = (lp - lm) / (2 * eps), g
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
            continue
        arr = getattr(clf, name)
        for idx in np.ndindex(arr.shape):
            base = arr[idx]
            arr[idx] = base + eps
            lp, _ = loss_and_grads(clf, X, y)
            arr[idx] = base - eps
            lm, _ = loss_and_grads(clf, X, y)
            arr[idx] = base
            num, ana = (lp - lm) / (2 * eps), g[idx]
            worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
    return worst
