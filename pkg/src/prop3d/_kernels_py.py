"""Pure numpy implementations of the hot loops.

Signatures and results match the compiled ``_kernels`` extension exactly; this
module is what runs when the extension is not built.
"""
import numpy as np


def box_sums(S, ranges):
    """Inclusion-exclusion sums over half-open index ranges (i0, i1, j0, j1, k0, k1)."""
    r = np.asarray(ranges, dtype=np.int64).reshape(-1, 6)
    i0, i1, j0, j1, k0, k1 = r.T
    return (S[i1, j1, k1] - S[i0, j1, k1] - S[i1, j0, k1] - S[i1, j1, k0]
            + S[i0, j0, k1] + S[i0, j1, k0] + S[i1, j0, k0] - S[i0, j0, k0])


def potentials(S_occ, S_free, S_ht, ranges, ranges_plus, eps, cap):
    """Columns: occupancy fraction, non-free fraction, mean height prior, height contrast."""
    r = np.asarray(ranges, dtype=np.int64).reshape(-1, 6)
    rp = np.asarray(ranges_plus, dtype=np.int64).reshape(-1, 6)
    n = r.shape[0]
    out = np.zeros((n, 4))
    count = (r[:, 1] - r[:, 0]) * (r[:, 3] - r[:, 2]) * (r[:, 5] - r[:, 4])
    count_p = (rp[:, 1] - rp[:, 0]) * (rp[:, 3] - rp[:, 2]) * (rp[:, 5] - rp[:, 4])
    ok = count > 0
    if not ok.any():
        return out
    r, rp, c, cp = r[ok], rp[ok], count[ok].astype(np.float64), count_p[ok].astype(np.float64)
    occ = box_sums(S_occ, r)
    free = box_sums(S_free, r)
    ht = box_sums(S_ht, r)
    ht_p = box_sums(S_ht, rp)
    # clamp away round-off from the float integral
    a = np.clip(ht / c, 0.0, 1.0)
    a_p = np.clip(np.where(cp > 0, ht_p / np.where(cp > 0, cp, 1.0), 0.0), 0.0, 1.0)
    denom = np.maximum(a_p - a, eps)
    contr = np.where(a > 0, np.minimum(a / denom, cap), 0.0)
    block = np.empty((r.shape[0], 4))
    block[:, 0] = occ / c
    block[:, 1] = 1.0 - free / c
    block[:, 2] = a
    block[:, 3] = contr
    out[ok] = block
    return out


def _ray_setup(cam, targets, dims):
    """Entry point, starting voxel, step, tmax and tdelta for segments cam -> targets."""
    n = targets.shape[0]
    d = targets - cam[None, :]
    dims_f = np.asarray(dims, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (0.0 - cam[None, :]) * inv
        tb = (dims_f[None, :] - cam[None, :]) * inv
    tlo = np.where(d != 0.0, np.minimum(ta, tb), -np.inf)
    t0 = np.maximum(np.max(tlo, axis=1), 0.0)
    start = cam[None, :] + t0[:, None] * d
    cur = np.floor(start).astype(np.int64)
    cur = np.clip(cur, 0, np.asarray(dims, dtype=np.int64)[None, :] - 1)
    step = np.sign(d).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        nxt = np.where(step > 0, cur + 1, cur).astype(np.float64)
        tmax = np.where(step != 0, (nxt - cam[None, :]) * inv, np.inf)
        tdelta = np.where(step != 0, np.abs(inv), np.inf)
    return cur, step, tmax, tdelta, n


def carve(occ, cam):
    """Free-space carving by 3D DDA from ``cam`` (voxel units) to every occupied voxel center."""
    occ = np.ascontiguousarray(occ, dtype=np.uint8)
    dims = occ.shape
    free = np.zeros(dims, dtype=np.uint8)
    idx = np.argwhere(occ > 0)
    if idx.shape[0] == 0:
        return free
    cam = np.asarray(cam, dtype=np.float64)
    targets = idx.astype(np.float64) + 0.5
    cur, step, tmax, tdelta, n = _ray_setup(cam, targets, dims)
    active = np.arange(n)
    rows = np.arange(n)
    while active.size:
        c = cur[active]
        hit = occ[c[:, 0], c[:, 1], c[:, 2]] > 0
        active = active[~hit]
        if not active.size:
            break
        c = cur[active]
        free[c[:, 0], c[:, 1], c[:, 2]] = 1
        tm = tmax[active]
        axis = np.argmin(tm, axis=1)
        tnext = tm[rows[: active.size], axis]
        keep = tnext <= 1.0
        active, axis = active[keep], axis[keep]
        cur[active, axis] += step[active, axis]
        tmax[active, axis] += tdelta[active, axis]
        c = cur[active]
        inside = np.all((c >= 0) & (c < np.asarray(dims)[None, :]), axis=1)
        active = active[inside]
    return free


def _iou_rows(r, kr, area_r, area_k):
    """IoU of each row of ``r`` against each row of ``kr``, same arithmetic as the compiled kernel."""
    iw = np.minimum(kr[None, :, 2], r[:, None, 2]) - np.maximum(kr[None, :, 0], r[:, None, 0])
    ih = np.minimum(kr[None, :, 3], r[:, None, 3]) - np.maximum(kr[None, :, 1], r[:, None, 1])
    with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
        inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
        union = area_k[None, :] + area_r[:, None] - inter
        return np.where(union > 0, inter / union, 0.0)


def nms_rects(rects, k, delta, block=1024, chunk=32):
    """Scan rects in the given order; keep each one whose IoU with every kept rect is below delta.

    Blocks of candidates are first tested against everything kept before the block, then the
    survivors are resolved in order against the rects kept inside the block. IoU >= delta bounds
    the center offset by (1 - delta) / delta times the candidate width, so the block test only
    looks at kept rects whose center x falls in that window (same bound as the compiled kernel).
    """
    rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
    n = rects.shape[0]
    if n == 0 or k <= 0:
        return np.zeros(0, dtype=np.int64)
    with np.errstate(invalid="ignore", over="ignore"):
        area = (rects[:, 2] - rects[:, 0]) * (rects[:, 3] - rects[:, 1])
        cx = 0.5 * (rects[:, 0] + rects[:, 2])
        reach = (1.0 - delta) / delta * np.abs(rects[:, 2] - rects[:, 0]) * (1.0 + 1e-9) + 1e-9 * (np.abs(cx) + 1.0)
    finite = np.isfinite(cx) & np.isfinite(reach)
    kept = []
    # center-sorted index of the finite kept rects; non-finite ones can never suppress
    idx_cx = np.zeros(0)
    idx_id = np.zeros(0, dtype=np.int64)
    start = 0
    while start < n and len(kept) < k:
        stop = min(start + block, n)
        cand = np.arange(start, stop)
        alive = np.ones(cand.size, dtype=bool)
        if idx_id.size:
            fin = cand[finite[cand]]
            order = fin[np.argsort(cx[fin], kind="stable")]
            for c0 in range(0, order.size, chunk):
                sub = order[c0:c0 + chunk]
                lo = np.searchsorted(idx_cx, np.min(cx[sub] - reach[sub]), "left")
                hi = np.searchsorted(idx_cx, np.max(cx[sub] + reach[sub]), "right")
                if hi <= lo:
                    continue
                kk = idx_id[lo:hi]
                hit = np.any(_iou_rows(rects[sub], rects[kk], area[sub], area[kk]) >= delta, axis=1)
                alive[sub[hit] - start] = False
        fresh = []
        for i in cand[alive]:
            if fresh and finite[i]:
                ff = np.asarray(fresh)
                if np.any(_iou_rows(rects[i:i + 1], rects[ff], area[i:i + 1], area[ff]) >= delta):
                    continue
            fresh.append(int(i))
            if len(kept) + len(fresh) >= k:
                break
        kept += fresh
        add = np.asarray([i for i in fresh if finite[i]], dtype=np.int64)
        if add.size:
            idx_id = np.concatenate([idx_id, add])
            idx_cx = np.concatenate([idx_cx, cx[add]])
            o = np.argsort(idx_cx, kind="stable")
            idx_cx, idx_id = idx_cx[o], idx_id[o]
        start = stop
    return np.asarray(kept, dtype=np.int64)
