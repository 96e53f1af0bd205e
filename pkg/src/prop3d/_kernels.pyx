# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops. Same signatures and results as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor, INFINITY, fabs, isfinite
from libc.stdlib cimport malloc, free
from libc.string cimport memmove

cnp.import_array()


cdef inline long long _isum(const long long[:, :, ::1] S, long long i0, long long i1,
                            long long j0, long long j1, long long k0, long long k1) noexcept nogil:
    return (S[i1, j1, k1] - S[i0, j1, k1] - S[i1, j0, k1] - S[i1, j1, k0]
            + S[i0, j0, k1] + S[i0, j1, k0] + S[i1, j0, k0] - S[i0, j0, k0])


cdef inline double _fsum(const double[:, :, ::1] S, long long i0, long long i1,
                         long long j0, long long j1, long long k0, long long k1) noexcept nogil:
    return (S[i1, j1, k1] - S[i0, j1, k1] - S[i1, j0, k1] - S[i1, j1, k0]
            + S[i0, j0, k1] + S[i0, j1, k0] + S[i1, j0, k0] - S[i0, j0, k0])


def box_sums(S, ranges):
    r = np.ascontiguousarray(ranges, dtype=np.int64).reshape(-1, 6)
    cdef const long long[:, ::1] rv = r
    cdef Py_ssize_t n = r.shape[0], i
    if S.dtype == np.float64:
        Sf = np.ascontiguousarray(S)
        out_f = np.empty(n, dtype=np.float64)
        _box_sums_f(Sf, rv, out_f)
        return out_f
    Si = np.ascontiguousarray(S, dtype=np.int64)
    out_i = np.empty(n, dtype=np.int64)
    _box_sums_i(Si, rv, out_i)
    return out_i


cdef void _box_sums_f(const double[:, :, ::1] S, const long long[:, ::1] r, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(r.shape[0]):
        out[i] = _fsum(S, r[i, 0], r[i, 1], r[i, 2], r[i, 3], r[i, 4], r[i, 5])


cdef void _box_sums_i(const long long[:, :, ::1] S, const long long[:, ::1] r, long long[::1] out) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(r.shape[0]):
        out[i] = _isum(S, r[i, 0], r[i, 1], r[i, 2], r[i, 3], r[i, 4], r[i, 5])


def potentials(S_occ, S_free, S_ht, ranges, ranges_plus, double eps, double cap):
    r = np.ascontiguousarray(ranges, dtype=np.int64).reshape(-1, 6)
    rp = np.ascontiguousarray(ranges_plus, dtype=np.int64).reshape(-1, 6)
    out = np.zeros((r.shape[0], 4), dtype=np.float64)
    _potentials(np.ascontiguousarray(S_occ, dtype=np.int64),
                np.ascontiguousarray(S_free, dtype=np.int64),
                np.ascontiguousarray(S_ht, dtype=np.float64),
                r, rp, eps, cap, out)
    return out


cdef inline double _clamp01(double v) noexcept nogil:
    # round-off from the float integral can leave a mean just outside [0, 1]
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


cdef void _potentials(const long long[:, :, ::1] So, const long long[:, :, ::1] Sf,
                      const double[:, :, ::1] Sh, const long long[:, ::1] r,
                      const long long[:, ::1] rp, double eps, double cap,
                      double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t i
    cdef long long cnt, cntp
    cdef double c, cp, a, ap, denom, contr
    for i in range(r.shape[0]):
        cnt = (r[i, 1] - r[i, 0]) * (r[i, 3] - r[i, 2]) * (r[i, 5] - r[i, 4])
        if cnt <= 0:
            continue
        cntp = (rp[i, 1] - rp[i, 0]) * (rp[i, 3] - rp[i, 2]) * (rp[i, 5] - rp[i, 4])
        c = <double>cnt
        cp = <double>cntp
        a = _clamp01(_fsum(Sh, r[i, 0], r[i, 1], r[i, 2], r[i, 3], r[i, 4], r[i, 5]) / c)
        if cntp > 0:
            ap = _clamp01(_fsum(Sh, rp[i, 0], rp[i, 1], rp[i, 2], rp[i, 3], rp[i, 4], rp[i, 5]) / cp)
        else:
            ap = 0.0
        denom = ap - a
        if denom < eps:
            denom = eps
        if a > 0:
            contr = a / denom
            if contr > cap:
                contr = cap
        else:
            contr = 0.0
        out[i, 0] = <double>_isum(So, r[i, 0], r[i, 1], r[i, 2], r[i, 3], r[i, 4], r[i, 5]) / c
        out[i, 1] = 1.0 - <double>_isum(Sf, r[i, 0], r[i, 1], r[i, 2], r[i, 3], r[i, 4], r[i, 5]) / c
        out[i, 2] = a
        out[i, 3] = contr


def carve(occ, cam):
    o = np.ascontiguousarray(occ, dtype=np.uint8)
    free = np.zeros(o.shape, dtype=np.uint8)
    idx = np.ascontiguousarray(np.argwhere(o > 0), dtype=np.int64)
    if idx.shape[0] == 0:
        return free
    c = np.ascontiguousarray(cam, dtype=np.float64)
    _carve(o, free, idx, c[0], c[1], c[2])
    return free


cdef void _carve(const unsigned char[:, :, ::1] occ, unsigned char[:, :, ::1] free,
                 const long long[:, ::1] idx, double cx, double cy, double cz) noexcept nogil:
    cdef long long n[3]
    cdef double cam[3]
    cdef double d[3]
    cdef double inv[3]
    cdef double tmax[3]
    cdef double tdelta[3]
    cdef long long cur[3]
    cdef long long step[3]
    cdef double ta, tb, tlo, t0, s, tnext
    cdef Py_ssize_t r, a
    cdef int ax
    n[0] = occ.shape[0]; n[1] = occ.shape[1]; n[2] = occ.shape[2]
    cam[0] = cx; cam[1] = cy; cam[2] = cz
    for r in range(idx.shape[0]):
        t0 = -INFINITY
        for a in range(3):
            d[a] = (<double>idx[r, a] + 0.5) - cam[a]
            inv[a] = 1.0 / d[a]
            if d[a] != 0.0:
                ta = (0.0 - cam[a]) * inv[a]
                tb = (<double>n[a] - cam[a]) * inv[a]
                tlo = ta if ta < tb else tb
                if tlo > t0:
                    t0 = tlo
        if t0 < 0.0:
            t0 = 0.0
        for a in range(3):
            s = cam[a] + t0 * d[a]
            cur[a] = <long long>floor(s)
            if cur[a] < 0:
                cur[a] = 0
            if cur[a] > n[a] - 1:
                cur[a] = n[a] - 1
            if d[a] > 0:
                step[a] = 1
                tmax[a] = (<double>(cur[a] + 1) - cam[a]) * inv[a]
                tdelta[a] = fabs(inv[a])
            elif d[a] < 0:
                step[a] = -1
                tmax[a] = (<double>cur[a] - cam[a]) * inv[a]
                tdelta[a] = fabs(inv[a])
            else:
                step[a] = 0
                tmax[a] = INFINITY
                tdelta[a] = INFINITY
        while True:
            if occ[cur[0], cur[1], cur[2]]:
                break
            free[cur[0], cur[1], cur[2]] = 1
            if tmax[0] <= tmax[1] and tmax[0] <= tmax[2]:
                ax = 0
            elif tmax[1] <= tmax[2]:
                ax = 1
            else:
                ax = 2
            tnext = tmax[ax]
            if not (tnext <= 1.0):
                break
            cur[ax] += step[ax]
            tmax[ax] += tdelta[ax]
            if cur[ax] < 0 or cur[ax] >= n[ax]:
                break


def nms_rects(rects, long long k, double delta):
    r = np.ascontiguousarray(rects, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t m = r.shape[0]
    kept = np.empty(min(k, m), dtype=np.int64)
    if m == 0 or k <= 0:
        return kept[:0].copy()
    cdef long long nk = _nms(r, k, delta, kept)
    if nk < 0:
        raise MemoryError()
    return kept[:nk].copy()


cdef long long _nms(const double[:, ::1] r, long long k, double delta, long long[::1] kept) noexcept nogil:
    # IoU >= delta bounds the center offset by (1 - delta) / delta times the candidate width,
    # so only kept rects whose center x lies in that window (kept sorted by center x) are tested.
    # Non-finite rects can never reach IoU >= delta and stay out of the index.
    cdef Py_ssize_t i, j, lo, hi, mid, n_idx = 0
    cdef long long nk = 0, q
    cdef double ai, aq, iw, ih, inter, union, iou, cx, reach
    cdef double ratio = (1.0 - delta) / delta
    cdef bint suppressed
    cdef double* sx = <double*> malloc(k * sizeof(double))
    cdef long long* si = <long long*> malloc(k * sizeof(long long))
    if sx == NULL or si == NULL:
        free(sx)
        free(si)
        return -1
    for i in range(r.shape[0]):
        if nk >= k:
            break
        ai = (r[i, 2] - r[i, 0]) * (r[i, 3] - r[i, 1])
        cx = 0.5 * (r[i, 0] + r[i, 2])
        reach = ratio * fabs(r[i, 2] - r[i, 0]) * (1.0 + 1e-9) + 1e-9 * (fabs(cx) + 1.0)
        suppressed = False
        if isfinite(cx) and isfinite(reach):
            lo = _lower_bound(sx, n_idx, cx - reach)
            j = lo
            while j < n_idx and sx[j] <= cx + reach:
                q = si[j]
                j += 1
                iw = (r[q, 2] if r[q, 2] < r[i, 2] else r[i, 2]) - (r[q, 0] if r[q, 0] > r[i, 0] else r[i, 0])
                ih = (r[q, 3] if r[q, 3] < r[i, 3] else r[i, 3]) - (r[q, 1] if r[q, 1] > r[i, 1] else r[i, 1])
                if iw > 0 and ih > 0:
                    inter = iw * ih
                else:
                    inter = 0.0
                aq = (r[q, 2] - r[q, 0]) * (r[q, 3] - r[q, 1])
                union = aq + ai - inter
                iou = inter / union if union > 0 else 0.0
                if iou >= delta:
                    suppressed = True
                    break
            if not suppressed:
                j = _lower_bound(sx, n_idx, cx)
                memmove(&sx[j + 1], &sx[j], (n_idx - j) * sizeof(double))
                memmove(&si[j + 1], &si[j], (n_idx - j) * sizeof(long long))
                sx[j] = cx
                si[j] = i
                n_idx += 1
        if not suppressed:
            kept[nk] = i
            nk += 1
    free(sx)
    free(si)
    return nk


cdef inline Py_ssize_t _lower_bound(const double* a, Py_ssize_t n, double v) noexcept nogil:
    cdef Py_ssize_t lo = 0, hi = n, mid
    while lo < hi:
        mid = (lo + hi) // 2
        if a[mid] < v:
            lo = mid + 1
        else:
            hi = mid
    return lo
