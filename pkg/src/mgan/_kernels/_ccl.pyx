# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled pixel kernels: 8-connected labelling, seeded region growing,
local maxima and label overlap tables."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef int DY[8]
cdef int DX[8]
DY[:] = [-1, -1, -1, 0, 0, 1, 1, 1]
DX[:] = [-1, 0, 1, -1, 1, -1, 0, 1]


def label8(mask):
    cdef cnp.uint8_t[:, ::1] m = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    labels_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out = labels_arr
    stack_arr = np.empty(h * w if h * w > 0 else 1, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef Py_ssize_t r, c, y, x, yy, xx, top, p
    cdef int k
    cdef cnp.int32_t n = 0
    for r in range(h):
        for c in range(w):
            if m[r, c] == 0 or out[r, c] != 0:
                continue
            n += 1
            out[r, c] = n
            top = 0
            stack[top] = r * w + c
            top += 1
            while top > 0:
                top -= 1
                p = stack[top]
                y = p // w
                x = p - y * w
                for k in range(8):
                    yy = y + DY[k]
                    xx = x + DX[k]
                    if yy < 0 or yy >= h or xx < 0 or xx >= w:
                        continue
                    if m[yy, xx] != 0 and out[yy, xx] == 0:
                        out[yy, xx] = n
                        stack[top] = yy * w + xx
                        top += 1
    return labels_arr, int(n)


def local_maxima(values, double floor):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t h = v.shape[0], w = v.shape[1]
    out_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, yy, xx
    cdef int k
    cdef double x
    cdef bint ok
    for r in range(h):
        for c in range(w):
            x = v[r, c]
            if not x > floor:
                continue
            ok = True
            for k in range(8):
                yy = r + DY[k]
                xx = c + DX[k]
                if yy < 0 or yy >= h or xx < 0 or xx >= w:
                    continue
                if v[yy, xx] > x:
                    ok = False
                    break
            if ok:
                out[r, c] = 1
    return out_arr.astype(bool)


def grow_from_seeds(values, seed_rows, seed_cols, thresholds):
    cdef double[:, ::1] v = np.ascontiguousarray(values, dtype=np.float64)
    cdef Py_ssize_t h = v.shape[0], w = v.shape[1]
    cdef Py_ssize_t[::1] rows = np.ascontiguousarray(seed_rows, dtype=np.intp)
    cdef Py_ssize_t[::1] cols = np.ascontiguousarray(seed_cols, dtype=np.intp)
    cdef double[::1] thr = np.ascontiguousarray(thresholds, dtype=np.float64)
    result_arr = np.zeros((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] result = result_arr
    # per-seed visit stamps avoid clearing a visited map for every seed
    cdef cnp.int64_t[:, ::1] stamp = np.zeros((h, w), dtype=np.int64)
    stack_arr = np.empty(h * w if h * w > 0 else 1, dtype=np.intp)
    cdef Py_ssize_t[::1] stack = stack_arr
    cdef Py_ssize_t s, y, x, yy, xx, top, p
    cdef int k
    cdef double t
    for s in range(rows.shape[0]):
        y = rows[s]
        x = cols[s]
        t = thr[s]
        if not v[y, x] >= t:
            continue
        stamp[y, x] = s + 1
        top = 0
        stack[top] = y * w + x
        top += 1
        while top > 0:
            top -= 1
            p = stack[top]
            y = p // w
            x = p - y * w
            result[y, x] = 1
            for k in range(8):
                yy = y + DY[k]
                xx = x + DX[k]
                if yy < 0 or yy >= h or xx < 0 or xx >= w:
                    continue
                if stamp[yy, xx] != s + 1 and v[yy, xx] >= t:
                    stamp[yy, xx] = s + 1
                    stack[top] = yy * w + xx
                    top += 1
    return result_arr


def overlap_counts(labels_a, Py_ssize_t n_a, labels_b, Py_ssize_t n_b):
    cdef cnp.int32_t[::1] a = np.ascontiguousarray(labels_a, dtype=np.int32).ravel()
    cdef cnp.int32_t[::1] b = np.ascontiguousarray(labels_b, dtype=np.int32).ravel()
    table_arr = np.zeros((n_a + 1, n_b + 1), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] table = table_arr
    cdef Py_ssize_t i
    for i in range(a.shape[0]):
        table[a[i], b[i]] += 1
    return table_arr
