"""Pure-Python pixel kernels.

Reference implementations of the routines in ``_ccl.pyx``. They are used when
the compiled extension is unavailable or when ``MGAN_PURE_KERNELS=1``.
"""

from collections import deque

import numpy as np

_NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def label8(mask):
    """Label 8-connected foreground components.

    Labels start at 1 and follow the raster order of each component's first
    pixel. Returns ``(labels, n)``.
    """
    mask = np.ascontiguousarray(mask, dtype=np.uint8)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    m = mask.tolist()
    out = labels.tolist()
    n = 0
    for r in range(h):
        for c in range(w):
            if not m[r][c] or out[r][c]:
                continue
            n += 1
            out[r][c] = n
            queue = deque([(r, c)])
            while queue:
                y, x = queue.popleft()
                for dy, dx in _NEIGHBOURS:
                    yy, xx = y + dy, x + dx
                    if 0 <= yy < h and 0 <= xx < w and m[yy][xx] and not out[yy][xx]:
                        out[yy][xx] = n
                        queue.append((yy, xx))
    labels[:] = out
    return labels, n


def local_maxima(values, floor):
    """Boolean map of pixels >= all 8 neighbours and strictly above ``floor``."""
    v = np.ascontiguousarray(values, dtype=np.float64)
    h, w = v.shape
    vals = v.tolist()
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            x = vals[r][c]
            if not x > floor:
                continue
            ok = True
            for dy, dx in _NEIGHBOURS:
                yy, xx = r + dy, c + dx
                if 0 <= yy < h and 0 <= xx < w and vals[yy][xx] > x:
                    ok = False
                    break
            if ok:
                out[r, c] = True
    return out


def grow_from_seeds(values, seed_rows, seed_cols, thresholds):
    """Union of 8-connected regions ``{v >= thr}`` grown from each seed.

    Each seed is grown independently with its own threshold.
    """
    v = np.ascontiguousarray(values, dtype=np.float64)
    h, w = v.shape
    vals = v.tolist()
    result = np.zeros((h, w), dtype=np.uint8)
    for sr, sc, thr in zip(seed_rows, seed_cols, thresholds):
        sr, sc, thr = int(sr), int(sc), float(thr)
        if not vals[sr][sc] >= thr:
            continue
        seen = {(sr, sc)}
        queue = deque([(sr, sc)])
        while queue:
            y, x = queue.popleft()
            result[y, x] = 1
            for dy, dx in _NEIGHBOURS:
                yy, xx = y + dy, x + dx
                if (0 <= yy < h and 0 <= xx < w and (yy, xx) not in seen
                        and vals[yy][xx] >= thr):
                    seen.add((yy, xx))
                    queue.append((yy, xx))
    return result


def overlap_counts(labels_a, n_a, labels_b, n_b):
    """Contingency table ``T[i, j]`` = pixels with label i in a and j in b."""
    a = np.asarray(labels_a).ravel().tolist()
    b = np.asarray(labels_b).ravel().tolist()
    table = [[0] * (n_b + 1) for _ in range(n_a + 1)]
    for i, j in zip(a, b):
        table[i][j] += 1
    return np.array(table, dtype=np.int64)
