# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled weighted CART kernel.

Same arithmetic, in the same order, as ``_tree_py``; the two kernels are
tested for bit-identical output. The whole build runs without the GIL so
independent fits can share a thread pool.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def build(const double[:, ::1] X, const double[::1] y, const double[::1] w,
          cnp.int64_t[:, ::1] order, int max_depth, int min_samples_leaf):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t p = X.shape[1]
    cdef Py_ssize_t cap = 2 * n

    feature_a = np.full(cap, -1, dtype=np.int64)
    threshold_a = np.zeros(cap, dtype=np.float64)
    left_a = np.full(cap, -1, dtype=np.int64)
    right_a = np.full(cap, -1, dtype=np.int64)
    value_a = np.zeros(cap, dtype=np.float64)
    nsamp_a = np.zeros(cap, dtype=np.int64)
    goes_left_a = np.zeros(n, dtype=np.uint8)
    buf_a = np.zeros(n, dtype=np.int64)
    # stack entries: start, end, depth, node
    stack_a = np.zeros((cap + 1, 4), dtype=np.int64)

    cdef cnp.int64_t[::1] feature = feature_a
    cdef double[::1] threshold = threshold_a
    cdef cnp.int64_t[::1] left = left_a
    cdef cnp.int64_t[::1] right = right_a
    cdef double[::1] value = value_a
    cdef cnp.int64_t[::1] nsamp = nsamp_a
    cdef unsigned char[::1] goes_left = goes_left_a
    cdef cnp.int64_t[::1] buf = buf_a
    cdef cnp.int64_t[:, ::1] stack = stack_a

    cdef Py_ssize_t top = 0
    cdef Py_ssize_t node_count = 1
    cdef Py_ssize_t start, end, depth, node, m, i, f, r, cnt, nl, a, b
    cdef Py_ssize_t best_f, best_i
    cdef double W, S, ybar, sse, d, ymin, ymax, yv
    cdef double WL, SL, WR, gain, best_gain, xa, xb, thr

    with nogil:
        stack[0, 0] = 0
        stack[0, 1] = n
        stack[0, 2] = 0
        stack[0, 3] = 0
        top = 1
        while top > 0:
            top -= 1
            start = stack[top, 0]
            end = stack[top, 1]
            depth = stack[top, 2]
            node = stack[top, 3]
            m = end - start
            nsamp[node] = m

            W = 0.0
            S = 0.0
            r = order[0, start]
            ymin = y[r]
            ymax = y[r]
            for i in range(start, end):
                r = order[0, i]
                W += w[r]
                S += w[r] * y[r]
                yv = y[r]
                if yv < ymin:
                    ymin = yv
                if yv > ymax:
                    ymax = yv
            ybar = S / W
            if ymin == ymax:
                value[node] = y[order[0, start]]
                continue
            value[node] = ybar
            if depth >= max_depth or m < 2 * min_samples_leaf:
                continue
            sse = 0.0
            for i in range(start, end):
                r = order[0, i]
                d = y[r] - ybar
                sse += w[r] * (d * d)

            best_f = -1
            best_i = -1
            best_gain = 0.0
            for f in range(p):
                WL = 0.0
                SL = 0.0
                for i in range(start, end - 1):
                    r = order[f, i]
                    WL += w[r]
                    SL += w[r] * (y[r] - ybar)
                    cnt = i - start + 1
                    if cnt < min_samples_leaf:
                        continue
                    if m - cnt < min_samples_leaf:
                        break
                    if X[r, f] < X[order[f, i + 1], f]:
                        WR = W - WL
                        if WL > 0.0 and WR > 0.0:
                            gain = (SL * SL) * W / (WL * WR)
                            if gain > best_gain:
                                best_gain = gain
                                best_f = f
                                best_i = i
            if best_f < 0 or not (best_gain > 1e-12 * sse):
                continue

            xa = X[order[best_f, best_i], best_f]
            xb = X[order[best_f, best_i + 1], best_f]
            thr = (xa + xb) * 0.5
            if not (xa < thr):
                thr = xb

            nl = 0
            for i in range(start, end):
                r = order[0, i]
                if X[r, best_f] < thr:
                    goes_left[r] = 1
                    nl += 1
                else:
                    goes_left[r] = 0
            for f in range(p):
                a = start
                b = 0
                for i in range(start, end):
                    r = order[f, i]
                    if goes_left[r]:
                        order[f, a] = r
                        a += 1
                    else:
                        buf[b] = r
                        b += 1
                for i in range(b):
                    order[f, a + i] = buf[i]

            feature[node] = best_f
            threshold[node] = thr
            left[node] = node_count
            right[node] = node_count + 1
            stack[top, 0] = start + nl
            stack[top, 1] = end
            stack[top, 2] = depth + 1
            stack[top, 3] = node_count + 1
            stack[top + 1, 0] = start
            stack[top + 1, 1] = start + nl
            stack[top + 1, 2] = depth + 1
            stack[top + 1, 3] = node_count
            top += 2
            node_count += 2

    k = node_count
    return (feature_a[:k].copy(), threshold_a[:k].copy(), left_a[:k].copy(),
            right_a[:k].copy(), value_a[:k].copy(), nsamp_a[:k].copy())


def predict(const cnp.int64_t[::1] feature, const double[::1] threshold,
            const cnp.int64_t[::1] left, const cnp.int64_t[::1] right,
            const double[::1] value, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0]
    out_a = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_a
    cdef Py_ssize_t i, node
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i] = value[node]
    return out_a
