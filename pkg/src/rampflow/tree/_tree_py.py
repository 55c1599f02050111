"""Pure-numpy weighted CART kernel.

Mirrors ``_tree_ext.pyx`` operation for operation so both kernels grow
bit-identical trees: running sums are sequential (``np.cumsum``), the gain
is evaluated as ``(SL*SL)*W/(WL*WR)`` and node totals are accumulated in the
feature-0 sort order.
"""
import numpy as np

BACKEND = "python"


def build(X, y, w, order, max_depth, min_samples_leaf):
    """Grow a tree on rows with strictly positive weight.

    ``order`` is the (p, n) matrix of per-feature stable argsorts of ``X``;
    it is partitioned in place as the tree grows.

    Returns ``(feature, threshold, left, right, value, n_samples)`` with one
    entry per node; leaves have ``feature == -1``.
    """
    n, p = X.shape
    cap = 2 * n
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap, dtype=np.float64)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap, dtype=np.float64)
    n_samples = np.zeros(cap, dtype=np.int64)
    goes_left = np.zeros(n, dtype=bool)
    feat_idx = np.arange(p)[:, None]

    node_count = 1
    stack = [(0, n, 0, 0)]
    while stack:
        start, end, depth, node = stack.pop()
        m = end - start
        n_samples[node] = m
        rows0 = order[0, start:end]
        w0 = w[rows0]
        y0 = y[rows0]
        W = np.cumsum(w0)[-1]
        S = np.cumsum(w0 * y0)[-1]
        ybar = S / W
        if y0.min() == y0.max():
            value[node] = y0[0]
            continue
        value[node] = ybar
        if depth >= max_depth or m < 2 * min_samples_leaf:
            continue
        d0 = y0 - ybar
        sse = np.cumsum(w0 * (d0 * d0))[-1]

        seg = order[:, start:end]
        ws = w[seg]
        WL = np.cumsum(ws, axis=1)[:, :-1]
        SL = np.cumsum(ws * (y[seg] - ybar), axis=1)[:, :-1]
        xs = X[seg, feat_idx]
        cnt = np.arange(1, m)
        WR = W - WL
        valid = (
            (xs[:, :-1] < xs[:, 1:])
            & (cnt >= min_samples_leaf)
            & (m - cnt >= min_samples_leaf)
            & (WL > 0)
            & (WR > 0)
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = np.where(valid, (SL * SL) * W / (WL * WR), -np.inf)
        flat = int(np.argmax(gain))
        f, i = divmod(flat, m - 1)
        best = gain[f, i]
        if not (best > 0.0) or not (best > 1e-12 * sse):
            continue

        xa = xs[f, i]
        xb = xs[f, i + 1]
        thr = (xa + xb) * 0.5
        if not (xa < thr):
            thr = xb

        goes_left[seg[0]] = X[seg[0], f] < thr
        lm = goes_left[seg]
        nl = int(lm[0].sum())
        order[:, start:end] = np.concatenate(
            (seg[lm].reshape(p, nl), seg[~lm].reshape(p, m - nl)), axis=1
        )

        feature[node] = f
        threshold[node] = thr
        lc, rc = node_count, node_count + 1
        node_count += 2
        left[node] = lc
        right[node] = rc
        stack.append((start + nl, end, depth + 1, rc))
        stack.append((start, start + nl, depth + 1, lc))

    k = node_count
    return (
        feature[:k].copy(),
        threshold[:k].copy(),
        left[:k].copy(),
        right[:k].copy(),
        value[:k].copy(),
        n_samples[:k].copy(),
    )


def predict(feature, threshold, left, right, value, X):
    node = np.zeros(X.shape[0], dtype=np.int64)
    active = np.flatnonzero(feature[node] >= 0)
    while active.size:
        nd = node[active]
        go = X[active, feature[nd]] < threshold[nd]
        node[active] = np.where(go, left[nd], right[nd])
        active = active[feature[node[active]] >= 0]
    return value[node]
