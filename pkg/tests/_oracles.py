"""Straight-line reference implementations used as test oracles.

Deliberately written with plain Python loops and no shared code with the
package so that agreement is evidence of correctness.
"""
import math


def o_mean(r):
    return math.fsum(r) / len(r)


def o_variance(r):
    m = o_mean(r)
    return math.fsum((x - m) ** 2 for x in r) / (len(r) - 1)


def o_std(r):
    return math.sqrt(o_variance(r))


def o_kurtosis(r):
    m, s = o_mean(r), o_std(r)
    return math.fsum(((x - m) / s) ** 4 for x in r) / len(r) - 3.0


def o_skewness(r):
    m, s = o_mean(r), o_std(r)
    return math.fsum(((x - m) / s) ** 3 for x in r) / len(r)


def o_side_features(flow_rate, volume, speed, occupancy):
    """15 features for one side from python lists (None = missing tick)."""
    out = [flow_rate]
    for series, with_mean in ((volume, False), (speed, True), (occupancy, True)):
        r = [x for x in series if x is not None]
        if with_mean:
            out.append(o_mean(r))
        var = o_variance(r)
        out.append(var)
        out.append(math.sqrt(var))
        if var == 0.0:
            out += [0.0, 0.0]
        else:
            out += [o_kurtosis(r), o_skewness(r)]
    return out


def gauss_solve(A, b):
    """Solve A x = b by Gaussian elimination with partial pivoting."""
    n = len(A)
    M = [list(map(float, A[i])) + [float(b[i])] for i in range(n)]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(M[r][c]))
        M[c], M[p] = M[p], M[c]
        piv = M[c][c]
        for r in range(c + 1, n):
            f = M[r][c] / piv
            if f:
                for k in range(c, n + 1):
                    M[r][k] -= f * M[c][k]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        x[r] = (M[r][n] - sum(M[r][k] * x[k] for k in range(r + 1, n))) / M[r][r]
    return x


def lstsq_normal(X, y):
    """Least squares via the normal equations, solved by ``gauss_solve``."""
    n, p = len(X), len(X[0])
    A = [[sum(X[i][a] * X[i][b] for i in range(n)) for b in range(p)] for a in range(p)]
    rhs = [sum(X[i][a] * y[i] for i in range(n)) for a in range(p)]
    return gauss_solve(A, rhs)


def weighted_median_scan(preds, weights):
    """First sorted prediction whose cumulative weight reaches half the total."""
    pairs = sorted(zip(preds, weights), key=lambda t: t[0])
    total = sum(weights)
    acc = 0.0
    for p, w in pairs:
        acc += w
        if acc >= 0.5 * total:
            return p
    return pairs[-1][0]


def loop_mae(y_hat, y):
    return sum(abs(a - b) for a, b in zip(y_hat, y)) / len(y)


def loop_rmse(y_hat, y):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(y_hat, y)) / len(y))


def brute_knn(X_train, y_train, X_test, k):
    out = []
    for q in X_test:
        d = [(sum((a - b) ** 2 for a, b in zip(q, x)), j) for j, x in enumerate(X_train)]
        d.sort()
        out.append(sum(y_train[j] for _, j in d[:k]) / k)
    return out


def loop_pearson(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    num = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    da = math.sqrt(sum((x - ma) ** 2 for x in a))
    db = math.sqrt(sum((y - mb) ** 2 for y in b))
    if da == 0 or db == 0:
        return 0.0
    return num / (da * db)


def brute_best_split(X, y, w):
    """Exhaustive (feature, threshold) search maximising weighted SSE reduction."""
    def sse(idx):
        W = sum(w[i] for i in idx)
        if W == 0:
            return 0.0
        m = sum(w[i] * y[i] for i in idx) / W
        return sum(w[i] * (y[i] - m) ** 2 for i in idx)

    rows = list(range(len(y)))
    parent = sse(rows)
    best = None
    for f in range(len(X[0])):
        vals = sorted(set(X[i][f] for i in rows))
        for lo, hi in zip(vals, vals[1:]):
            thr = (lo + hi) / 2.0
            left = [i for i in rows if X[i][f] < thr]
            right = [i for i in rows if X[i][f] >= thr]
            gain = parent - sse(left) - sse(right)
            if best is None or gain > best[0] + 1e-9 * max(1.0, abs(best[0])):
                best = (gain, f, thr)
    return best
