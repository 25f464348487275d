"""Brute-force reference implementations, written independently of the package.

KS and KR use exact rational arithmetic on the eCDFs; ES is a plain-loop
transcription of the Epps-Singleton statistic; JS is the textbook formula on
hand-binned counts.
"""
from __future__ import annotations

import math
from bisect import bisect_right
from fractions import Fraction


def _ecdf(sorted_sample, x) -> Fraction:
    return Fraction(bisect_right(sorted_sample, x), len(sorted_sample))


def ks_oracle(f, g) -> float:
    f, g = sorted(f), sorted(g)
    points = sorted(set(f) | set(g))
    return float(max(abs(_ecdf(f, x) - _ecdf(g, x)) for x in points))


def kr_oracle(f, g) -> float:
    # exact piecewise integral: the gap is constant on [x_i, x_{i+1})
    f, g = sorted(f), sorted(g)
    points = sorted(set(f) | set(g))
    total = Fraction(0)
    for a, b in zip(points, points[1:]):
        total += abs(_ecdf(f, a) - _ecdf(g, a)) * (Fraction(b) - Fraction(a))
    return float(total)


def _percentile(sorted_vals, q):
    # linear interpolation between closest ranks
    pos = (len(sorted_vals) - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, len(sorted_vals) - 1)
    return sorted_vals[lo] + (sorted_vals[hi] - sorted_vals[lo]) * (pos - lo)


def _solve(a, b):
    """Solve a x = b by Gaussian elimination with partial pivoting."""
    n = len(a)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for c in range(n):
        p = max(range(c, n), key=lambda r: abs(m[r][c]))
        m[c], m[p] = m[p], m[c]
        for r in range(n):
            if r != c:
                k = m[r][c] / m[c][c]
                for j in range(c, n + 1):
                    m[r][j] -= k * m[c][j]
    return [m[i][n] / m[i][i] for i in range(n)]


def es_oracle(f, g, t=(0.4, 0.8), correction=True) -> float:
    """Epps-Singleton W^2 with a full-rank covariance assumed."""
    nx, ny = len(f), len(g)
    n = nx + ny
    pooled = sorted(list(f) + list(g))
    scale = (_percentile(pooled, 0.75) - _percentile(pooled, 0.25)) / 2
    ts = [ti / scale for ti in t]

    def g_vec(v):
        return [math.cos(ti * v) for ti in ts] + [math.sin(ti * v) for ti in ts]

    def moments(sample):
        rows = [g_vec(v) for v in sample]
        k = len(rows[0])
        mean = [sum(r[j] for r in rows) / len(rows) for j in range(k)]
        cov = [[sum((r[i] - mean[i]) * (r[j] - mean[j]) for r in rows) / len(rows) for j in range(k)] for i in range(k)]
        return mean, cov

    mx, cx = moments(f)
    my, cy = moments(g)
    k = len(mx)
    cov = [[n / nx * cx[i][j] + n / ny * cy[i][j] for j in range(k)] for i in range(k)]
    d = [mx[i] - my[i] for i in range(k)]
    w = n * sum(di * si for di, si in zip(d, _solve(cov, d)))
    if correction and max(nx, ny) < 25:
        w /= 1 + n ** -0.45 + 10.1 * (nx ** -1.7 + ny ** -1.7)
    return w


def hist10(scores):
    # bin k is [k/10, (k+1)/10); 1.0 joins the last bin
    counts = [0] * 10
    for s in scores:
        k = max(j for j in range(10) if s >= j / 10)
        counts[k] += 1
    total = sum(counts)
    return [c / total for c in counts]


def js_oracle(p, q, eps=1e-9) -> float:
    p = [v + eps for v in p]
    q = [v + eps for v in q]
    sp, sq = sum(p), sum(q)
    p = [v / sp for v in p]
    q = [v / sq for v in q]
    m = [(a + b) / 2 for a, b in zip(p, q)]
    kl = lambda a, b: sum(x * math.log2(x / y) for x, y in zip(a, b) if x > 0)
    return math.sqrt((kl(p, m) + kl(q, m)) / 2)


def macro_accuracy_oracle(pred, true):
    by_class = {}
    for p, t in zip(pred, true):
        hit, tot = by_class.get(t, (0, 0))
        by_class[t] = (hit + (p == t), tot + 1)
    return sum(h / n for h, n in by_class.values()) / len(by_class)
